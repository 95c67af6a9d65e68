"""Build the optional compiled kernels.

The package works without them: ``dctts.kernels`` falls back to numpy when
``dctts._ckernels`` cannot be imported.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DCTTS_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "dctts._ckernels",
                    ["src/dctts/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no-trapping-math lets gcc if-convert and vectorize the sigmoid loop
                    extra_compile_args=["-O3", "-fno-trapping-math"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
