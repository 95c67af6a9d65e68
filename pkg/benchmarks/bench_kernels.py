"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N] [--quick]

Prints median wall time per call for each kernel and the speedup of the
compiled backend. Shapes follow the full-size networks (d=256, 2d=512) and
the reduced test dims (d=64). The last row times a whole Text2Mel training
step (e=32, d=64, batch 8) with each backend selected at import.
"""
import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from dctts import _pykernels as py

try:
    from dctts import _ckernels as cx
except ImportError:
    cx = None


def _time(fn, repeat):
    fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def cases(quick):
    rng = np.random.default_rng(0)
    dims = [(8, 64, 20)] if quick else [(8, 64, 20), (16, 256, 64)]
    for B, C, T in dims:
        x = rng.standard_normal((B, C, T)).astype(np.float32)
        h = rng.standard_normal((B, 2 * C, T)).astype(np.float32)
        w = (rng.standard_normal((2 * C, C, 3)) * 0.1).astype(np.float32)
        b = np.zeros(2 * C, np.float32)
        gout = rng.standard_normal((B, 2 * C, T)).astype(np.float32)
        out, gate = py.highway_forward(x, h)
        tag = f"B={B} C={C} T={T}"
        yield f"conv1d_forward   k=3 d=9 {tag}", lambda k: k.conv1d_forward(x, w, b, 9, 18)
        yield f"conv1d_backward  k=3 d=9 {tag}", lambda k: k.conv1d_backward(gout, x, w, 9, 18)
        yield f"highway_forward  {tag}", lambda k: k.highway_forward(x, h)
        yield f"highway_backward {tag}", lambda k: k.highway_backward(out, x, h, gate)
    n = 1_500_000 if quick else 24_000_000
    value = rng.standard_normal(n).astype(np.float32)
    grad = rng.standard_normal(n).astype(np.float32)
    m, v = np.zeros_like(value), np.zeros_like(value)
    yield f"adam_update      n={n}", lambda k: k.adam_update(value, grad, m, v, 2e-4, 0.5, 0.9, 1e-6, 3)


STEP_SNIPPET = """
import time, statistics, numpy as np
from dctts.networks import Text2Mel
from dctts.training import Example, TrainConfig, Text2MelTrainer, make_batch
rng = np.random.default_rng(0)
ex = [Example(str(i), rng.integers(2, 28, 12), rng.random((80, 25), np.float32),
              rng.random((513, 100), np.float32)) for i in range(8)]
cfg = TrainConfig(e=32, d=64, c=64, batch_size=8)
tr = Text2MelTrainer(Text2Mel(cfg.hparams), cfg)
b = make_batch(ex)
tr.step(b)
ts = []
for _ in range({repeat}):
    t0 = time.perf_counter(); tr.step(b); ts.append(time.perf_counter() - t0)
print(statistics.median(ts))
"""


def step_time(pure: bool, repeat: int) -> float:
    env = dict(os.environ)
    if pure:
        env["DCTTS_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--quick", action="store_true", help="reduced dims only")
    args = ap.parse_args()
    if cx is None:
        print("compiled backend not built; timing numpy only")
    print(f"{'kernel':<44}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for name, call in cases(args.quick):
        t_py = _time(lambda: call(py), args.repeat)
        if cx is None:
            print(f"{name:<44}{t_py * 1e3:>10.3f}")
            continue
        t_cx = _time(lambda: call(cx), args.repeat)
        print(f"{name:<44}{t_py * 1e3:>10.3f}{t_cx * 1e3:>13.3f}{t_py / t_cx:>8.1f}x")
    name = "Text2Mel training step e=32 d=64 B=8"
    t_py = step_time(True, args.repeat)
    if cx is None:
        print(f"{name:<44}{t_py * 1e3:>10.3f}")
    else:
        t_cx = step_time(False, args.repeat)
        print(f"{name:<44}{t_py * 1e3:>10.3f}{t_cx * 1e3:>13.3f}{t_py / t_cx:>8.1f}x")


if __name__ == "__main__":
    main()
