"""Command-line entry points.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, corpus, dsp, gradcheck, pgm, text
from .networks import SSRN, Text2Mel
from .synthesis import SynthesisConfig, attention_trend, synthesize_mel, synthesize_waveform
from .training import (
    NonFiniteLossError,
    SSRNTrainer,
    Text2MelTrainer,
    TrainConfig,
    ensure_parent,
    make_batch,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_MAX_ITERS = 10000

log = logging.getLogger("dctts")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# --- argument helpers -------------------------------------------------------


def _add_train_args(p: argparse.ArgumentParser):
    p.add_argument("--cache", help=f"feature cache dir (default: ${corpus.CACHE_ENV})")
    p.add_argument("--out", required=True, help="checkpoint path, written every snapshot and at the end")
    p.add_argument("--config", help="JSON file of TrainConfig fields; flags below override it")
    p.add_argument("--resume", nargs="?", const=True, default=None, metavar="CKPT",
                   help="continue from CKPT (default: --out) including ADAM state and iteration count")
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS,
                   help=f"total iteration count to reach (default: {DEFAULT_MAX_ITERS})")
    p.add_argument("--log", help="CSV training log (default: <out>.log)")
    p.add_argument("--ids", help="file of clip ids to train on (default: whole cache index)")
    defaults = TrainConfig()
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        if f.type in ("bool", bool):
            p.add_argument(flag, type=_parse_bool, metavar="{true,false}",
                           help=f"TrainConfig.{f.name} (default: {default})")
        else:
            conv = int if isinstance(default, int) else float
            p.add_argument(flag, type=conv, help=f"TrainConfig.{f.name} (default: {default})")


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {s!r}")


def train_config_from_args(args) -> TrainConfig:
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise corpus.CorpusError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise corpus.CorpusError(f"{args.config}: expected a JSON object")
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def synth_config_from_args(args) -> SynthesisConfig:
    return SynthesisConfig(
        max_T=args.max_frames,
        use_incremental_attention=not args.no_incremental_attention,
        stop_energy_threshold=args.stop_threshold,
        stop_lookback=args.stop_lookback,
        cached=args.cached,
    )


def _read_ids(path):
    if path is None:
        return None
    return [s.strip() for s in Path(path).read_text(encoding="utf-8").splitlines() if s.strip()]


def _cache_arg(value, fallback=None):
    if value:
        return Path(value)
    cache = corpus.cache_dir(fallback or "")
    if not str(cache) or str(cache) == ".":
        raise UsageError(f"no cache directory: pass --cache or set {corpus.CACHE_ENV}")
    return cache


def _load_model(kind, path, dtype=np.float32):
    if not Path(path).is_file():
        raise checkpoint.CheckpointError(f"missing checkpoint {path}")
    hp = checkpoint.read_hparams(path)
    model = Text2Mel(hp, dtype=dtype) if kind == "t2m" else SSRN(hp, dtype=dtype)
    checkpoint.restore(model, path)
    return model


def _text_ids(args) -> np.ndarray:
    if args.text is not None:
        raw = args.text
    else:
        raw = Path(args.text_file).read_text(encoding="utf-8")
    ids = text.encode(text.normalize_text(raw))
    if ids.size == 0:
        raise text.TextError("text is empty after normalization")
    return ids


# --- subcommands -------------------------------------------------------------


def cmd_preprocess(args) -> int:
    meta = Path(args.metadata)
    records = corpus.load_corpus(meta, args.wav_dir)
    out = _cache_arg(args.cache, meta.parent / "cache")
    corpus.preprocess(records, out, workers=args.workers)
    print(f"preprocessed {len(records)} clips into {out}")
    return EXIT_OK


def _train(args, kind) -> int:
    cfg = train_config_from_args(args)
    examples = corpus.load_cache(_cache_arg(args.cache), _read_ids(args.ids))
    if not examples:
        raise corpus.CorpusError("no training examples")
    hp = cfg.hparams
    model = Text2Mel(hp, cfg.seed) if kind == "t2m" else SSRN(hp, cfg.seed)
    start = 0
    if args.resume:
        src = args.out if args.resume is True else args.resume
        start = checkpoint.restore(model, src)
        print(f"resumed {src} at iteration {start}")
    trainer = Text2MelTrainer(model, cfg) if kind == "t2m" else SSRNTrainer(model, cfg)
    ensure_parent(args.out)
    report = train(trainer, examples, args.max_iters, start_iter=start,
                   log_path=args.log or f"{args.out}.log", ckpt_path=args.out)
    if report is None:
        print(f"nothing to do: checkpoint already at iteration {start} >= --max-iters {args.max_iters}")
    else:
        print(f"iteration {args.max_iters}: {_report_str(report)}")
    return EXIT_OK


def _report_str(r) -> str:
    return f"total={r.total:.6f} l1={r.l1:.6f} bin={r.bin_div:.6f} att={r.attention:.6f}"


def cmd_synth(args) -> int:
    ids = _text_ids(args)
    t2m = _load_model("t2m", args.t2m)
    ssrn = _load_model("ssrn", args.ssrn)
    res = synthesize_mel(t2m, ids, synth_config_from_args(args))
    wav = synthesize_waveform(res.mel, ssrn)
    ensure_parent(args.out)
    dsp.write_wav(args.out, wav)
    if args.attention:
        pgm.write_pgm(args.attention, res.attention)
    print(f"wrote {args.out}: {res.mel.shape[1]} mel frames, {wav.size} samples, "
          f"attention trend {attention_trend(res.positions):.3f}")
    return EXIT_OK


def cmd_plot_attention(args) -> int:
    ids = _text_ids(args)
    t2m = _load_model("t2m", args.t2m)
    res = synthesize_mel(t2m, ids, synth_config_from_args(args))
    ensure_parent(args.out)
    pgm.write_pgm(args.out, res.attention)
    print(f"wrote {args.out}: {res.attention.shape[0]} x {res.attention.shape[1]}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    dtype = np.dtype(args.dtype)
    results = gradcheck.run(dtype, shapes=args.shapes, seed=args.seed)
    tol = gradcheck.TOLERANCE[dtype]
    ok = True
    for r in results:
        status = "ok" if r.passed(dtype) else "FAIL"
        ok &= r.passed(dtype)
        print(f"{r.op:<24} max_rel_err={r.max_error:.3e}  tol={tol:.0e}  shapes={r.shapes}  {status}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_eval_loss(args) -> int:
    if bool(args.t2m) == bool(args.ssrn):
        raise UsageError("eval-loss: pass exactly one of --t2m or --ssrn")
    kind = "t2m" if args.t2m else "ssrn"
    model = _load_model(kind, args.t2m or args.ssrn)
    examples = corpus.load_cache(_cache_arg(args.cache), _read_ids(args.ids))
    if not examples:
        raise corpus.CorpusError("no examples to evaluate")
    cfg = TrainConfig(e=model.hp.e, d=model.hp.d, c=model.hp.c)
    trainer = Text2MelTrainer(model, cfg) if kind == "t2m" else SSRNTrainer(model, cfg)
    sums = np.zeros(4)
    for i in range(0, len(examples), args.batch_size):
        chunk = examples[i:i + args.batch_size]
        r = trainer.evaluate(make_batch(chunk))
        sums += len(chunk) * np.array([r.l1, r.bin_div, r.attention, r.total])
    mean = sums / len(examples)
    if not np.all(np.isfinite(mean)):
        raise FloatingPointError(f"non-finite evaluation loss {mean}")
    print(json.dumps({"examples": len(examples), "l1": mean[0], "bin_div": mean[1],
                      "attention": mean[2], "total": mean[3]}))
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_synth_args(p, need_ssrn: bool):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="sentence to speak")
    src.add_argument("--text-file", help="UTF-8 file holding the sentence")
    p.add_argument("--t2m", required=True, help="Text2Mel checkpoint")
    if need_ssrn:
        p.add_argument("--ssrn", required=True, help="SSRN checkpoint")
    d = SynthesisConfig()
    p.add_argument("--max-frames", type=int, default=d.max_T, help=f"mel frame limit (default: {d.max_T})")
    p.add_argument("--no-incremental-attention", action="store_true",
                   help="disable the -1..+3 characters-per-frame attention constraint")
    p.add_argument("--stop-threshold", type=float, default=d.stop_energy_threshold,
                   help=f"mean mel energy below which a frame counts as silent (default: {d.stop_energy_threshold})")
    p.add_argument("--stop-lookback", type=int, default=d.stop_lookback,
                   help=f"silent frames needed to stop once the last character is reached (default: {d.stop_lookback})")
    p.add_argument("--cached", action="store_true",
                   help="streaming decoder with per-layer history instead of re-running the prefix")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dctts", description="Convolutional text-to-speech: preprocessing, training, synthesis.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="compute mel/linear targets for an LJSpeech-format corpus")
    p.add_argument("--metadata", required=True, help="metadata.csv with id|raw|normalized lines")
    p.add_argument("--wav-dir", help="directory of <id>.wav files (default: <metadata dir>/wavs)")
    p.add_argument("--cache", help=f"output dir (default: ${corpus.CACHE_ENV} or <metadata dir>/cache)")
    p.add_argument("--workers", type=int, default=1, help="parallel processes (default: 1)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-t2m", help="train Text2Mel with teacher forcing")
    _add_train_args(p)
    p.set_defaults(func=lambda a: _train(a, "t2m"))

    p = sub.add_parser("train-ssrn", help="train SSRN on random mel crops")
    _add_train_args(p)
    p.set_defaults(func=lambda a: _train(a, "ssrn"))

    p = sub.add_parser("synth", help="text to WAV")
    _add_synth_args(p, need_ssrn=True)
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--attention", help="also write the attention matrix as a PGM image")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plot-attention", help="write the synthesis attention matrix as an 8-bit PGM")
    _add_synth_args(p, need_ssrn=False)
    p.add_argument("--out", required=True, help="output .pgm path")
    p.set_defaults(func=cmd_plot_attention)

    p = sub.add_parser("gradcheck", help="finite-difference check of every autodiff op")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32",
                   help="float32 (tolerance 1e-2) or float64 verification mode (1e-5); default float32")
    p.add_argument("--shapes", type=int, default=20, help="random shapes per op (default: 20)")
    p.add_argument("--seed", type=int, default=0, help="shape/value seed (default: 0)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval-loss", help="mean losses of a checkpoint over held-out clips")
    p.add_argument("--t2m", help="Text2Mel checkpoint")
    p.add_argument("--ssrn", help="SSRN checkpoint")
    p.add_argument("--cache", help=f"feature cache dir (default: ${corpus.CACHE_ENV})")
    p.add_argument("--ids", help="file of held-out clip ids (default: whole cache index)")
    p.add_argument("--batch-size", type=int, default=16, help="examples per evaluation batch (default: 16)")
    p.set_defaults(func=cmd_eval_loss)
    return parser


DATA_ERRORS = (corpus.CorpusError, checkpoint.CheckpointError, dsp.DSPError, text.TextError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dctts: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"dctts: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"dctts: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
