"""Command-line experiment runner.

Exit codes: 0 success, 1 configuration or input error, 2 trend or check failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import coder
from .checks import run_checks
from .config import Experiment, load_config
from .errors import BayesMixError
from .experiments import bound_series, fmt, run_counterexample, run_redundancy

EXIT_OK, EXIT_CONFIG, EXIT_TREND = 0, 1, 2


def _round(obj):
    """Round every float to 12 significant digits for JSON output."""
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def _dump(obj) -> str:
    return json.dumps(_round(obj), indent=2, sort_keys=False) + "\n"


def _write(out_dir, name, text):
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _config(args):
    return load_config(args.config, seed=args.seed, threads=args.threads)


def cmd_redundancy(args):
    cfg = _config(args)
    run = run_redundancy(cfg)
    csv = run.csv()
    _write(args.out, cfg.output.csv, csv)
    gap = {"slope": run.gap.slope, "gaps": run.gap.gaps, "monotone_tail": run.gap.monotone_tail}
    _write(args.out, cfg.output.gap, _dump(gap))
    sys.stdout.write(csv)
    sys.stdout.write(f"slope {fmt(run.gap.slope)} monotone_tail {run.gap.monotone_tail}\n")
    if not run.trend_ok:
        sys.stderr.write("trend criterion failed\n")
        return EXIT_TREND
    return EXIT_OK


def cmd_bound(args):
    cfg = _config(args)
    reports = [b.__dict__ for b in bound_series(cfg)]
    text = _dump(reports)
    _write(args.out, cfg.output.bounds, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gap(args):
    cfg = _config(args)
    run = run_redundancy(cfg)
    gap = {"slope": run.gap.slope, "gaps": run.gap.gaps, "monotone_tail": run.gap.monotone_tail}
    text = _dump(gap)
    _write(args.out, cfg.output.gap, text)
    sys.stdout.write(text)
    return EXIT_OK if run.trend_ok else EXIT_TREND


def cmd_counterexample(args):
    cfg = _config(args)
    run = run_counterexample(cfg)
    csv = run.csv()
    _write(args.out, cfg.output.csv, csv)
    _write(args.out, cfg.output.gap, _dump({"statistic": run.statistic, "flag": run.flag}))
    sys.stdout.write(csv)
    sys.stdout.write(f"flag {run.flag}\n")
    expect = cfg.trend.expect
    return EXIT_TREND if expect is not None and expect != run.flag else EXIT_OK


def _codec(cfg):
    exp = Experiment(cfg)
    k = exp.mixture().alphabet_size
    if k not in (2, 256):
        raise BayesMixError(f"compression needs a binary or 256-symbol model, got alphabet {k}")
    return exp.mixture, k


def _to_symbols(data: bytes, k):
    if k == 256:
        return list(data)
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8)).tolist()


def _from_symbols(symbols, k) -> bytes:
    if k == 256:
        return bytes(symbols)
    if len(symbols) % 8:
        raise BayesMixError("decoded bit count is not a whole number of bytes")
    return np.packbits(np.asarray(symbols, dtype=np.uint8)).tobytes()


def cmd_compress(args):
    cfg = _config(args)
    factory, k = _codec(cfg)
    symbols = _to_symbols(Path(args.input).read_bytes(), k)
    res = coder.encode_detailed(factory, symbols)
    Path(args.output).write_bytes(res.stream.to_bytes())
    sys.stdout.write(f"symbols {len(symbols)} payload_bits {res.stream.bit_length} "
                     f"model_bits {fmt(res.model_log2)}\n")
    return EXIT_OK


def cmd_decompress(args):
    cfg = _config(args)
    factory, k = _codec(cfg)
    symbols = coder.decode(factory, Path(args.input).read_bytes())
    Path(args.output).write_bytes(_from_symbols(symbols, k))
    sys.stdout.write(f"symbols {len(symbols)}\n")
    return EXIT_OK


def cmd_check(args):
    results = run_checks()
    for r in results:
        sys.stdout.write(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_TREND


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment JSON (a path or the name of a bundled config)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads (results do not depend on it)")
        return p

    for name, fn in [("redundancy", cmd_redundancy), ("bound", cmd_bound), ("gap", cmd_gap),
                     ("counterexample", cmd_counterexample)]:
        common(sub.add_parser(name)).set_defaults(fn=fn)
    for name, fn in [("compress", cmd_compress), ("decompress", cmd_decompress)]:
        p = common(sub.add_parser(name))
        p.add_argument("input")
        p.add_argument("output")
        p.set_defaults(fn=fn)
    common(sub.add_parser("check"), config_required=False).set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (BayesMixError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
