"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .config import RunConfig, default_output_root, load_config
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyGallery,
    InsufficientClasses,
    MissingProxy,
    NonFiniteInput,
    NormUnderflow,
    ParseError,
    UnknownParam,
    ValidationError,
)
from .training import config_hash, load_checkpoint

EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3, 4

log = logging.getLogger("intrarank")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set tau=32 --set hidden=[64,64]")
    p.add_argument("--data", help="'bundled', 'synthetic' or a feature CSV path")
    p.add_argument("--split", dest="split_path", help="sidecar file listing test class ids")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda", dest="lambda_mix", type=float)


def _config_from_args(args) -> RunConfig:
    overrides = list(args.overrides)
    for flag, key in [("data", "dataset"), ("split_path", "split_path"), ("seed", "seed"),
                      ("epochs", "epochs"), ("lambda_mix", "lambda_mix")]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return load_config(args.config, overrides)


def _out_dir(args, cfg: RunConfig, kind: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return default_output_root() / f"{kind}-{config_hash(cfg.to_dict())}"


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, cfg, "train")
    result = runner.run_train(cfg, out)
    print(result.report.to_json())
    print(f"run directory: {out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    params, _, saved = load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(saved)
    if args.data:
        cfg.dataset = args.data
    if args.split_path:
        cfg.split_path = args.split_path
    if args.query and args.gallery:
        cfg.query_path, cfg.gallery_path = args.query, args.gallery
    if args.ks:
        cfg.eval_ks = sorted(int(k) for k in args.ks.split(","))
    table = runner.resolve_dataset(cfg)
    report = runner.evaluate(params, table, cfg)
    text = report.to_json()
    print(text)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("eval.json")
    out.write_text(text + "\n", encoding="utf-8")
    if args.hits_csv:
        report.write_hits_csv(args.hits_csv)
    return 0


def cmd_gradcheck(args) -> int:
    worst = runner.check_losses(args.instances, args.seed)
    worst_model = runner.check_model(args.seed)
    ok = True
    for name, err in worst.items():
        passed = err < args.tol
        ok &= passed
        print(f"{name:20s} max_rel_error={err:.3e} {'PASS' if passed else 'FAIL'}")
    passed = worst_model < args.model_tol
    ok &= passed
    print(f"{'end_to_end_model':20s} max_rel_error={worst_model:.3e} {'PASS' if passed else 'FAIL'}")
    return 0 if ok else EXIT_NUMERIC


def cmd_synth(args) -> int:
    cfg = _config_from_args(args)
    params = None
    if args.checkpoint and args.checkpoint != "none":
        params, _, _ = load_checkpoint(args.checkpoint)
    n = runner.run_synth(cfg, params, args.out, split=args.subset)
    print(f"wrote {n} rows to {args.out}", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    out = _out_dir(args, cfg, f"ablate-{args.param}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rows = runner.run_ablation(cfg, args.param, values, out / "sweep.csv", jobs=args.jobs)
    for r in rows:
        print(f"{args.param}={r['value']}: R@1={r['recall_at_1']} rho={r['rho']} {r['note']}".rstrip())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="intrarank", description="Intra-class ranking assisted metric learning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train and write a run directory")
    _add_config_args(p)
    p.add_argument("--out", help="run directory (default: $INTRARANK_OUTPUT_ROOT/train-<hash>)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Recall@K of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", dest="split_path")
    p.add_argument("--query")
    p.add_argument("--gallery")
    p.add_argument("--ks", help="comma-separated K values, e.g. 1,2,4,8")
    p.add_argument("--out", help="report path (default: eval.json next to the checkpoint)")
    p.add_argument("--hits-csv", help="also write per-query hits")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--model-tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="dump generated families as CSV")
    _add_config_args(p)
    p.add_argument("--checkpoint", default="none", help="checkpoint path, or 'none' to use raw features")
    p.add_argument("--subset", choices=["train", "test", "all"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="sweep one hyperparameter")
    _add_config_args(p)
    p.add_argument("--param", required=True, help="lambda, gamma, alpha, delta, tau or n")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", help="sweep directory")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnknownParam) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, InsufficientClasses, MissingProxy, EmptyGallery, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NormUnderflow, NonFiniteInput, DimensionMismatch, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
