"""Command-line entry point: generate, train, eval, gradcheck, scale, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..dyngraph import DatasetError, load_dataset
from ..synthgen import GenerationError, ShiftConfig, assemble_dataset, generate_synthetic
from .checkpoint import CheckpointError, load_checkpoint
from .config import ABLATIONS, ConfigError, TrainConfig
from .probes import gradcheck_command, scaling_probe
from .report import ReportError, load_runs, report_emit
from .training import CompatibilityError, DivergenceError, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3
VALIDATION_ERRORS = (DatasetError, ConfigError, CompatibilityError, CheckpointError, ReportError, GenerationError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from exc


def build_parser() -> Parser:
    p = Parser(prog="idida", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=Parser, required=True)

    g = sub.add_parser("generate", help="write a synthetic shifted dataset")
    g.add_argument("--n", type=int, default=300)
    g.add_argument("--t", type=int, default=13)
    g.add_argument("--pbar-train", type=float, default=0.8)
    g.add_argument("--sigma-train", type=float, default=0.05)
    g.add_argument("--pbar-test", type=float, default=0.1)
    g.add_argument("--sigma-test", type=float, default=0.0)
    g.add_argument("--feat-dim", type=int, default=16)
    g.add_argument("--split", type=_int_list, default=None, help="train,val,test prediction steps")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON file mirroring TrainConfig; flags override it")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda-do", type=float)
    t.add_argument("--lambda-e", type=float)
    t.add_argument("--k-env", type=int)
    t.add_argument("--s-interv", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--window", type=int)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")

    gc = sub.add_parser("gradcheck", help="finite-difference check of the whole objective")
    gc.add_argument("--tolerance", type=float, default=1e-4)

    s = sub.add_parser("scale", help="epoch time against edge count")
    s.add_argument("--sizes", type=_int_list, default=[2000, 4000, 8000])
    s.add_argument("--epochs", type=int, default=3)

    r = sub.add_parser("report", help="aggregate run reports")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    return p


def _train_config(args) -> TrainConfig:
    base = TrainConfig.from_json(args.config).to_dict() if args.config else {}
    flags = {
        "epochs": args.epochs,
        "lr": args.lr,
        "lambda_do": args.lambda_do,
        "lambda_e": args.lambda_e,
        "k_env": args.k_env,
        "s_interv": args.s_interv,
        "hidden": args.hidden,
        "heads": args.heads,
        "layers": args.layers,
        "window": args.window,
        "ablation": args.ablation,
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    cfg = TrainConfig.from_dict(base)
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def cmd_generate(args) -> int:
    cfg = ShiftConfig(
        num_nodes=args.n,
        num_times=args.t,
        pbar_train=args.pbar_train,
        sigma_train=args.sigma_train,
        pbar_test=args.pbar_test,
        sigma_test=args.sigma_test,
        feat_dim=args.feat_dim,
        split=tuple(args.split) if args.split else None,
        seed=args.seed,
    )
    g, report = generate_synthetic(cfg)
    out = assemble_dataset(g, report, args.out)
    print(json.dumps({"out": str(out), "reconstruction_auc_min": min(report.reconstruction_auc)}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    g = load_dataset(args.data)
    out = Path(args.out)
    try:
        ckpt, report = train(cfg, g)
    except DivergenceError as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "divergence.json").write_text(json.dumps({"epoch": exc.epoch, "terms": exc.dump}, indent=2) + "\n")
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGED
    ckpt.save(out)
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(json.dumps({"best_epoch": report.best_epoch, "train": report.train_metric, "val": report.val_metric, "test": report.test_metric}))
    return EXIT_OK


def cmd_eval(args) -> int:
    value = evaluate(load_checkpoint(args.checkpoint), load_dataset(args.data), args.split)
    print(json.dumps({"split": args.split, "metric": value}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    outcome = gradcheck_command(args.tolerance)
    for line in outcome.lines():
        print(line)
    print(f"worst relative error {outcome.worst:.3e} (tolerance {args.tolerance:g}) in {outcome.seconds:.1f}s")
    return EXIT_OK if outcome.passed else EXIT_INVALID


def cmd_scale(args) -> int:
    print(json.dumps(scaling_probe(args.sizes, epochs=args.epochs).to_dict(), indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    jpath, cpath = report_emit(load_runs(args.runs), args.out)
    print(json.dumps({"json": str(jpath), "csv": str(cpath)}))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "scale": cmd_scale,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
