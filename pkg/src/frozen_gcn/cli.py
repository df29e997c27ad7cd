"""Command line entry point: ``frozen-gcn <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from frozen_gcn import convert, harness
from frozen_gcn.graph import load_bundle, save_bundle

log = logging.getLogger("frozen_gcn")


def _ints(text: str) -> list[int]:
    """``"2,4,8"`` or ranges like ``"2-16"`` (inclusive)."""
    out = []
    for v in text.replace(";", ",").split(","):
        v = v.strip()
        if "-" in v[1:]:
            lo, hi = v.split("-", 1)
            out += list(range(int(lo), int(hi) + 1))
        elif v:
            out.append(int(v))
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--bundle", help="bundle directory")
    p.add_argument("--dataset", help="name used in result rows")
    p.add_argument("--runs", type=int, dest="num_runs")
    p.add_argument("--seed", type=int, dest="base_seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="learning rate (partial models)")
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--no-row-normalize", action="store_true")
    p.add_argument("--allow-big-width", action="store_true",
                   help=f"permit widths above {harness.BIG_WIDTH}")
    p.add_argument("--out", required=True, help="output directory")


def load_config(args) -> harness.ExperimentConfig:
    """JSON config values, overridden by any flag given on the command line."""
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key in ("bundle", "dataset", "num_runs", "base_seed", "epochs", "depth", "kind",
                "mode"):
        v = getattr(args, key, None)
        if v is not None:
            data[key] = v
    if getattr(args, "width", None) is not None:
        data["width"] = args.width
    if getattr(args, "positions", None) is not None:
        data["positions"] = _ints(args.positions)
    if getattr(args, "cold_start", False):
        data["cold_start"] = True
    if args.no_row_normalize:
        data["row_normalize"] = False
    if args.allow_big_width:
        data["allow_big_width"] = True
    overrides = {k: v for k, v in (("learning_rate", args.lr),
                                   ("weight_decay", args.weight_decay),
                                   ("optimizer", args.optimizer)) if v is not None}
    if overrides:
        train = dict(data.get("train") or {})
        if not train:
            base = (harness.full_train_config() if data.get("mode") == "full"
                    else harness.partial_train_config())
            train = {"learning_rate": base.learning_rate,
                     "weight_decay": base.weight_decay}
        train.update(overrides)
        data["train"] = train
    if not data.get("bundle"):
        raise SystemExit("a bundle directory is required (--bundle or config)")
    return harness.ExperimentConfig(**data)


def _bundle(cfg):
    return load_bundle(cfg.bundle, name=cfg.dataset)


def cmd_convert(args):
    if args.format == "linqs":
        b = convert.from_linqs(args.inputs[0], args.inputs[1], name=args.name)
    elif args.format == "npz":
        b = convert.from_npz(args.inputs[0], name=args.name)
    else:
        b = convert.from_edgelist(*args.inputs[:3], name=args.name)
    b = convert.with_split(b, args.per_class_train, args.num_val, args.split_seed)
    save_bundle(b, args.out)
    print(f"wrote {args.out}: N={b.num_nodes} E={len(b.edges)} C={b.num_features} "
          f"K={b.num_classes} train={int(b.train_mask.sum())} "
          f"val={int(b.val_mask.sum())} test={int(b.test_mask.sum())}")
    return 0


def _emit(rows, out, name, plot=True):
    out = Path(out)
    path = harness.write_rows(rows, out / f"{name}.csv")
    if plot and rows:
        harness.plot_rows(rows, out / f"{name}.svg", title=name)
    for r in rows:
        print(f"{r.dataset} w={r.width} L={r.depth} pos={r.positions} {r.mode} "
              f"{r.kind}: {r.mean_acc:.2f} +- {r.std:.2f}")
    print(f"wrote {path}")
    return 0


def cmd_train(args):
    cfg = load_config(args)
    return _emit([harness.run_single(cfg)], args.out, "train", plot=False)


def cmd_sweep(args):
    cfg = load_config(args)
    rows = harness.sweep_width_depth(_bundle(cfg), _ints(args.widths), _ints(args.depths),
                                     position=args.position,
                                     baseline_width=args.baseline_width, base=cfg)
    return _emit(rows, args.out, "sweep")


def cmd_position(args):
    cfg = load_config(args)
    rows = harness.sweep_position(_bundle(cfg), args.width, args.depth,
                                  _ints(args.positions), base=cfg)
    return _emit(rows, args.out, "position", plot=False)


def cmd_coldstart(args):
    cfg = load_config(args)
    grid, best = harness.cold_start_experiment(
        _bundle(cfg), _ints(args.widths), _ints(args.depths),
        baseline_width=args.baseline_width, base=cfg)
    _emit(grid, args.out, "coldstart_grid")
    return _emit(best, args.out, "coldstart_best", plot=False)


def cmd_kind(args):
    cfg = load_config(args)
    rows = harness.trainable_kind_experiment(_bundle(cfg), args.width, args.depth,
                                             position=args.position, base=cfg)
    return _emit(rows, args.out, "kind", plot=False)


def cmd_mixedwidth(args):
    cfg = load_config(args)
    rows = harness.mixed_width_experiment(_bundle(cfg), args.profiles, base=cfg)
    return _emit(rows, args.out, "mixedwidth", plot=False)


def cmd_theory(args):
    sizes = harness.QUICK_SIZES if args.quick else None
    paths, ok = harness.theory_suite(args.out, seed=args.seed, sizes=sizes,
                                     variance_target=args.inject_variance_target)
    for p in paths:
        print(f"wrote {p}")
    print("theory suite:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_report(args):
    rows = [r for path in args.inputs for r in harness.read_rows(path)]
    harness.plot_rows(rows, args.out, title=args.title)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frozen-gcn",
                                 description="Partially trained GCN experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="external graph files -> bundle directory")
    p.add_argument("--format", choices=["linqs", "npz", "edgelist"], required=True)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--name")
    p.add_argument("--per-class-train", type=int, default=20)
    p.add_argument("--num-val", type=int, default=500)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="one configuration, num_runs seeds")
    _add_common(p)
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--positions")
    p.add_argument("--kind", choices=["graph_conv", "dense"])
    p.add_argument("--mode", choices=["partial", "full"])
    p.add_argument("--cold-start", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="width x depth grid with trained baseline")
    _add_common(p)
    p.add_argument("--widths", required=True)
    p.add_argument("--depths", required=True)
    p.add_argument("--position", type=int, default=2)
    p.add_argument("--baseline-width", type=int, default=64)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("position", help="placement of the trainable layer")
    _add_common(p)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--positions", required=True)
    p.set_defaults(func=cmd_position)

    p = sub.add_parser("coldstart", help="cold-start grid, last two layers trainable")
    _add_common(p)
    p.add_argument("--widths", required=True)
    p.add_argument("--depths", required=True)
    p.add_argument("--baseline-width", type=int, default=64)
    p.set_defaults(func=cmd_coldstart)

    p = sub.add_parser("kind", help="dense vs graph-conv trainable layer")
    _add_common(p)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--depth", type=int, default=16)
    p.add_argument("--position", type=int, default=2)
    p.set_defaults(func=cmd_kind)

    p = sub.add_parser("mixedwidth", help="per-layer width profiles, last layer trainable")
    _add_common(p)
    p.add_argument("profiles", nargs="+", help='e.g. "2048x12+8192x3" (bottom-up)')
    p.set_defaults(func=cmd_mixedwidth)

    p = sub.add_parser("theory", help="Monte Carlo checks and smoothing diagnostics")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="small sample sizes")
    p.add_argument("--inject-variance-target", type=float, default=None,
                   help="override the chi-square difference variance target "
                        "(checker self-test)")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("report", help="merge result CSVs into an SVG plot")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="accuracy vs depth")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
