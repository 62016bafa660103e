"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import metrics
from .bag_io import holdout_split, read_manifest, write_manifest
from .errors import MicroMILError
from .graph import EDGE_METHODS
from .model import CLUSTER_MODES, TrainConfig, load_model, save_model
from .rie import SELECT_MODES
from .synth import SynthConfig, generate_dataset
from .trainer import (canonical_config, gradient_check, history_csv, mean_pool_baseline_train,
                      train)

log = logging.getLogger("micromil")

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- config resolution -----------------------------------------------------

_TRAIN_FLAGS = {
    "clusters": int, "hidden": int, "layers": int, "lr": float, "dropout": float, "epochs": int,
    "tau": float, "seed": int, "edge_method": str, "rie_select": str, "rie_cluster": str,
    "warmup_dce_iters": int, "beta1": float, "beta2": float, "eps": float,
}
_LIST_FLAGS = ("edge_method", "rie_select", "rie_cluster")


def _add_train_flags(p: argparse.ArgumentParser, lists: bool = False) -> None:
    p.add_argument("--config", type=Path, help="key=value file; flags take precedence")
    for name, typ in _TRAIN_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        if lists and name in _LIST_FLAGS:
            p.add_argument(flag, default=None, help="comma-separated list")
        elif name == "edge_method":
            p.add_argument(flag, default=None, choices=EDGE_METHODS)
        elif name == "rie_select":
            p.add_argument(flag, default=None, choices=SELECT_MODES)
        elif name == "rie_cluster":
            p.add_argument(flag, default=None, choices=CLUSTER_MODES)
        else:
            p.add_argument(flag, type=typ, default=None)
    p.add_argument("--no-gumbel-noise", action="store_true", default=None,
                   help="use zero Gumbel noise during training")


def read_config_file(path: Path) -> dict[str, str]:
    items = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        items[key.replace("-", "_")] = value
    return items


def resolve_config(args, skip: tuple[str, ...] = ()) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    items: dict[str, str] = {}
    if args.config is not None:
        items = read_config_file(args.config)
        known = {f.name for f in fields(TrainConfig)}
        unknown = sorted(set(items) - known)
        if unknown:
            raise UsageError(f"{args.config}: unknown config keys: {', '.join(unknown)}")
    cfg = TrainConfig.from_items(items)
    overrides = {k: getattr(args, k) for k in _TRAIN_FLAGS
                 if k not in skip and getattr(args, k, None) is not None}
    if getattr(args, "no_gumbel_noise", None):
        overrides["gumbel_noise"] = False
    cfg = replace(cfg, **overrides)
    try:
        cfg.validate()
    except MicroMILError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _log_config(cfg: TrainConfig) -> None:
    log.info("config %s", " ".join(f"{k}={v}" for k, v in cfg.to_items()))


# -- subcommands -----------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _log_config(cfg)
    manifest = read_manifest(args.manifest)
    log.info("training on %d bags from %s", len(manifest), args.manifest)

    def on_epoch(rec):
        log.info("epoch %d loss %.6f acc %.4f", rec.epoch, rec.loss, rec.acc)

    trainer = mean_pool_baseline_train if args.baseline else train
    params, history = trainer(cfg, manifest, on_epoch=on_epoch)
    save_model(params, args.out)
    if args.history:
        Path(args.history).write_text(history_csv(history))
    print(f"saved {params.kind} model to {args.out}")
    return 0


def cmd_eval(args) -> int:
    params = load_model(args.model)
    report = metrics.evaluate(params, read_manifest(args.manifest), args.threshold, workers=args.workers)
    if args.out:
        Path(args.out).write_text(report.to_csv())
    if args.metrics_out:
        auc = f"{report.auc:.6f}" if report.auc is not None else "undefined"
        Path(args.metrics_out).write_text(f"acc,auc,f1\n{report.accuracy:.6f},{auc},{report.f1:.6f}\n")
    print(report.summary())
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(n_bags=args.bags, S=args.images_per_bag, d=args.dim, redundancy=args.redundancy,
                      n_concepts=args.concepts, noise_sigma=args.noise_sigma, seed=args.seed,
                      redundancy_jitter=args.redundancy_jitter)
    try:
        cfg.validate()
    except MicroMILError as exc:
        raise UsageError(str(exc)) from None
    log.info("synth %s", cfg)
    manifest = generate_dataset(cfg, args.pos_fraction, args.out_dir)
    print(f"wrote {len(manifest)} bags and manifest.csv to {args.out_dir}")
    return 0


def cmd_analyze(args) -> int:
    manifest = read_manifest(args.manifest)
    bags = manifest.load_bags()
    params = load_model(args.model) if args.model else None
    if args.heatmap_dir:
        Path(args.heatmap_dir).mkdir(parents=True, exist_ok=True)
    print("bag_id,label,S,redundancy_ratio")
    for bag in bags:
        ratio = metrics.redundancy_ratio(bag, args.threshold) if bag.S >= 2 else float("nan")
        print(f"{bag.bag_id},{bag.label},{bag.S},{ratio:.6f}")
        if args.heatmap_dir:
            metrics.similarity_heatmap(bag, Path(args.heatmap_dir) / f"{bag.bag_id}.csv")
            if params is not None:
                from .model import bag_forward
                _, parts = bag_forward(params, bag.features, "eval", return_parts=True)
                metrics.similarity_heatmap(parts["reps"].reps.data,
                                           Path(args.heatmap_dir) / f"{bag.bag_id}.reps.csv")
    mode = "pooled" if args.pooled else "mean"
    print(f"# {mode} redundancy ratio at {args.threshold}: "
          f"{metrics.dataset_redundancy(bags, args.threshold, pooled=args.pooled):.6f}")
    return 0


def cmd_split(args) -> int:
    manifest = read_manifest(args.manifest)
    out = Path(args.out_dir)
    if args.holdout is not None:
        seed = 0 if args.seed is None else args.seed
        a, b = holdout_split(manifest, args.holdout, seed)
        names = ("train.csv", "test.csv")
    else:
        a, b = metrics.redundancy_split(manifest, args.threshold, args.quantile)
        names = ("high.csv", "low.csv")
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(a, out / names[0])
    write_manifest(b, out / names[1])
    print(f"wrote {names[0]} ({len(a)} bags) and {names[1]} ({len(b)} bags) to {out}")
    return 0


def _grid_values(raw: str | None, allowed: tuple[str, ...], default: str, flag: str) -> list[str]:
    if raw is None:
        return [default]
    values = [v.strip() for v in raw.split(",") if v.strip()]
    bad = [v for v in values if v not in allowed]
    if bad or not values:
        raise UsageError(f"{flag}: invalid grid token(s) {bad or raw!r}; choose from {','.join(allowed)}")
    return values


def ablation_grid(args, base: TrainConfig) -> list[TrainConfig]:
    edges = _grid_values(args.edge_method, EDGE_METHODS, base.edge_method, "--edge-method")
    clusters = _grid_values(args.rie_cluster, CLUSTER_MODES, base.rie_cluster, "--rie-cluster")
    selects = _grid_values(args.rie_select, SELECT_MODES, base.rie_select, "--rie-select")
    return [replace(base, edge_method=e, rie_cluster=c, rie_select=s)
            for e in edges for c in clusters for s in selects]


def ablate(base: TrainConfig, grid: list[TrainConfig], train_manifest, test_manifest) -> str:
    """Train and evaluate every grid cell; returns the comparison table as CSV."""
    train_bags, test_bags = train_manifest.load_bags(), test_manifest.load_bags()
    rows = ["edge_method,rie_cluster,rie_select,acc,auc,f1"]
    for cfg in grid:
        _log_config(cfg)
        params, _ = train(cfg, bags=train_bags)
        rep = metrics.evaluate(params, bags=test_bags)
        auc = f"{rep.auc:.6f}" if rep.auc is not None else "undefined"
        rows.append(f"{cfg.edge_method},{cfg.rie_cluster},{cfg.rie_select},{rep.accuracy:.6f},{auc},{rep.f1:.6f}")
        log.info("ablate %s", rows[-1])
    return "\n".join(rows) + "\n"


def cmd_ablate(args) -> int:
    base = resolve_config(args, skip=_LIST_FLAGS)
    grid = ablation_grid(args, base)
    manifest = read_manifest(args.manifest)
    if args.test_manifest:
        train_m, test_m = manifest, read_manifest(args.test_manifest)
    else:
        train_m, test_m = holdout_split(manifest, args.test_fraction, base.seed)
    table = ablate(base, grid, train_m, test_m)
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = canonical_config(**({"hidden": args.hidden} if args.hidden else {}))
    report = gradient_check(cfg, eps=args.eps)
    for name, err in report.per_param.items():
        print(f"{name},{err:.3e}")
    ok = report.max_rel_error < GRADCHECK_TOL
    print(f"max_rel_error={report.max_rel_error:.3e} {'PASS' if ok else 'FAIL'} (tol {GRADCHECK_TOL:g})")
    return 0 if ok else 2


def cmd_repro(args) -> int:
    from .repro import run_all_repro
    return run_all_repro(args.work_dir, quick=args.quick, only=args.only)


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="micromil", description="Graph-based MIL over bags of image features.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="model file")
    p.add_argument("--history", type=Path, help="per-epoch epoch,loss,acc CSV")
    p.add_argument("--baseline", action="store_true", help="train the mean-pool baseline instead")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a manifest")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path, help="per-bag predictions CSV")
    p.add_argument("--metrics-out", type=Path, help="acc,auc,f1 CSV")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--bags", type=int, default=200)
    p.add_argument("--images-per-bag", type=int, default=60)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--redundancy", type=float, default=0.8)
    p.add_argument("--redundancy-jitter", type=float, default=0.0)
    p.add_argument("--concepts", type=int, default=8)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.add_argument("--pos-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="redundancy ratios and similarity heatmaps")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--threshold", type=float, default=metrics.REDUNDANCY_THRESHOLD)
    p.add_argument("--pooled", action="store_true", help="pool pairs over bags instead of averaging")
    p.add_argument("--heatmap-dir", type=Path)
    p.add_argument("--model", type=Path, help="also export heatmaps of the selected representatives")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("split", help="redundancy (top/bottom quantile) or holdout split")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--threshold", type=float, default=metrics.REDUNDANCY_THRESHOLD)
    p.add_argument("--quantile", type=float, default=0.1)
    p.add_argument("--holdout", type=float, help="test fraction for a stratified random split")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("ablate", help="train+eval over a grid of ablation settings")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--test-manifest", type=Path)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--out", type=Path)
    _add_train_flags(p, lists=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check on the canonical bag")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--hidden", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("repro", help="run every reproduction script")
    p.add_argument("--work-dir", type=Path, default=Path("repro_out"))
    p.add_argument("--quick", action="store_true", help="scaled-down datasets")
    p.add_argument("--only", help="run a single script by name")
    p.set_defaults(func=cmd_repro)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (MicroMILError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
