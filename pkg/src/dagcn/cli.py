"""Command-line entry point: ``dagcn {train,eval,gradcheck,verify,data-stats}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .graphs import DEFAULT_DEGREE_CAP, load_tu_dataset
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, run_cv
from .verification import (
    FORWARD_TOL,
    compare_with_reference,
    gradcheck_model,
    permutation_suite,
    transcript_instance,
)

logger = logging.getLogger("dagcn")

GRADCHECK_CONFIG = dict(feature_dim=3, num_classes=2, k=3, m=2, hidden=8, r=4)
GRADCHECK_SEEDS = (0, 1, 2, 3, 4)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: str = "data/MUTAG"
    name: str = "MUTAG"
    out: str = "runs/MUTAG"
    features: str = "auto"
    degree_cap: int = DEFAULT_DEGREE_CAP
    jobs: int = 1
    train: TrainConfig = None

    def __post_init__(self):
        if self.train is None:
            self.train = TrainConfig()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d


def load_run_config(path: str | Path | None) -> RunConfig:
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise UsageError(f"{path}: top level must be a mapping")
    run_keys = {f.name for f in fields(RunConfig)} - {"train"}
    train_keys = set(TrainConfig.field_names())
    train_raw = raw.pop("train", None) or {}
    if not isinstance(train_raw, dict):
        raise UsageError("config key 'train' must be a mapping")
    for key in raw:
        if key not in run_keys:
            raise UsageError(f"unknown config key {key!r}")
    for key in train_raw:
        if key not in train_keys:
            raise UsageError(f"unknown config key 'train.{key}'")
    try:
        train = TrainConfig(**train_raw)
        return RunConfig(**raw, train=train)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    for key in ("dataset", "name", "out", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    dataset = load_tu_dataset(cfg.dataset, cfg.name, features=cfg.features,
                              degree_cap=cfg.degree_cap)
    out = Path(cfg.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))

    start = time.perf_counter()
    report = run_cv(dataset, cfg.train, jobs=cfg.jobs)
    report.write_json(out / "report.json")
    report.write_trace_csv(out / "trace.csv")
    model_config = cfg.train.model_config(dataset.feature_dim, dataset.num_classes)
    for fold in report.folds:
        save_checkpoint(out / "checkpoints" / f"fold{fold.fold}.npz", fold.params,
                        model_config, cfg.train.seed + fold.fold,
                        extra={"dataset": cfg.name, "fold": fold.fold,
                               "test_indices": fold.test_indices,
                               "test_accuracy": fold.test_accuracy})
    print(f"{cfg.name}: accuracy {report.summary()} "
          f"in {time.perf_counter() - start:.0f}s -> {out}")
    return 0


def cmd_eval(args) -> int:
    params, model_config, meta = load_checkpoint(args.checkpoint)
    cfg = _apply_overrides(load_run_config(args.config), args)
    name = args.name or meta["extra"].get("dataset") or cfg.name
    dataset = load_tu_dataset(cfg.dataset, name, features=cfg.features,
                              degree_cap=cfg.degree_cap)
    indices = meta["extra"].get("test_indices")
    if args.all or indices is None:
        indices = range(len(dataset))
    graphs = [dataset.graphs[i] for i in indices]
    acc = evaluate(params, model_config, graphs)
    print(f"accuracy: {acc!r} on {len(graphs)} graphs")
    stored = meta["extra"].get("test_accuracy")
    if stored is not None and not args.all and acc != stored:
        print(f"MISMATCH: checkpoint recorded {stored!r}", file=sys.stderr)
        return 1
    return 0


def run_gradcheck(seeds=GRADCHECK_SEEDS) -> bool:
    config = ModelConfig(**GRADCHECK_CONFIG)
    ok = True
    for seed in seeds:
        report = gradcheck_model(config, seed)
        print("\n".join(report.lines()))
        ok &= report.passed
    print(f"gradcheck: {'PASS' if ok else 'FAIL'}")
    return ok


def cmd_gradcheck(args) -> int:
    return 0 if run_gradcheck() else 1


def cmd_verify(args) -> int:
    ok = run_gradcheck()

    deviations = compare_with_reference(*transcript_instance())
    print(f"reference transcript tol={FORWARD_TOL:g}")
    for key, dev in deviations.items():
        print(f"  {key:<12} max_abs_dev={dev:.3e} {'ok' if dev <= FORWARD_TOL else 'FAIL'}")
    ref_ok = max(deviations.values()) <= FORWARD_TOL
    print(f"reference: {'PASS' if ref_ok else 'FAIL'}")

    perm = permutation_suite(100, seed=0)
    print(f"permutation: trials={perm.trials} worst={perm.worst:.3e} "
          f"tol={perm.tolerance:g} {'PASS' if perm.passed else 'FAIL'}")
    return 0 if ok and ref_ok and perm.passed else 1


def cmd_data_stats(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    stats = load_tu_dataset(cfg.dataset, cfg.name, features=cfg.features,
                            degree_cap=cfg.degree_cap).stats()
    print(f"{stats['name']}: graphs: {stats['graphs']}, max nodes: {stats['max_nodes']}, "
          f"avg nodes: {stats['avg_nodes']:.2f}")
    print(f"classes: {stats['classes']}")
    print(f"feature dim: {stats['feature_dim']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagcn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--dataset", help="directory holding the TU files")
        p.add_argument("--name", help="dataset name (file prefix)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, help="parallel folds (default 1)")

    p = sub.add_parser("train", help="10-fold cross-validated training")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a fold checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--all", action="store_true", help="evaluate on every graph")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("verify", help="gradient, reference-transcript and permutation oracles")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("data-stats", help="dataset statistics")
    common(p)
    p.set_defaults(func=cmd_data_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
