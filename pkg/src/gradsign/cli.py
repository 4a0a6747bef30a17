"""Command-line front end: reproducible experiment pipelines from one config.

Subcommands map to the experiment stages: ``bench`` trains the ground-truth
table, ``score`` computes metric scores, ``correlate`` ranks them against the
bench, ``select`` runs the best-of-N protocol, ``search`` runs the four
searchers with and without assistance, and ``verify`` sweeps the bound
checks.  Every artifact directory carries a manifest (config hash, version,
seed, active core) sufficient to regenerate the files bit-identically.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import traceback
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__, archspace, metrics, search, stats, theory, trainer
from .engine import Batch, core_name
from .seeding import rng_for, seed_for

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    """Invalid experiment configuration; message lists the offending fields."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SearchSection:
    algorithms: tuple[str, ...] = ("rs", "rea")
    assisted: tuple[bool, ...] = (False, True)
    budget_seconds: float = 600.0
    runs: int = 10
    population_size: int = 20
    sample_size: int = 10
    pool_size: int = 8
    reinforce_lr: float = 0.05
    baseline_decay: float = 0.9
    hb_b_min: int = 1
    hb_eta: int = 3
    live_fill: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    dataset_kind: str = "two_spirals"
    n_samples: int = 2000
    dim: int = 2
    classes: int = 2
    noise: float = 0.1
    space: archspace.SearchSpaceSpec = field(default_factory=archspace.SearchSpaceSpec)
    train: trainer.TrainConfig = field(default_factory=trainer.TrainConfig)
    bench_archs: int = 400
    metric_names: tuple[str, ...] = ("gradsign", "grad_norm")
    metric_batch_size: int = 64
    zero_tol: float = 0.0
    loss_kind: str = "cross_entropy"
    selection_metric: str = "gradsign"
    selection_n: int = 50
    selection_runs: int = 500
    search: SearchSection = field(default_factory=SearchSection)
    verify_instances: int = 100
    verify_delta: float = 0.1
    verify_families: tuple[str, ...] = theory.THEORY_FAMILIES

    def to_dict(self) -> dict:
        d = asdict(self)
        d["space"] = self.space.to_dict()
        return d

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()


def _take(section: dict, errors: list, path: str, key: str, kind, default):
    value = section.get(key, default)
    try:
        if kind is bool and not isinstance(value, bool):
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        errors.append(f"{path}.{key}: expected {kind.__name__}, got {value!r}")
        return default


def parse_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Validate a parsed YAML mapping; raises ConfigError listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    errors: list[str] = []
    known = {"seed", "dataset", "space", "train", "bench", "metrics", "selection", "search", "verify"}
    for key in raw:
        if key not in known:
            errors.append(f"unknown section {key!r}")

    def section(name):
        value = raw.get(name, {})
        if not isinstance(value, dict):
            errors.append(f"section {name!r} must be a mapping")
            return {}
        return value

    seed = _take(raw, errors, "", "seed", int, 42)
    ds = section("dataset")
    sp = section("space")
    tr = section("train")
    be = section("bench")
    me = section("metrics")
    se = section("selection")
    sr = section("search")
    ve = section("verify")

    kind = _take(ds, errors, "dataset", "kind", str, "two_spirals")
    if kind not in trainer.DATASET_KINDS:
        errors.append(f"dataset.kind: unknown kind {kind!r}")
    metric_names = tuple(me.get("names", ("gradsign", "grad_norm")))
    for name in metric_names:
        if name not in metrics.METRIC_NAMES:
            errors.append(f"metrics.names: unknown metric {name!r}")
    loss_kind = _take(me, errors, "metrics", "loss", str, "cross_entropy")
    if loss_kind not in ("mse", "cross_entropy"):
        errors.append(f"metrics.loss: unknown loss {loss_kind!r}")
    algorithms = tuple(sr.get("algorithms", ("rs", "rea")))
    for alg in algorithms:
        if alg not in search.ALGORITHMS:
            errors.append(f"search.algorithms: unknown algorithm {alg!r}")
    assisted_raw = sr.get("assisted", (False, True))
    if not isinstance(assisted_raw, (list, tuple)) or not all(isinstance(a, bool) for a in assisted_raw):
        errors.append("search.assisted: expected a list of booleans")
        assisted_raw = (False, True)
    families = tuple(ve.get("families", theory.THEORY_FAMILIES))
    for fam in families:
        if fam not in theory.THEORY_FAMILIES:
            errors.append(f"verify.families: unknown family {fam!r}")

    try:
        space = archspace.SearchSpaceSpec(
            cell_width=_take(sp, errors, "space", "cell_width", int, 16),
            num_cells=_take(sp, errors, "space", "num_cells", int, 2),
        )
    except ValueError as exc:
        errors.append(f"space: {exc}")
        space = archspace.SearchSpaceSpec()
    try:
        train_config = trainer.TrainConfig(
            lr=_take(tr, errors, "train", "lr", float, 0.05),
            momentum=_take(tr, errors, "train", "momentum", float, 0.9),
            epochs=_take(tr, errors, "train", "epochs", int, 60),
            batch_size=_take(tr, errors, "train", "batch_size", int, 32),
            weight_decay=_take(tr, errors, "train", "weight_decay", float, 0.0),
            seed=seed,
        )
    except ValueError as exc:
        errors.append(f"train: {exc}")
        train_config = trainer.TrainConfig(seed=seed)

    config = ExperimentConfig(
        seed=seed if seed_override is None else seed_override,
        dataset_kind=kind,
        n_samples=_take(ds, errors, "dataset", "n_samples", int, 2000),
        dim=_take(ds, errors, "dataset", "dim", int, 2),
        classes=_take(ds, errors, "dataset", "classes", int, 2),
        noise=_take(ds, errors, "dataset", "noise", float, 0.1),
        space=space,
        train=train_config,
        bench_archs=_take(be, errors, "bench", "num_archs", int, 400),
        metric_names=metric_names,
        metric_batch_size=_take(me, errors, "metrics", "batch_size", int, 64),
        zero_tol=_take(me, errors, "metrics", "zero_tol", float, 0.0),
        loss_kind=loss_kind,
        selection_metric=_take(se, errors, "selection", "metric", str, "gradsign"),
        selection_n=_take(se, errors, "selection", "n_candidates", int, 50),
        selection_runs=_take(se, errors, "selection", "runs", int, 500),
        search=SearchSection(
            algorithms=algorithms,
            assisted=tuple(assisted_raw),
            budget_seconds=_take(sr, errors, "search", "budget_seconds", float, 600.0),
            runs=_take(sr, errors, "search", "runs", int, 10),
            population_size=_take(sr, errors, "search", "population_size", int, 20),
            sample_size=_take(sr, errors, "search", "sample_size", int, 10),
            pool_size=_take(sr, errors, "search", "pool_size", int, 8),
            reinforce_lr=_take(sr, errors, "search", "reinforce_lr", float, 0.05),
            baseline_decay=_take(sr, errors, "search", "baseline_decay", float, 0.9),
            hb_b_min=_take(sr, errors, "search", "hb_b_min", int, 1),
            hb_eta=_take(sr, errors, "search", "hb_eta", int, 3),
            live_fill=_take(sr, errors, "search", "live_fill", bool, True),
        ),
        verify_instances=_take(ve, errors, "verify", "instances", int, 100),
        verify_delta=_take(ve, errors, "verify", "delta", float, 0.1),
        verify_families=families,
    )
    if config.selection_metric not in config.metric_names:
        errors.append("selection.metric must appear in metrics.names")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    if seed_override is not None:
        # the train seed tracks the root seed
        object.__setattr__(config, "train", trainer.TrainConfig(
            lr=config.train.lr, momentum=config.train.momentum, epochs=config.train.epochs,
            batch_size=config.train.batch_size, weight_decay=config.train.weight_decay,
            seed=seed_override,
        ))
    return config


def load_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(raw, seed_override)


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _dataset(config: ExperimentConfig) -> trainer.Dataset:
    return trainer.make_synthetic_dataset(
        config.dataset_kind, config.n_samples, config.dim, config.classes,
        config.noise, seed_for(config.seed, "dataset"),
    )


def _bench_arch_ids(config: ExperimentConfig) -> list[int]:
    rng = rng_for(config.seed, "bench-archs")
    n = min(config.bench_archs, archspace.SPACE_SIZE)
    return sorted(int(i) for i in rng.choice(archspace.SPACE_SIZE, size=n, replace=False))


def _metric_batch(config: ExperimentConfig, dataset: trainer.Dataset) -> Batch:
    rng = rng_for(config.seed, "metric-batch")
    idx = rng.choice(dataset.train_idx, size=min(config.metric_batch_size, dataset.train_idx.size),
                     replace=False)
    return dataset.batch(np.sort(idx))


def _metric_spec(config: ExperimentConfig, name: str) -> metrics.MetricSpec:
    return metrics.MetricSpec(name, config.space, config.classes, config.loss_kind, config.zero_tol)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_manifest(out: Path, command: str, config: ExperimentConfig, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "engine_core": core_name(),
        "seed": config.seed,
        "config": config.to_dict(),
        "config_sha256": config.sha256(),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    with open(out / f"manifest_{command}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _up_to_date(out: Path, command: str, config: ExperimentConfig, outputs: list[Path], force: bool) -> bool:
    if force:
        return False
    manifest_path = out / f"manifest_{command}.json"
    if not manifest_path.exists() or not all(p.exists() for p in outputs):
        return False
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError:
        return False
    return manifest.get("config_sha256") == config.sha256()


def _load_scores(out: Path) -> dict[str, dict[int, float]]:
    path = out / "scores.csv"
    if not path.exists():
        return {}
    table: dict[str, dict[int, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["error"]:
                continue
            table.setdefault(row["metric"], {})[int(row["arch_id"])] = float(row["value"])
    return table


def _compute_scores(config, dataset, names, workers) -> list[metrics.MetricScore]:
    batch = _metric_batch(config, dataset)
    archs = [archspace.decode_arch(i) for i in _bench_arch_ids(config)]
    init_seed = seed_for(config.seed, "metric-init")
    out = []
    for name in names:
        out.extend(metrics.score_pool(_metric_spec(config, name), archs, batch, init_seed, workers))
    return out


def _score_rows(scores: list[metrics.MetricScore]):
    for s in scores:
        yield [s.metric_name, s.arch_id, repr(float(s.value)), int(s.flagged), s.error or ""]


# ---------------------------------------------------------------------------
# commands


def cmd_bench(config: ExperimentConfig, out: Path, workers: int, force: bool, args) -> int:
    bench_csv = out / "bench.csv"
    if _up_to_date(out, "bench", config, [bench_csv], force):
        print(f"bench up to date at {bench_csv}")
        return EXIT_OK
    dataset = _dataset(config)
    ids = _bench_arch_ids(config)
    table = trainer.build_bench(config.space, ids, dataset, config.train, workers, bench_csv)
    accs = np.array([table.get(i).test_acc for i in table.usable_ids()])
    _write_manifest(out, "bench", config, {
        "archs": len(table),
        "test_acc_mean": float(accs.mean()),
        "test_acc_std": float(accs.std(ddof=1)) if accs.size > 1 else 0.0,
    })
    print(f"bench: {len(table)} archs, test acc {accs.mean():.3f} +/- {accs.std(ddof=1):.3f}")
    return EXIT_OK


def cmd_score(config: ExperimentConfig, out: Path, workers: int, force: bool, args) -> int:
    names = tuple(args.metric) if args.metric else config.metric_names
    scores_csv = out / "scores.csv"
    if _up_to_date(out, "score", config, [scores_csv], force):
        print(f"scores up to date at {scores_csv}")
        return EXIT_OK
    dataset = _dataset(config)
    scores = _compute_scores(config, dataset, names, workers)
    _write_csv(scores_csv, ("metric", "arch_id", "value", "flagged", "error"), _score_rows(scores))
    _write_manifest(out, "score", config, {"metrics": list(names)})
    print(f"scored {len(scores)} (metric, arch) pairs -> {scores_csv}")
    return EXIT_OK


def cmd_correlate(config: ExperimentConfig, out: Path, workers: int, force: bool, args) -> int:
    names = tuple(args.metric) if args.metric else config.metric_names
    corr_csv = out / "correlation.csv"
    if _up_to_date(out, "correlate", config, [corr_csv], force):
        print(f"correlation up to date at {corr_csv}")
        return EXIT_OK
    bench = trainer.BenchTable.load(out / "bench.csv")
    dataset = _dataset(config)
    by_metric = _load_scores(out)
    rows = []
    for name in names:
        if name in by_metric:
            scores = [metrics.MetricScore(name, v, arch_id=i) for i, v in sorted(by_metric[name].items())]
        else:
            scores = _compute_scores(config, dataset, (name,), workers)
        report = stats.correlate(bench, scores)
        rows.append([name, report.n_pairs, report.spearman, report.kendall,
                     report.tied_score_pairs, report.tied_acc_pairs])
        print(f"{name}: spearman {report.spearman:+.3f}  kendall {report.kendall:+.3f}  (n={report.n_pairs})")
    _write_csv(corr_csv, ("metric", "n_pairs", "spearman_rho", "kendall_tau",
                          "tied_score_pairs", "tied_acc_pairs"), rows)
    _write_manifest(out, "correlate", config, {"metrics": list(names)})
    return EXIT_OK


def cmd_select(config: ExperimentConfig, out: Path, workers: int, force: bool, args) -> int:
    sel_csv = out / "selection.csv"
    if _up_to_date(out, "select", config, [sel_csv], force):
        print(f"selection up to date at {sel_csv}")
        return EXIT_OK
    name = config.selection_metric
    bench = trainer.BenchTable.load(out / "bench.csv")
    by_metric = _load_scores(out)
    if name in by_metric:
        scores = by_metric[name]
    else:
        dataset = _dataset(config)
        scores = {s.arch_id: s.value for s in _compute_scores(config, dataset, (name,), workers) if s.ok}
    report = stats.best_of_n_selection(
        scores, bench, config.selection_n, config.selection_runs,
        seed_for(config.seed, "selection"), metric_name=name,
    )
    rows = []
    for selector in ("metric", "random", "optimal"):
        st = getattr(report, selector)
        rows.append([name, selector, report.n_candidates, report.runs,
                     st.mean_val, st.std_val, st.mean_test, st.std_test])
        print(f"{selector:8s} val {st.mean_val:.4f}+/-{st.std_val:.4f}  test {st.mean_test:.4f}+/-{st.std_test:.4f}")
    _write_csv(sel_csv, ("metric", "selector", "n_candidates", "runs",
                         "mean_val", "std_val", "mean_test", "std_test"), rows)
    _write_manifest(out, "select", config)
    return EXIT_OK


def cmd_search(config: ExperimentConfig, out: Path, workers: int, force: bool, args) -> int:
    summary_path = out / "search_summary.json"
    if _up_to_date(out, "search", config, [summary_path], force):
        print(f"search up to date at {summary_path}")
        return EXIT_OK
    section = config.search
    bench_path = out / "bench.csv"
    bench = trainer.BenchTable.load(bench_path) if bench_path.exists() else None
    dataset = _dataset(config) if (section.live_fill or bench is None) else None
    evaluator = search.BenchEvaluator(
        config.space,
        bench=bench,
        dataset=dataset,
        train_config=config.train if dataset is not None else None,
        metric_spec=_metric_spec(config, "gradsign"),
        metric_batch=_metric_batch(config, _dataset(config)),
        metric_seed=seed_for(config.seed, "metric-init"),
    )
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)
    traces = []
    for alg in section.algorithms:
        for assisted in section.assisted:
            for run in range(section.runs):
                seed = seed_for(config.seed, f"search-{alg}-{int(assisted)}", run)
                kwargs = dict(assisted=assisted, seed=seed, pool_size=section.pool_size)
                if alg == "rea":
                    kwargs.update(population_size=section.population_size,
                                  sample_size=section.sample_size)
                elif alg == "reinforce":
                    kwargs.update(lr=section.reinforce_lr, baseline_decay=section.baseline_decay)
                elif alg == "hb":
                    kwargs.update(b_min=section.hb_b_min, eta=section.hb_eta)
                trace = search.ALGORITHMS[alg](evaluator, section.budget_seconds, **kwargs)
                variant = "assisted" if assisted else "vanilla"
                trace.write_csv(traces_dir / f"{alg}_{variant}_run{run}.csv")
                traces.append(trace)
    summary = search.summarize_runs(traces, evaluator)
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    for key, row in summary.items():
        print(f"{key:20s} val {row['mean_val']:.4f}+/-{row['std_val']:.4f} ({row['runs']} runs)")
    _write_manifest(out, "search", config, {"live_trainings": evaluator.live_trainings})
    return EXIT_OK


def cmd_verify(config: ExperimentConfig, out: Path, workers: int, force: bool, args) -> int:
    instances = args.instances if args.instances else config.verify_instances
    theory_csv = out / "theory.csv"
    if _up_to_date(out, "verify", config, [theory_csv], force):
        print(f"verify report up to date at {theory_csv}")
        return EXIT_OK
    reports = theory.run_sweep(
        instances, seed_for(config.seed, "verify"), config.verify_families,
        config.verify_delta, workers,
    )
    _write_csv(theory_csv, theory.REPORT_COLUMNS, [r.row() for r in reports])
    held = sum(r.holds_n3 for r in reports if r.converged)
    conv = sum(r.converged for r in reports)
    _write_manifest(out, "verify", config, {"instances": instances, "converged": conv})
    print(f"verify: {len(reports)} instances, {conv} converged, n^3 bound held on {held}/{conv}")
    return EXIT_OK


COMMANDS = {
    "bench": cmd_bench,
    "score": cmd_score,
    "correlate": cmd_correlate,
    "select": cmd_select,
    "search": cmd_search,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradsign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--force", action="store_true", help="recompute existing artifacts")
        p.add_argument("--seed", type=int, default=None, help="override the config root seed")
        if name in ("score", "correlate"):
            p.add_argument("--metric", action="append", help="restrict to this metric (repeatable)")
        else:
            p.set_defaults(metric=None)
        if name == "verify":
            p.add_argument("--instances", type=int, default=None)
        else:
            p.set_defaults(instances=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failure_marker = out / f"FAILED_{args.command}"
    try:
        code = COMMANDS[args.command](config, out, args.workers, args.force, args)
    except Exception as exc:  # partial outputs stay on disk, marked failed
        failure_marker.write_text(f"{exc}\n\n{traceback.format_exc()}")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if failure_marker.exists():
        failure_marker.unlink()
    return code


if __name__ == "__main__":
    sys.exit(main())
