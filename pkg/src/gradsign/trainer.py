"""Ground-truth accuracies for the search space: synthetic datasets, SGD
training, and a persisted arch-id -> result lookup table.

Per-arch costs are charged from a deterministic FLOP-proportional model
(seconds = COST_PER_UNIT * epochs * train samples * parameters) rather than
measured time, so bench files and simulated search budgets are bit-stable
across reruns and machines.
"""

from __future__ import annotations

import csv
import json
import hashlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import archspace
from .engine import Batch, forward, init_params, mean_loss_and_gradient, per_sample_losses
from .seeding import seed_for

DATASET_KINDS = ("gaussian_blobs", "two_spirals")
TRAIN_COST_PER_UNIT = 2e-9  # simulated seconds per (epoch * sample * parameter)

BENCH_COLUMNS = ("arch_id", "train_loss", "val_acc", "test_acc", "cost_seconds", "diverged")


@dataclass(frozen=True)
class Dataset:
    kind: str
    seed: int
    noise: float
    num_classes: int
    inputs: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,) int64
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.inputs[idx], self.labels[idx])

    def split_batch(self, name: str) -> Batch:
        return self.batch(getattr(self, f"{name}_idx"))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.kind}|{self.seed}|{self.noise}|{self.num_classes}".encode())
        for arr in (self.inputs, self.labels, self.train_idx, self.val_idx, self.test_idx):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def _spiral_points(count, turn, noise, rng):
    t = rng.random(count)
    radius = 0.15 + 0.85 * t
    angle = turn * t
    pts = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return pts + noise * rng.standard_normal(pts.shape)


def make_synthetic_dataset(
    kind: str,
    n_samples: int = 2000,
    dim: int = 2,
    classes: int = 2,
    noise: float = 0.1,
    seed: int = 0,
) -> Dataset:
    """Deterministic labelled point cloud with a 70/15/15 split.

    ``two_spirals`` interleaves two arms rotated by pi (classes must be 2);
    ``gaussian_blobs`` places class centers on a circle of radius 1.5.
    Class counts are balanced within one sample.
    """
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if kind == "two_spirals" and classes != 2:
        raise ValueError("two_spirals defines exactly 2 classes")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if n_samples < classes * 10:
        raise ValueError("n_samples too small for a balanced class split")
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = [n_samples // classes] * classes
    for c in range(n_samples - sum(counts)):
        counts[c] += 1

    xs, ys = [], []
    for c, count in enumerate(counts):
        if kind == "two_spirals":
            pts = _spiral_points(count, turn=2.5 * np.pi, noise=noise, rng=rng)
            if c == 1:
                pts = -pts
        else:
            angle = 2.0 * np.pi * c / classes
            center = 1.5 * np.array([np.cos(angle), np.sin(angle)])
            pts = center + noise * rng.standard_normal((count, 2))
        if dim > 2:
            pts = np.concatenate([pts, noise * rng.standard_normal((count, dim - 2))], axis=1)
        xs.append(pts)
        ys.append(np.full(count, c, dtype=np.int64))

    inputs = np.concatenate(xs)
    labels = np.concatenate(ys)
    perm = rng.permutation(n_samples)
    n_train = int(round(0.7 * n_samples))
    n_val = int(round(0.15 * n_samples))
    return Dataset(
        kind=kind,
        seed=seed,
        noise=noise,
        num_classes=classes,
        inputs=inputs[perm],
        labels=labels[perm],
        train_idx=np.arange(0, n_train),
        val_idx=np.arange(n_train, n_train + n_val),
        test_idx=np.arange(n_train + n_val, n_samples),
    )


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def fingerprint(self) -> str:
        key = json.dumps(
            {k: getattr(self, k) for k in ("lr", "momentum", "epochs", "batch_size", "weight_decay", "seed")},
            sort_keys=True,
        )
        return hashlib.sha256(key.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TrainedResult:
    arch_id: int | None
    train_loss: float
    val_acc: float
    test_acc: float
    cost_seconds: float
    epoch_curve: tuple[float, ...]  # validation accuracy after each epoch
    diverged: bool = False

    @property
    def best_epoch(self) -> int:
        return int(np.argmax(self.epoch_curve)) + 1


def accuracy(net, theta: np.ndarray, batch: Batch) -> float:
    pred = forward(net, theta, batch).argmax(axis=1)
    return float((pred == batch.labels).mean())


def train(net, theta0: np.ndarray, dataset: Dataset, config: TrainConfig) -> TrainedResult:
    """SGD with momentum on cross-entropy; reports the best-validation-epoch
    test accuracy.  Fully deterministic for fixed seeds, including shuffling."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    theta = np.array(theta0, dtype=np.float64)
    velocity = np.zeros_like(theta)
    train_idx = dataset.train_idx
    val_batch = dataset.split_batch("val")
    arch_id = getattr(net, "arch_id", None)
    num_params = theta.size

    curve: list[float] = []
    best_val = -1.0
    best_theta = theta.copy()
    diverged = False
    epochs_run = 0
    for _epoch in range(config.epochs):
        perm = rng.permutation(train_idx)
        for start in range(0, perm.size, config.batch_size):
            batch = dataset.batch(perm[start : start + config.batch_size])
            loss, grad = mean_loss_and_gradient(net, theta, batch, "cross_entropy")
            if not np.isfinite(loss):
                diverged = True
                break
            if config.weight_decay:
                grad = grad + config.weight_decay * theta
            velocity = config.momentum * velocity - config.lr * grad
            theta += velocity
        if diverged:
            break
        epochs_run += 1
        val_acc = accuracy(net, theta, val_batch)
        curve.append(val_acc)
        if val_acc > best_val:
            best_val = val_acc
            best_theta = theta.copy()

    cost = TRAIN_COST_PER_UNIT * max(epochs_run, 1) * train_idx.size * num_params
    if diverged or not curve:
        return TrainedResult(arch_id, float("nan"), 0.0, 0.0, cost, tuple(curve), diverged=True)
    train_loss = float(
        per_sample_losses(
            forward(net, best_theta, dataset.split_batch("train").inputs),
            dataset.split_batch("train").labels,
            "cross_entropy",
        ).mean()
    )
    test_acc = accuracy(net, best_theta, dataset.split_batch("test"))
    return TrainedResult(arch_id, train_loss, best_val, test_acc, cost, tuple(curve))


@dataclass
class BenchTable:
    """arch_id -> TrainedResult lookup with dataset/config fingerprints."""

    dataset_fingerprint: str
    config_fingerprint: str
    results: dict[int, TrainedResult] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.results)

    def __contains__(self, arch_id: int) -> bool:
        return arch_id in self.results

    def get(self, arch_id: int) -> TrainedResult:
        return self.results[arch_id]

    def ids(self) -> list[int]:
        return sorted(self.results)

    def usable_ids(self) -> list[int]:
        return [i for i in self.ids() if not self.results[i].diverged]

    def add(self, result: TrainedResult) -> None:
        self.results[result.arch_id] = result

    def save(self, csv_path: str | Path) -> None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(BENCH_COLUMNS)
            for arch_id in self.ids():
                r = self.results[arch_id]
                writer.writerow(
                    [arch_id, repr(r.train_loss), repr(r.val_acc), repr(r.test_acc),
                     repr(r.cost_seconds), int(r.diverged)]
                )
        sidecar = {
            "dataset_fingerprint": self.dataset_fingerprint,
            "config_fingerprint": self.config_fingerprint,
            "epoch_curves": {str(i): list(self.results[i].epoch_curve) for i in self.ids()},
        }
        with open(self._sidecar_path(csv_path), "w") as fh:
            json.dump(sidecar, fh, sort_keys=True)

    @staticmethod
    def _sidecar_path(csv_path: Path) -> Path:
        return csv_path.with_suffix(".json")

    @classmethod
    def load(cls, csv_path: str | Path) -> "BenchTable":
        csv_path = Path(csv_path)
        with open(cls._sidecar_path(csv_path)) as fh:
            sidecar = json.load(fh)
        table = cls(sidecar["dataset_fingerprint"], sidecar["config_fingerprint"])
        curves = sidecar["epoch_curves"]
        with open(csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                arch_id = int(row["arch_id"])
                table.results[arch_id] = TrainedResult(
                    arch_id=arch_id,
                    train_loss=float(row["train_loss"]),
                    val_acc=float(row["val_acc"]),
                    test_acc=float(row["test_acc"]),
                    cost_seconds=float(row["cost_seconds"]),
                    epoch_curve=tuple(curves.get(str(arch_id), ())),
                    diverged=bool(int(row["diverged"])),
                )
        return table


def train_arch(
    arch_id: int,
    space: archspace.SearchSpaceSpec,
    dataset: Dataset,
    config: TrainConfig,
) -> TrainedResult:
    """Materialize and train one architecture.  The init and shuffle streams
    derive from (config.seed, arch_id) only, so results are a pure function
    of the architecture and never depend on scheduling."""
    exe = archspace.materialize(
        archspace.decode_arch(arch_id), space, dataset.dim, dataset.num_classes
    )
    theta0 = init_params(exe, seed_for(config.seed, "init", arch_id))
    run_config = replace(config, seed=seed_for(config.seed, "shuffle", arch_id))
    return train(exe, theta0, dataset, run_config)


def _train_arch_job(args):
    return train_arch(*args)


def build_bench(
    space: archspace.SearchSpaceSpec,
    arch_ids,
    dataset: Dataset,
    config: TrainConfig,
    workers: int = 1,
    csv_path: str | Path | None = None,
) -> BenchTable:
    """Train every listed architecture into a BenchTable.

    With ``csv_path`` the table persists incrementally after each completed
    architecture and a rerun picks up only the missing ids (fingerprints must
    match).  Worker count never changes the values.
    """
    arch_ids = sorted({int(a) for a in arch_ids})
    if not arch_ids:
        raise ValueError("empty architecture id list")
    ds_fp = dataset.fingerprint()
    cfg_fp = config.fingerprint()
    table = BenchTable(ds_fp, cfg_fp)
    csv_path = Path(csv_path) if csv_path is not None else None
    if csv_path is not None and csv_path.exists():
        existing = BenchTable.load(csv_path)
        if (existing.dataset_fingerprint, existing.config_fingerprint) != (ds_fp, cfg_fp):
            raise ValueError("existing bench was built from a different dataset/config")
        table.results.update(existing.results)
    todo = [a for a in arch_ids if a not in table]

    def persist():
        if csv_path is not None:
            table.save(csv_path)

    if workers <= 1:
        for arch_id in todo:
            table.add(train_arch(arch_id, space, dataset, config))
            persist()
    else:
        jobs = [(a, space, dataset, config) for a in todo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_train_arch_job, j) for j in jobs]
            for fut in as_completed(futures):
                table.add(fut.result())
                persist()
    persist()
    return table
