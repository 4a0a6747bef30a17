"""Zero-cost metrics computed from one mini-batch at a random initialization.

``gradsign`` is the sign-agreement score tau = sum_k |sum_i sign(G[i, k])|
over the per-sample gradient matrix G; the remaining metrics are the usual
gradient-based baselines (grad_norm, snip, grasp, synflow, fisher) plus the
relu activation-pattern kernel score (naswot).  Higher is better for all of
them, so correlation signs stay comparable.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import archspace
from .engine import (
    Batch,
    forward_with_cache,
    hessian_vector_product,
    init_params,
    mean_loss_and_gradient,
    per_sample_gradients,
    relu_activation_patterns,
    seeded_gradient,
)
from .engine.program import ACT_RELU  # noqa: F401  (documented relu requirement)
from .engine.program import I_ACT, I_DST, I_DST_W, I_OP, I_PRE, OP_DENSE, as_program

METRIC_NAMES = ("gradsign", "grad_norm", "snip", "grasp", "synflow", "fisher", "naswot")
NASWOT_EPS = 1e-6


class UnsupportedMetricError(ValueError):
    """Raised when a metric cannot be evaluated on the given architecture."""


@dataclass(frozen=True)
class MetricScore:
    """One metric evaluation; ``flagged`` marks epsilon-regularized naswot
    scores, ``error`` carries a per-arch failure captured by a pool run."""

    metric_name: str
    value: float
    arch_id: int | None = None
    seed: int | None = None
    batch_size: int = 0
    flagged: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class MetricSpec:
    """Everything needed to score a cell architecture on a shared batch."""

    name: str
    space: archspace.SearchSpaceSpec
    num_classes: int
    loss_kind: str = "cross_entropy"
    zero_tol: float = 0.0

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.name!r} (have {METRIC_NAMES})")
        if self.zero_tol < 0:
            raise ValueError("zero_tol must be >= 0")


def sign_matrix(gmat: np.ndarray, zero_tol: float = 0.0) -> np.ndarray:
    """Entry-wise sign with a dead band: +1 above zero_tol, -1 below, else 0."""
    if zero_tol < 0:
        raise ValueError("zero_tol must be >= 0")
    gmat = np.asarray(gmat, dtype=np.float64)
    if not np.all(np.isfinite(gmat)):
        raise ValueError("gradient matrix contains non-finite entries")
    signs = np.zeros(gmat.shape, dtype=np.int8)
    signs[gmat > zero_tol] = 1
    signs[gmat < -zero_tol] = -1
    return signs


def gradsign_statistic(gmat: np.ndarray, zero_tol: float = 0.0) -> float:
    """tau = sum_k |sum_i sign(G[i, k])| for a gradient matrix."""
    signs = sign_matrix(gmat, zero_tol)
    return float(np.abs(signs.sum(axis=0, dtype=np.int64)).sum())


def gradsign_score(
    net,
    theta0: np.ndarray,
    batch: Batch,
    kind: str = "cross_entropy",
    zero_tol: float = 0.0,
) -> MetricScore:
    """Sign-agreement score of the per-sample gradients at ``theta0``."""
    if batch.n < 2:
        raise ValueError("gradsign needs a batch of at least 2 samples")
    gmat = per_sample_gradients(net, theta0, batch, kind)
    value = gradsign_statistic(gmat, zero_tol)
    assert 0.0 <= value <= batch.n * gmat.shape[1]
    return MetricScore("gradsign", value, batch_size=batch.n)


def _grad_norm(net, theta0, batch, kind):
    _, g = mean_loss_and_gradient(net, theta0, batch, kind)
    return float(np.linalg.norm(g))


def _snip(net, theta0, batch, kind):
    _, g = mean_loss_and_gradient(net, theta0, batch, kind)
    return float(np.abs(theta0 * g).sum())


def _grasp(net, theta0, batch, kind):
    _, g = mean_loss_and_gradient(net, theta0, batch, kind)
    hg = hessian_vector_product(net, theta0, batch, kind, g)
    return float(-(hg * theta0).sum())


def _synflow(net, theta0, batch, kind):
    # path-sensitivity: run the network on |theta| with an all-ones input and
    # differentiate the output sum
    prog = as_program(net)
    ones = np.ones((1, prog.input_dim))
    grad = seeded_gradient(net, np.abs(theta0), ones, np.ones((1, prog.output_dim)))
    return float((np.abs(theta0) * grad).sum())


def _fisher(net, theta0, batch, kind):
    prog = as_program(net)
    _, bufmat, premat = forward_with_cache(net, theta0, batch)
    dbufmat = np.zeros_like(bufmat)
    mean_loss_and_gradient(net, theta0, batch, kind, dbuf_out=dbufmat)
    total = 0.0
    out_start = prog.out_slice.start
    for row in prog.instrs.tolist():
        if row[I_OP] != OP_DENSE or row[I_DST] == out_start:
            continue  # classifier logits are not a post-activation channel
        width = row[I_DST_W]
        pre = premat[:, row[I_PRE] : row[I_PRE] + width]
        if row[I_ACT] == 1:
            act = np.maximum(pre, 0.0)
        elif row[I_ACT] == 2:
            act = np.tanh(pre)
        else:
            act = pre
        grad = dbufmat[:, row[I_DST] : row[I_DST] + width]
        total += float(((act * grad) ** 2).sum())
    return total


def _naswot(net, theta0, batch, kind):
    patterns = relu_activation_patterns(net, theta0, batch)
    if patterns.shape[1] == 0:
        raise UnsupportedMetricError("naswot requires at least one relu layer")
    c = patterns.astype(np.float64)
    # agreement kernel: number of relu units with identical on/off state
    kmat = c @ c.T + (1.0 - c) @ (1.0 - c).T
    sign, logdet = np.linalg.slogdet(kmat)
    if sign > 0 and np.isfinite(logdet):
        return float(logdet), False
    sign, logdet = np.linalg.slogdet(kmat + NASWOT_EPS * np.eye(kmat.shape[0]))
    return float(logdet), True


_BASELINES = {
    "grad_norm": _grad_norm,
    "snip": _snip,
    "grasp": _grasp,
    "synflow": _synflow,
    "fisher": _fisher,
}


def baseline_score(
    kind: str,
    net,
    theta0: np.ndarray,
    batch: Batch,
    loss_kind: str = "cross_entropy",
) -> MetricScore:
    """Evaluate one of the baseline metrics (everything except gradsign)."""
    if kind == "naswot":
        value, flagged = _naswot(net, theta0, batch, loss_kind)
        return MetricScore("naswot", value, batch_size=batch.n, flagged=flagged)
    if kind not in _BASELINES:
        raise ValueError(f"unknown baseline metric {kind!r}")
    value = _BASELINES[kind](net, theta0, batch, loss_kind)
    if not np.isfinite(value):
        raise ValueError(f"{kind} produced a non-finite score")
    return MetricScore(kind, float(value), batch_size=batch.n)


def score_network(
    name: str,
    net,
    theta0: np.ndarray,
    batch: Batch,
    loss_kind: str = "cross_entropy",
    zero_tol: float = 0.0,
) -> MetricScore:
    if name == "gradsign":
        return gradsign_score(net, theta0, batch, loss_kind, zero_tol)
    return baseline_score(name, net, theta0, batch, loss_kind)


def score_arch(
    spec: MetricSpec, arch: archspace.CellArch, batch: Batch, seed: int
) -> MetricScore:
    """Materialize, initialize with the shared seed, and score one architecture."""
    exe = archspace.materialize(arch, spec.space, batch.input_dim, spec.num_classes)
    theta0 = init_params(exe, seed)
    score = score_network(spec.name, exe, theta0, batch, spec.loss_kind, spec.zero_tol)
    return replace(score, arch_id=exe.arch_id, seed=seed)


def _score_arch_guarded(spec, arch, batch, seed) -> MetricScore:
    try:
        return score_arch(spec, arch, batch, seed)
    except (ValueError, FloatingPointError) as exc:
        return MetricScore(
            spec.name, float("nan"), arch_id=arch.arch_id, seed=seed,
            batch_size=batch.n, error=str(exc),
        )


def score_pool(
    spec: MetricSpec,
    archs: list[archspace.CellArch],
    batch: Batch,
    seed: int,
    workers: int = 1,
) -> list[MetricScore]:
    """Score every arch on the identical batch and initialization seed.

    Order-preserving; per-arch failures are recorded in the score's ``error``
    field instead of aborting the pool.
    """
    if not archs:
        raise ValueError("empty architecture pool")
    if workers <= 1:
        return [_score_arch_guarded(spec, a, batch, seed) for a in archs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_score_arch_guarded, spec, a, batch, seed) for a in archs]
        return [f.result() for f in futures]
