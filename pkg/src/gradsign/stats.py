"""Rank-correlation statistics and the best-of-N selection protocol.

Spearman's rho uses average ranks for ties; Kendall's tau is the tie-corrected
tau-b, computed in O(n log n) by sorting plus merge-counting discordant swaps
(``kendall_tau_bruteforce`` is the O(n^2) verification oracle).  NAS metric
scores tie frequently, so the tie-aware variants are not optional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import MetricScore
from .seeding import rng_for
from .trainer import BenchTable


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values receive the mean of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _check_pair(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise ValueError("inputs must be 1-D vectors of equal length")
    if xs.size < 2:
        raise ValueError("need at least 2 pairs")
    return xs, ys


def spearman_rho(xs, ys) -> float:
    """Pearson correlation of average-ranked values."""
    xs, ys = _check_pair(xs, ys)
    rx = _average_ranks(xs)
    ry = _average_ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        raise ValueError("rank variance is zero; correlation undefined")
    return float((rx * ry).sum() / denom)


def _tie_term(sorted_vals: np.ndarray) -> int:
    _, counts = np.unique(sorted_vals, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def _merge_count(ys: np.ndarray) -> int:
    """Number of inversions in ys, by mergesort."""
    n = ys.size
    if n < 2:
        return 0
    mid = n // 2
    left = ys[:mid].copy()
    right = ys[mid:].copy()
    swaps = _merge_count(left) + _merge_count(right)
    left.sort(kind="stable")
    right.sort(kind="stable")
    i = j = k = 0
    while i < left.size and j < right.size:
        if left[i] <= right[j]:
            ys[k] = left[i]
            i += 1
        else:
            ys[k] = right[j]
            j += 1
            swaps += left.size - i
        k += 1
    if i < left.size:
        ys[k:] = left[i:]
    else:
        ys[k:] = right[j:]
    return swaps


def kendall_tau(xs, ys) -> float:
    """Tie-corrected tau-b in O(n log n) (sort by x, merge-count y swaps)."""
    xs, ys = _check_pair(xs, ys)
    n = xs.size
    order = np.lexsort((ys, xs))
    xs_s = xs[order]
    ys_s = ys[order]
    n0 = n * (n - 1) // 2
    n1 = _tie_term(xs_s)
    n2 = _tie_term(ys_s)
    # joint ties: count runs of equal (x, y)
    joint = np.flatnonzero((np.diff(xs_s) != 0) | (np.diff(ys_s) != 0))
    run_lengths = np.diff(np.concatenate([[-1], joint, [n - 1]]))
    n3 = int((run_lengths * (run_lengths - 1) // 2).sum())
    swaps = _merge_count(ys_s.copy())
    denom = np.sqrt(float(n0 - n1) * float(n0 - n2))
    if denom == 0.0:
        raise ValueError("all values tied; tau undefined")
    concordant_minus_discordant = n0 - n1 - n2 + n3 - 2 * swaps
    return float(concordant_minus_discordant / denom)


def kendall_tau_bruteforce(xs, ys) -> float:
    """O(n^2) pair-count oracle for :func:`kendall_tau`."""
    xs, ys = _check_pair(xs, ys)
    n = xs.size
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n - 1):
        dx = xs[i + 1 :] - xs[i]
        dy = ys[i + 1 :] - ys[i]
        prod = dx * dy
        concordant += int((prod > 0).sum())
        discordant += int((prod < 0).sum())
        ties_x += int(((dx == 0) & (dy != 0)).sum())
        ties_y += int(((dy == 0) & (dx != 0)).sum())
    denom = np.sqrt(
        float(concordant + discordant + ties_x) * float(concordant + discordant + ties_y)
    )
    if denom == 0.0:
        raise ValueError("all values tied; tau undefined")
    return float((concordant - discordant) / denom)


@dataclass(frozen=True)
class CorrelationReport:
    metric_name: str
    n_pairs: int
    spearman: float
    kendall: float
    tied_score_pairs: int
    tied_acc_pairs: int


def correlate(bench: BenchTable, scores: list[MetricScore]) -> CorrelationReport:
    """Rank correlation of metric scores against bench test accuracies.

    Diverged bench entries and failed scores are excluded.
    """
    xs, ys = [], []
    for score in scores:
        if not score.ok or score.arch_id is None:
            continue
        if score.arch_id not in bench:
            raise KeyError(f"arch {score.arch_id} missing from the bench table")
        result = bench.get(score.arch_id)
        if result.diverged:
            continue
        xs.append(score.value)
        ys.append(result.test_acc)
    if len(xs) < 2:
        raise ValueError("fewer than 2 usable (score, accuracy) pairs")
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    name = scores[0].metric_name if scores else "?"
    return CorrelationReport(
        metric_name=name,
        n_pairs=xs.size,
        spearman=spearman_rho(xs, ys),
        kendall=kendall_tau(xs, ys),
        tied_score_pairs=_tie_term(np.sort(xs)),
        tied_acc_pairs=_tie_term(np.sort(ys)),
    )


@dataclass(frozen=True)
class SelectionStats:
    mean_val: float
    std_val: float
    mean_test: float
    std_test: float


@dataclass(frozen=True)
class SelectionReport:
    """Best-of-N outcome for the metric pick vs the random and per-sample
    optimal comparators (optimal = true test-accuracy argmax of the same N)."""

    metric_name: str
    n_candidates: int
    runs: int
    metric: SelectionStats
    random: SelectionStats
    optimal: SelectionStats
    per_run_test: dict[str, np.ndarray]
    per_run_val: dict[str, np.ndarray]


def _stats(vals: np.ndarray, tests: np.ndarray) -> SelectionStats:
    ddof = 1 if vals.size > 1 else 0
    return SelectionStats(
        float(vals.mean()), float(vals.std(ddof=ddof)),
        float(tests.mean()), float(tests.std(ddof=ddof)),
    )


def best_of_n_selection(
    scores: dict[int, float],
    bench: BenchTable,
    n_candidates: int,
    runs: int,
    seed: int,
    metric_name: str = "metric",
) -> SelectionReport:
    """Repeatedly sample N archs without replacement and pick the score argmax.

    ``scores`` maps arch ids to metric values (precompute once with
    ``metrics.score_pool``).  Records the same-N random pick and true-best
    pick per run; aggregates mean +/- std over runs.
    """
    ids = np.array([i for i in bench.usable_ids() if i in scores])
    if n_candidates < 1 or n_candidates > ids.size:
        raise ValueError(f"n_candidates must lie in [1, {ids.size}]")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    vals = {i: bench.get(i).val_acc for i in ids}
    tests = {i: bench.get(i).test_acc for i in ids}
    score_arr = {i: scores[i] for i in ids}

    picks = {"metric": [], "random": [], "optimal": []}
    for run in range(runs):
        rng = rng_for(seed, "selection", run)
        cand = rng.choice(ids, size=n_candidates, replace=False)
        metric_pick = max(cand, key=lambda i: (score_arr[i], -i))
        random_pick = cand[int(rng.integers(n_candidates))]
        optimal_pick = max(cand, key=lambda i: (tests[i], -i))
        picks["metric"].append(metric_pick)
        picks["random"].append(random_pick)
        picks["optimal"].append(optimal_pick)

    per_run_val = {k: np.array([vals[i] for i in v]) for k, v in picks.items()}
    per_run_test = {k: np.array([tests[i] for i in v]) for k, v in picks.items()}
    return SelectionReport(
        metric_name=metric_name,
        n_candidates=n_candidates,
        runs=runs,
        metric=_stats(per_run_val["metric"], per_run_test["metric"]),
        random=_stats(per_run_val["random"], per_run_test["random"]),
        optimal=_stats(per_run_val["optimal"], per_run_test["optimal"]),
        per_run_test=per_run_test,
        per_run_val=per_run_val,
    )
