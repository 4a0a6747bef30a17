"""Search algorithms over the cell space, with and without metric assistance.

Four searchers share one contract: an evaluator that prices accuracy
evaluations (stored bench cost; live training when an arch is missing) and
metric scorings (FLOP-proportional simulated cost), and a simulated-seconds
budget.  The assisted variants replace random candidate selection with the
gradsign argmax of a scored pool.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archspace import CellArch, SearchSpaceSpec, decode_arch, mutate_arch, random_arch
from .engine import Batch, softmax
from .metrics import MetricSpec, score_arch
from .trainer import BenchTable, Dataset, TrainConfig, TrainedResult, train_arch

METRIC_COST_PER_UNIT = 6e-9  # simulated seconds per (batch sample * parameter)

TRACE_COLUMNS = ("step", "action", "arch_id", "value", "cum_budget")


@dataclass
class Budget:
    """Simulated seconds; charges may overshoot by at most one in-flight cost."""

    total: float
    consumed: float = 0.0

    def __post_init__(self):
        if self.total <= 0:
            raise ValueError("budget must be positive")

    def charge(self, cost: float) -> None:
        self.consumed += cost

    @property
    def exhausted(self) -> bool:
        return self.consumed >= self.total


def _as_budget(budget) -> Budget:
    return budget if isinstance(budget, Budget) else Budget(float(budget))


@dataclass(frozen=True)
class TraceEvent:
    step: int
    action: str  # "scored" | "evaluated"
    arch_id: int
    value: float
    cum_budget: float
    epochs: int | None = None  # set for partial-budget evaluations (hyperband)


@dataclass
class SearchTrace:
    """Time-ordered record of one search run."""

    algorithm: str
    assisted: bool
    seed: int
    events: list[TraceEvent] = field(default_factory=list)
    sampled_arch_ids: list[int] = field(default_factory=list)  # reinforce pre-mutation draws
    flagged: bool = False  # budget died before the searcher finished warming up
    score_cache_hits: int = 0
    full_budget_epochs: int | None = None

    def record(self, action: str, arch_id: int, value: float, budget: Budget,
               epochs: int | None = None) -> None:
        self.events.append(
            TraceEvent(len(self.events), action, arch_id, value, budget.consumed, epochs)
        )

    def evaluated(self) -> list[TraceEvent]:
        return [e for e in self.events if e.action == "evaluated"]

    def best_evaluated(self) -> TraceEvent | None:
        events = self.evaluated()
        if self.full_budget_epochs is not None:
            full = [e for e in events if e.epochs == self.full_budget_epochs]
            events = full or events
        if not events:
            return None
        return max(events, key=lambda e: (e.value, -e.step))

    @property
    def final_arch_id(self) -> int | None:
        best = self.best_evaluated()
        return None if best is None else best.arch_id

    def best_value_so_far(self) -> list[float]:
        best = -math.inf
        out = []
        for e in self.evaluated():
            best = max(best, e.value)
            out.append(best)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for e in self.events:
                writer.writerow([e.step, e.action, e.arch_id, repr(e.value), repr(e.cum_budget)])


class BenchEvaluator:
    """Accuracy and metric oracle used by the searchers.

    Accuracy is a pure function of the arch id: lookups hit the bench table,
    and missing ids are trained live (then memoized) when a dataset and train
    config are supplied.  Metric scores share one initialization seed and are
    memoized per arch id.
    """

    def __init__(
        self,
        space: SearchSpaceSpec,
        bench: BenchTable | None = None,
        dataset: Dataset | None = None,
        train_config: TrainConfig | None = None,
        metric_spec: MetricSpec | None = None,
        metric_batch: Batch | None = None,
        metric_seed: int = 0,
    ):
        if bench is None and (dataset is None or train_config is None):
            raise ValueError("need a bench table or a dataset + train config")
        self.space = space
        self.dataset = dataset
        self.train_config = train_config
        if bench is None:
            bench = BenchTable(dataset.fingerprint(), train_config.fingerprint())
        self.bench = bench
        self.metric_spec = metric_spec
        self.metric_batch = metric_batch
        self.metric_seed = metric_seed
        self._score_cache: dict[int, tuple[float, float]] = {}
        self.score_computations = 0
        self.live_trainings = 0

    @property
    def max_epochs(self) -> int:
        if self.train_config is not None:
            return self.train_config.epochs
        for result in self.bench.results.values():
            if result.epoch_curve:
                return len(result.epoch_curve)
        raise ValueError("bench table carries no epoch curves")

    def lookup(self, arch_id: int) -> TrainedResult:
        if arch_id not in self.bench:
            if self.dataset is None or self.train_config is None:
                raise KeyError(f"arch {arch_id} not in bench and live training disabled")
            self.live_trainings += 1
            self.bench.add(train_arch(arch_id, self.space, self.dataset, self.train_config))
        return self.bench.get(arch_id)

    def evaluate(self, arch: CellArch) -> tuple[float, float, float]:
        """Full-budget evaluation: (val acc, test acc, simulated cost)."""
        r = self.lookup(arch.arch_id)
        return r.val_acc, r.test_acc, r.cost_seconds

    def evaluate_partial(self, arch: CellArch, epochs: int) -> tuple[float, float]:
        """Accuracy after `epochs` of training, at proportional cost."""
        r = self.lookup(arch.arch_id)
        curve = r.epoch_curve
        if not curve:
            return r.val_acc, r.cost_seconds
        e = max(1, min(int(epochs), len(curve)))
        return float(max(curve[:e])), r.cost_seconds * e / len(curve)

    def score(self, arch: CellArch) -> tuple[float, float]:
        """Metric score and its simulated cost (memoized per arch id)."""
        if self.metric_spec is None or self.metric_batch is None:
            raise ValueError("evaluator was built without metric scoring support")
        arch_id = arch.arch_id
        if arch_id not in self._score_cache:
            self.score_computations += 1
            result = score_arch(self.metric_spec, arch, self.metric_batch, self.metric_seed)
            if not result.ok:
                raise ValueError(f"metric failed on arch {arch_id}: {result.error}")
            exe_params = _num_params(self.space, arch, self.metric_batch.input_dim,
                                     self.metric_spec.num_classes)
            cost = METRIC_COST_PER_UNIT * self.metric_batch.n * exe_params
            self._score_cache[arch_id] = (result.value, cost)
        return self._score_cache[arch_id]


def _num_params(space, arch, input_dim, num_classes) -> int:
    from .archspace import materialize

    return materialize(arch, space, input_dim, num_classes).num_params


def _score_candidates(evaluator, budget, trace, candidates):
    """Score a pool, charging each member; None if the budget dies mid-pool."""
    scored = []
    for arch in candidates:
        if budget.exhausted:
            return None
        value, cost = evaluator.score(arch)
        budget.charge(cost)
        trace.record("scored", arch.arch_id, value, budget)
        scored.append((arch, value))
    return scored


def _pick_best(scored):
    return max(scored, key=lambda t: t[1])[0]


def run_rs(evaluator, budget, assisted: bool = True, pool_size: int = 8, seed: int = 0) -> SearchTrace:
    """Random search; assisted runs evaluate only the score argmax of each
    random pool.  Unassisted is the pool-of-one special case."""
    budget = _as_budget(budget)
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    trace = SearchTrace("rs", assisted, seed)
    pool_n = pool_size if assisted else 1
    while not budget.exhausted:
        candidates = [random_arch(rng) for _ in range(pool_n)]
        if pool_n > 1:
            scored = _score_candidates(evaluator, budget, trace, candidates)
            if not scored:
                break
            arch = _pick_best(scored)
        else:
            arch = candidates[0]
        if budget.exhausted:
            break
        val, _test, cost = evaluator.evaluate(arch)
        budget.charge(cost)
        trace.record("evaluated", arch.arch_id, val, budget)
    return trace


def run_rea(
    evaluator,
    budget,
    assisted: bool = True,
    population_size: int = 20,
    sample_size: int = 10,
    pool_size: int = 8,
    seed: int = 0,
) -> SearchTrace:
    """Aging evolution: tournament parent, single-edge mutation children,
    oldest member retired each step.  Assisted picks the mutation pool's
    score argmax as the child."""
    budget = _as_budget(budget)
    if not (population_size >= sample_size >= 1):
        raise ValueError("need population_size >= sample_size >= 1")
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    trace = SearchTrace("rea", assisted, seed)
    population: deque[tuple[CellArch, float]] = deque()
    for _ in range(population_size):
        if budget.exhausted:
            trace.flagged = True  # returns best of the partial population
            return trace
        arch = random_arch(rng)
        val, _test, cost = evaluator.evaluate(arch)
        budget.charge(cost)
        trace.record("evaluated", arch.arch_id, val, budget)
        population.append((arch, val))
    pool_n = pool_size if assisted else 1
    while not budget.exhausted:
        contenders = [population[int(rng.integers(len(population)))] for _ in range(sample_size)]
        parent = max(contenders, key=lambda t: t[1])[0]
        candidates = [mutate_arch(parent, rng) for _ in range(pool_n)]
        if pool_n > 1:
            scored = _score_candidates(evaluator, budget, trace, candidates)
            if not scored:
                break
            child = _pick_best(scored)
        else:
            child = candidates[0]
        if budget.exhausted:
            break
        val, _test, cost = evaluator.evaluate(child)
        budget.charge(cost)
        trace.record("evaluated", child.arch_id, val, budget)
        population.append((child, val))
        population.popleft()
    return trace


def run_reinforce(
    evaluator,
    budget,
    assisted: bool = True,
    pool_size: int = 8,
    lr: float = 0.05,
    baseline_decay: float = 0.9,
    seed: int = 0,
) -> SearchTrace:
    """Per-edge categorical policy gradient with an EMA reward baseline.

    The assisted variant evaluates the score argmax of pool_size mutations of
    the sampled arch; the policy update still applies the (reward - baseline)
    advantage to the log-probability of the *sampled* arch, so the reward of
    the mutated arch reinforces its pre-mutation parent.  lr = 0 freezes the
    policy.
    """
    budget = _as_budget(budget)
    if lr < 0:
        raise ValueError("lr must be >= 0")
    if not 0 <= baseline_decay < 1:
        raise ValueError("baseline_decay must lie in [0, 1)")
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    trace = SearchTrace("reinforce", assisted, seed)
    logits = np.zeros((6, 5))
    baseline = 0.0
    while not budget.exhausted:
        probs = softmax(logits)
        ops = tuple(int(rng.choice(5, p=probs[e])) for e in range(6))
        sampled = CellArch(ops)
        trace.sampled_arch_ids.append(sampled.arch_id)
        if assisted:
            candidates = [mutate_arch(sampled, rng) for _ in range(pool_size)]
            if pool_size > 1:
                scored = _score_candidates(evaluator, budget, trace, candidates)
                if not scored:
                    break
                child = _pick_best(scored)
            else:
                child = candidates[0]
        else:
            child = sampled
        if budget.exhausted:
            break
        reward, _test, cost = evaluator.evaluate(child)
        budget.charge(cost)
        trace.record("evaluated", child.arch_id, reward, budget)
        baseline = baseline_decay * baseline + (1.0 - baseline_decay) * reward
        advantage = reward - baseline
        grad = -probs.copy()
        for e, op in enumerate(ops):
            grad[e, op] += 1.0
        logits += lr * advantage * grad
    return trace


def hyperband_schedule(b_min: int, b_max: int, eta: int) -> list[tuple[int, int, list[int]]]:
    """Bracket plan: (s, configs, rung budgets) for s = s_max .. 0.

    Bracket s starts n = ceil((s_max+1)/(s+1) * eta^s) configs at
    b_max * eta^-s epochs and multiplies the budget by eta each rung.
    """
    if b_min < 1 or b_min > b_max:
        raise ValueError("need 1 <= b_min <= b_max")
    if eta < 2:
        raise ValueError("eta must be >= 2")
    s_max = 0
    while b_min * eta ** (s_max + 1) <= b_max:
        s_max += 1
    plan = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) / (s + 1) * eta**s)
        budgets = [max(1, round(b_max * float(eta) ** (i - s))) for i in range(s + 1)]
        plan.append((s, n, budgets))
    return plan


def run_hb(
    evaluator,
    budget,
    assisted: bool = True,
    b_min: int = 1,
    b_max: int | None = None,
    eta: int = 3,
    pool_size: int = 8,
    seed: int = 0,
) -> SearchTrace:
    """Hyperband over training epochs with successive halving inside brackets.

    Assisted proposals take the score argmax of pool_size random archs, with
    scores cached per arch id; cache hits cost nothing.  Bracket sweeps
    repeat until the budget runs out, and the returned arch is the best among
    full-budget evaluations.
    """
    budget = _as_budget(budget)
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    if b_max is None:
        b_max = evaluator.max_epochs
    plan = hyperband_schedule(b_min, b_max, eta)
    rng = np.random.Generator(np.random.PCG64(seed))
    trace = SearchTrace("hb", assisted, seed)
    trace.full_budget_epochs = b_max
    score_list: dict[int, float] = {}

    def propose():
        if not assisted:
            return random_arch(rng)
        best = None
        for _ in range(pool_size):
            arch = random_arch(rng)
            arch_id = arch.arch_id
            if arch_id in score_list:
                trace.score_cache_hits += 1
                value = score_list[arch_id]
            else:
                if budget.exhausted:
                    return None
                value, cost = evaluator.score(arch)
                budget.charge(cost)
                trace.record("scored", arch_id, value, budget)
                score_list[arch_id] = value
            if best is None or value > best[1]:
                best = (arch, value)
        return best[0]

    while not budget.exhausted:
        for _s, n_configs, rung_budgets in plan:
            if budget.exhausted:
                break
            configs = []
            while len(configs) < n_configs and not budget.exhausted:
                arch = propose()
                if arch is None:
                    break
                configs.append(arch)
            current = configs
            for rung, epochs in enumerate(rung_budgets):
                outcomes = []
                for arch in current:
                    if budget.exhausted:
                        break
                    val, cost = evaluator.evaluate_partial(arch, epochs)
                    budget.charge(cost)
                    trace.record("evaluated", arch.arch_id, val, budget, epochs=epochs)
                    outcomes.append((arch, val))
                if len(outcomes) < len(current):
                    break
                if rung < len(rung_budgets) - 1:
                    keep = max(1, len(outcomes) // eta)
                    order = sorted(range(len(outcomes)), key=lambda i: (-outcomes[i][1], i))
                    current = [outcomes[i][0] for i in order[:keep]]
    return trace


ALGORITHMS = {
    "rs": run_rs,
    "rea": run_rea,
    "reinforce": run_reinforce,
    "hb": run_hb,
}


def summarize_runs(traces: list[SearchTrace], evaluator) -> dict:
    """Group finished runs by (algorithm, assisted) and aggregate the final
    archs' val/test accuracies, mirroring the usual assisted-vs-vanilla table."""
    groups: dict[tuple[str, bool], list[SearchTrace]] = {}
    for t in traces:
        groups.setdefault((t.algorithm, t.assisted), []).append(t)
    summary = {}
    for (alg, assisted), group in sorted(groups.items()):
        vals, tests = [], []
        for t in group:
            arch_id = t.final_arch_id
            if arch_id is None:
                continue
            r = evaluator.lookup(arch_id)
            vals.append(r.val_acc)
            tests.append(r.test_acc)
        vals = np.asarray(vals)
        tests = np.asarray(tests)
        ddof = 1 if vals.size > 1 else 0
        key = f"{alg}[{'assisted' if assisted else 'vanilla'}]"
        summary[key] = {
            "runs": int(vals.size),
            "mean_val": float(vals.mean()) if vals.size else float("nan"),
            "std_val": float(vals.std(ddof=ddof)) if vals.size else float("nan"),
            "mean_test": float(tests.mean()) if tests.size else float("nan"),
            "std_test": float(tests.std(ddof=ddof)) if tests.size else float("nan"),
        }
    return summary
