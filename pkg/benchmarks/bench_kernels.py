"""Times the compiled core against the pure-numpy fallback on the hot kernels.

Run after installing the package:

    python benchmarks/bench_kernels.py [--batch 64] [--repeats 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gradsign import archspace
from gradsign.engine import (
    Batch,
    available_cores,
    forward,
    init_params,
    mean_loss_and_gradient,
    per_sample_gradients,
    use_core,
)
from gradsign.trainer import TrainConfig, make_synthetic_dataset, train


def _time(fn, repeats: int) -> float:
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    space = archspace.SearchSpaceSpec()
    exe = archspace.materialize(archspace.decode_arch(13131), space, 2, 2)
    theta = init_params(exe, 0)
    batch = Batch(rng.normal(size=(args.batch, 2)), rng.integers(0, 2, args.batch))
    dataset = make_synthetic_dataset("two_spirals", 400, 2, 2, 0.1, seed=0)
    config = TrainConfig(epochs=5, seed=0)

    kernels = {
        "forward": lambda: forward(exe, theta, batch),
        "per_sample_gradients": lambda: per_sample_gradients(exe, theta, batch, "cross_entropy"),
        "mean_loss_and_gradient": lambda: mean_loss_and_gradient(exe, theta, batch, "cross_entropy"),
        "train_5_epochs": lambda: train(exe, theta, dataset, config),
    }
    cores = available_cores()
    if len(cores) < 2:
        print(f"only {cores} available; build the extension to compare cores")

    results: dict[str, dict[str, float]] = {}
    for core in cores:
        with use_core(core):
            for name, fn in kernels.items():
                repeats = args.repeats if name != "train_5_epochs" else max(1, args.repeats // 40)
                results.setdefault(name, {})[core] = _time(fn, repeats)

    width = max(len(k) for k in kernels)
    header = f"{'kernel':<{width}}  " + "".join(f"{c:>14}" for c in cores)
    if len(cores) == 2:
        header += f"{'speedup':>10}"
    print(f"\narch 13131 ({exe.num_params} params), batch {args.batch}\n")
    print(header)
    for name, timings in results.items():
        row = f"{name:<{width}}  " + "".join(f"{timings[c] * 1e6:>12.1f}us" for c in cores)
        if len(cores) == 2:
            row += f"{timings['python'] / timings['compiled']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
