"""Dataset generation, SGD training, and bench-table persistence."""

import numpy as np
import pytest

from gradsign import archspace as A
from gradsign import trainer as TR
from gradsign.engine import LayerSpec, NetworkSpec, init_params


@pytest.fixture(scope="module")
def spiral_ds():
    return TR.make_synthetic_dataset("two_spirals", 600, 2, 2, 0.1, seed=3)


class TestDatasets:
    def test_same_seed_bit_identical(self):
        a = TR.make_synthetic_dataset("gaussian_blobs", 300, 2, 3, 0.2, seed=5)
        b = TR.make_synthetic_dataset("gaussian_blobs", 300, 2, 3, 0.2, seed=5)
        assert a.inputs.tobytes() == b.inputs.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
        assert a.fingerprint() == b.fingerprint()

    def test_splits_disjoint_and_exhaustive(self, spiral_ds):
        combined = np.concatenate([spiral_ds.train_idx, spiral_ds.val_idx, spiral_ds.test_idx])
        assert np.array_equal(np.sort(combined), np.arange(spiral_ds.n))

    def test_classes_balanced_within_one(self):
        ds = TR.make_synthetic_dataset("gaussian_blobs", 301, 2, 3, 0.1, seed=1)
        counts = np.bincount(ds.labels)
        assert counts.max() - counts.min() <= 1

    def test_blobs_noise_zero_linearly_learnable(self):
        ds = TR.make_synthetic_dataset("gaussian_blobs", 200, 2, 2, 0.0, seed=1)
        net = NetworkSpec(2, (LayerSpec(2, "identity"),))
        result = TR.train(net, init_params(net, 0), ds, TR.TrainConfig(epochs=15, seed=0))
        assert result.test_acc == 1.0

    def test_spirals_separate_linear_from_dense(self, spiral_ds):
        ds = TR.make_synthetic_dataset("two_spirals", 2000, 2, 2, 0.1, seed=9)
        net = NetworkSpec(2, (LayerSpec(2, "identity"),))
        linear = TR.train(net, init_params(net, 0), ds, TR.TrainConfig(epochs=30, seed=0))
        assert linear.test_acc < 0.70
        arch = A.CellArch((2, 2, 2, 2, 2, 2))
        dense = TR.train_arch(arch.arch_id, A.SearchSpaceSpec(), ds, TR.TrainConfig(seed=0))
        assert dense.test_acc > 0.85

    def test_spirals_need_two_classes(self):
        with pytest.raises(ValueError):
            TR.make_synthetic_dataset("two_spirals", 300, 2, 3, 0.1, seed=0)

    def test_minimum_size_enforced(self):
        with pytest.raises(ValueError):
            TR.make_synthetic_dataset("gaussian_blobs", 15, 2, 2, 0.1, seed=0)


class TestTrain:
    def test_fixed_seed_reproducible(self, spiral_ds):
        result_a = TR.train_arch(77, A.SearchSpaceSpec(), spiral_ds, TR.TrainConfig(epochs=5, seed=4))
        result_b = TR.train_arch(77, A.SearchSpaceSpec(), spiral_ds, TR.TrainConfig(epochs=5, seed=4))
        assert result_a == result_b

    def test_zero_ops_arch_near_chance(self, spiral_ds):
        result = TR.train_arch(0, A.SearchSpaceSpec(), spiral_ds, TR.TrainConfig(epochs=8, seed=1))
        assert abs(result.test_acc - 0.5) <= 0.1  # bias-only predictor

    def test_single_epoch_curve_length(self, spiral_ds):
        result = TR.train_arch(9, A.SearchSpaceSpec(), spiral_ds, TR.TrainConfig(epochs=1, seed=0))
        assert len(result.epoch_curve) == 1

    def test_epochs_must_be_positive(self):
        with pytest.raises(ValueError):
            TR.TrainConfig(epochs=0)

    def test_cost_model_deterministic_and_size_monotone(self, spiral_ds):
        cfg = TR.TrainConfig(epochs=3, seed=0)
        small = TR.train_arch(0, A.SearchSpaceSpec(), spiral_ds, cfg)
        big = TR.train_arch(A.SPACE_SIZE - 1, A.SearchSpaceSpec(), spiral_ds, cfg)
        assert big.cost_seconds > small.cost_seconds
        assert small.cost_seconds == TR.train_arch(0, A.SearchSpaceSpec(), spiral_ds, cfg).cost_seconds


class TestBenchTable:
    def test_round_trip(self, spiral_ds, tmp_path):
        cfg = TR.TrainConfig(epochs=3, seed=2)
        table = TR.build_bench(A.SearchSpaceSpec(), [3, 14, 15], spiral_ds, cfg)
        path = tmp_path / "bench.csv"
        table.save(path)
        loaded = TR.BenchTable.load(path)
        assert loaded.ids() == [3, 14, 15]
        for i in table.ids():
            assert loaded.get(i) == table.get(i)

    def test_incremental_resume_trains_only_missing(self, spiral_ds, tmp_path, monkeypatch):
        cfg = TR.TrainConfig(epochs=2, seed=2)
        path = tmp_path / "bench.csv"
        TR.build_bench(A.SearchSpaceSpec(), [5, 6], spiral_ds, cfg, csv_path=path)
        calls = []
        original = TR.train_arch

        def counting(arch_id, *args, **kwargs):
            calls.append(arch_id)
            return original(arch_id, *args, **kwargs)

        monkeypatch.setattr(TR, "train_arch", counting)
        table = TR.build_bench(A.SearchSpaceSpec(), [5, 6, 7, 8], spiral_ds, cfg, csv_path=path)
        assert sorted(calls) == [7, 8]
        assert table.ids() == [5, 6, 7, 8]

    def test_fingerprint_mismatch_rejected(self, spiral_ds, tmp_path):
        path = tmp_path / "bench.csv"
        TR.build_bench(A.SearchSpaceSpec(), [5], spiral_ds, TR.TrainConfig(epochs=2, seed=2), csv_path=path)
        with pytest.raises(ValueError, match="different dataset/config"):
            TR.build_bench(A.SearchSpaceSpec(), [5, 6], spiral_ds, TR.TrainConfig(epochs=3, seed=2), csv_path=path)

    def test_worker_counts_agree(self, spiral_ds):
        cfg = TR.TrainConfig(epochs=2, seed=6)
        ids = [11, 22, 33, 44]
        serial = TR.build_bench(A.SearchSpaceSpec(), ids, spiral_ds, cfg, workers=1)
        parallel = TR.build_bench(A.SearchSpaceSpec(), ids, spiral_ds, cfg, workers=2)
        for i in ids:
            assert serial.get(i) == parallel.get(i)

    def test_saved_csv_bytes_stable(self, spiral_ds, tmp_path):
        cfg = TR.TrainConfig(epochs=2, seed=2)
        table = TR.build_bench(A.SearchSpaceSpec(), [5, 6], spiral_ds, cfg)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        table.save(p1)
        table.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
