from itertools import combinations

import numpy as np
import pytest

from mtlgrouping.engine import TrainConfig
from mtlgrouping.gains import (
    GainRecord,
    StlCache,
    load_records,
    measure_gain,
    measure_gains_batch,
    record_from_dict,
    record_to_dict,
    records_to_csv,
    relative_gain,
    sample_training_groups,
    save_records,
)
from mtlgrouping.suite import TaskSuiteSpec, generate_suite


def small_suite(**overrides):
    base = dict(
        n_tasks=4, input_dim=5, n_clusters=2, within_cluster_similarity=0.9,
        label_noise_std=0.1, samples_per_split=(24, 8, 16), seed=30)
    base.update(overrides)
    return generate_suite(TaskSuiteSpec(**base))


def quick_config(**overrides):
    base = dict(learning_rate=0.05, momentum=0.9, epochs=8, batch_size=8,
                hidden_dims=(4,), seed=2)
    base.update(overrides)
    return TrainConfig(**base)


class TestRelativeGain:
    def test_direct_substitution(self):
        assert relative_gain(2.0, 1.5) == pytest.approx(0.25, abs=0)

    def test_no_transfer(self):
        assert relative_gain(1.3, 1.3) == 0.0

    def test_degenerate_baseline_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            relative_gain(0.0, 1.0)


class TestMeasureGain:
    def test_identity_between_losses_and_gains(self):
        suite = small_suite()
        rec = measure_gain((0, 1), suite, quick_config())
        assert rec.group == (0, 1)
        for t in rec.group:
            expect = (rec.stl_losses[t] - rec.mtl_losses[t]) / rec.stl_losses[t]
            assert rec.gains[t] == pytest.approx(expect, abs=1e-12)

    def test_singleton_rejected(self):
        with pytest.raises(ValueError, match="two or more"):
            measure_gain((1,), small_suite(), quick_config())

    def test_cache_transparency(self):
        suite = small_suite()
        config = quick_config()
        cold = measure_gain((1, 3), suite, config)
        cache = StlCache(suite)
        for t in range(4):
            cache.get(t, config)
        warm = measure_gain((1, 3), suite, config, cache=cache)
        assert cold.gains == warm.gains
        assert cold.stl_losses == warm.stl_losses

    def test_identical_function_tasks_gain_nonnegative(self):
        # same target function, independent feature draws: the shared encoder
        # sees twice the data under joint training. Individual seeds can lose
        # to finite-sample noise, so the ten-seed protocol checks the mean per
        # task plus a solid majority of nonnegative measurements.
        per_task = {0: [], 1: []}
        for seed in range(10):
            suite = small_suite(n_tasks=2, input_dim=8, n_clusters=1,
                                within_cluster_similarity=1.0,
                                label_noise_std=0.0,
                                samples_per_split=(24, 4, 256),
                                seed=100 + seed)
            config = quick_config(learning_rate=0.05, momentum=0.0, epochs=100,
                                  batch_size=1000, hidden_dims=(2,), seed=seed)
            rec = measure_gain((0, 1), suite, config)
            per_task[0].append(rec.gains[0])
            per_task[1].append(rec.gains[1])
        assert np.mean(per_task[0]) >= 0.0
        assert np.mean(per_task[1]) >= 0.0
        pooled = per_task[0] + per_task[1]
        assert sum(g >= 0.0 for g in pooled) >= 16


class TestMeasureGainsBatch:
    def test_duplicate_groups_identical_records(self):
        suite = small_suite()
        result = measure_gains_batch([(0, 1), (0, 1)], suite, quick_config())
        assert not result.failures
        assert result.records[0] == result.records[1]

    def test_empty_list(self):
        result = measure_gains_batch([], small_suite(), quick_config())
        assert result.records == [] and result.failures == []

    def test_parallel_matches_serial(self):
        suite = small_suite()
        config = quick_config()
        groups = [(0, 1), (2, 3), (0, 2, 3), (1, 2), (0, 1, 2, 3)]
        serial = measure_gains_batch(groups, suite, config, parallelism=1)
        parallel = measure_gains_batch(groups, suite, config, parallelism=4)
        assert serial.records == parallel.records

    def test_order_stable(self):
        suite = small_suite()
        groups = [(2, 3), (0, 1)]
        result = measure_gains_batch(groups, suite, quick_config())
        assert [r.group for r in result.records] == [(2, 3), (0, 1)]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_per_group_failure_collected(self):
        suite = small_suite()
        config = quick_config(learning_rate=200.0, epochs=120, batch_size=1000)
        result = measure_gains_batch([(0, 1)], suite, config)
        assert result.records == []
        assert len(result.failures) == 1
        assert result.failures[0].group == (0, 1)


class TestSampleTrainingGroups:
    def test_exhausts_all_combinations(self):
        got = sample_training_groups(4, 11, size_range=(2, 4), seed=5)
        want = [g for k in (2, 3, 4) for g in combinations(range(4), k)]
        assert sorted(got) == sorted(want)
        assert len(set(got)) == 11

    def test_all_pairs(self):
        got = sample_training_groups(4, 6, size_range=(2, 2), seed=1)
        assert sorted(got) == list(combinations(range(4), 2))

    def test_seeded_determinism(self):
        a = sample_training_groups(8, 12, size_range=(2, 5), seed=9)
        b = sample_training_groups(8, 12, size_range=(2, 5), seed=9)
        c = sample_training_groups(8, 12, size_range=(2, 5), seed=10)
        assert a == b
        assert a != c

    def test_infeasible_count(self):
        with pytest.raises(ValueError, match="cannot sample"):
            sample_training_groups(4, 7, size_range=(2, 2), seed=0)

    def test_bad_range(self):
        with pytest.raises(ValueError, match="size range"):
            sample_training_groups(4, 1, size_range=(1, 4), seed=0)


class TestSerialization:
    def record(self):
        return GainRecord(
            group=(0, 2), gains={0: 0.1, 2: -0.05},
            stl_losses={0: 1.0, 2: 2.0}, mtl_losses={0: 0.9, 2: 2.1}, seed=3)

    def test_dict_round_trip(self):
        rec = self.record()
        assert record_from_dict(record_to_dict(rec)) == rec

    def test_jsonl_round_trip(self, tmp_path):
        records = [self.record(), GainRecord(group=(1, 2, 3),
                                             gains={1: 0.0, 2: 0.2, 3: 0.3},
                                             stl_losses={1: 1.0, 2: 1.0, 3: 1.0},
                                             mtl_losses={1: 1.0, 2: 0.8, 3: 0.7},
                                             seed=3)]
        path = tmp_path / "gains.jsonl"
        save_records(records, path)
        assert load_records(path) == records

    def test_csv_columns(self, tmp_path):
        path = tmp_path / "gains.csv"
        records_to_csv([self.record()], path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "group,task,gain,stl_loss,mtl_loss"
        assert lines[1].startswith("0+2,0,")
        assert len(lines) == 3
