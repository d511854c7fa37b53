"""
Tests for the verification protocol and error-rate arithmetic.
"""

import csv
import itertools
import os
import time
import tracemalloc

import numpy as np
import pytest

from synthprint.evalharness import (
    PairProtocol,
    ScoreDistribution,
    _unrank_pairs,
    build_mated_pairs,
    build_nonmated_pairs,
    count_mated,
    count_nonmated,
    cross_pair_count,
    far_percent,
    format_percent,
    histogram,
    privacy_scan,
    sample_nonmated_pairs,
    score_pairs,
    tar_far,
    tar_far_table,
    threshold_for_far,
    uniqueness_compare,
    write_histogram_csv,
    write_scores_csv,
    write_tar_far_csv,
)
from synthprint.exceptions import ValidationError
from synthprint.synthcore import DatasetManifest, FingerClass, ManifestRecord, RngStream

from .test_matcher import random_set


def grid_manifest(subjects, classes, impressions):
    return DatasetManifest.from_records(
        ManifestRecord(f"{c}/{s}_{i}.png", s, c, i)
        for s in range(1, subjects + 1)
        for c in range(1, classes + 1)
        for i in range(1, impressions + 1)
    )


class TestPairProtocol:
    """Tests for mated and non-mated pair construction."""

    def test_db_shape_counts(self):
        manifest = grid_manifest(50, 10, 3)
        assert count_mated(manifest) == 1500
        assert count_nonmated(manifest) == 1102500
        assert len(build_mated_pairs(manifest)) == 1500
        assert len(build_nonmated_pairs(manifest)) == 1102500

    def test_single_class_shape_counts(self):
        manifest = grid_manifest(500, 1, 3)
        assert len(build_mated_pairs(manifest)) == 1500
        assert len(build_nonmated_pairs(manifest)) == 1122750
        assert count_nonmated(manifest) == 1122750

    def test_trivial_cases(self):
        assert len(build_mated_pairs(grid_manifest(1, 1, 2))) == 1
        assert len(build_nonmated_pairs(grid_manifest(2, 1, 1))) == 1
        assert len(build_mated_pairs(grid_manifest(3, 2, 1))) == 0
        assert build_nonmated_pairs(DatasetManifest()).shape == (0, 2)

    def test_matches_brute_force(self):
        gen = np.random.default_rng(0)
        records = []
        for s in range(1, 9):
            for c in gen.choice(np.arange(1, 11), size=int(gen.integers(1, 4)), replace=False):
                for i in range(1, int(gen.integers(1, 5)) + 1):
                    records.append(ManifestRecord(f"{s}/{c}/{i}.png", s, FingerClass(int(c)), i))
        manifest = DatasetManifest.from_records(records)
        assert len(manifest) <= 200

        mated, nonmated = set(), set()
        for i, j in itertools.combinations(range(len(records)), 2):
            a, b = records[i], records[j]
            if a.subject != b.subject:
                nonmated.add((i, j))
            elif a.finger_class == b.finger_class and a.impression != b.impression:
                mated.add((i, j))

        got_mated = {tuple(map(int, p)) for p in build_mated_pairs(manifest)}
        got_nonmated = {tuple(map(int, p)) for p in build_nonmated_pairs(manifest)}
        assert got_mated == mated and got_nonmated == nonmated
        assert count_mated(manifest) == len(mated)
        assert count_nonmated(manifest) == len(nonmated)
        assert len(build_mated_pairs(manifest)) == len(mated)

    def test_sampled_nonmated(self):
        manifest = grid_manifest(6, 2, 2)
        full = {tuple(map(int, p)) for p in build_nonmated_pairs(manifest)}
        sample = sample_nonmated_pairs(manifest, 20, RngStream.from_seed(1))
        assert len(sample) == 20
        assert {tuple(map(int, p)) for p in sample} <= full
        again = sample_nonmated_pairs(manifest, 20, RngStream.from_seed(1))
        assert np.array_equal(sample, again)
        assert len(sample_nonmated_pairs(manifest, 10 ** 6, RngStream.from_seed(1))) == len(full)
        assert sample_nonmated_pairs(manifest, 0, RngStream.from_seed(1)).shape == (0, 2)
        with pytest.raises(ValidationError):
            sample_nonmated_pairs(manifest, -1, RngStream.from_seed(1))

    def test_sampled_nonmated_large_manifest(self):
        manifest = grid_manifest(2000, 10, 1)
        assert count_nonmated(manifest) == 199_900_000
        tracemalloc.start()
        try:
            sample = sample_nonmated_pairs(manifest, 1000, RngStream.from_seed(3))
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
        assert peak < 50 * 2 ** 20
        assert sample.shape == (1000, 2)
        assert np.all(sample[:, 0] < sample[:, 1])
        subjects = np.array([r.subject for r in manifest])
        assert np.all(subjects[sample[:, 0]] != subjects[sample[:, 1]])
        assert len({tuple(map(int, p)) for p in sample}) == 1000
        order = np.lexsort((sample[:, 1], sample[:, 0]))
        assert np.array_equal(order, np.arange(1000))
        again = sample_nonmated_pairs(manifest, 1000, RngStream.from_seed(3))
        assert np.array_equal(sample, again)

    def test_unrank_covers_upper_triangle(self):
        for size in (2, 3, 7, 40):
            i, j = _unrank_pairs(np.arange(size * (size - 1) // 2, dtype=np.int64), size)
            ref_i, ref_j = np.triu_indices(size, k=1)
            assert np.array_equal(i, ref_i) and np.array_equal(j, ref_j)

    def test_protocol_build(self):
        manifest = grid_manifest(4, 1, 2)
        protocol = PairProtocol.build(manifest, max_nonmated=5)
        assert protocol.policy == "exclude-same-subject"
        assert len(protocol.mated) == 4
        assert len(protocol.nonmated) == 5
        for a, b in protocol.records(protocol.mated):
            assert a.subject == b.subject and a.impression != b.impression

    def test_cross_pair_count(self):
        assert cross_pair_count(20844, 1500) == 31266000


class TestTarFar:
    """Tests for TAR/FAR arithmetic and threshold search."""

    def test_direct_counting(self):
        point = tar_far([50, 60], [10, 49], 48)
        assert point.tar == 100.0
        assert point.far == 50.0
        assert (point.imposter_accepted, point.imposter_total) == (1, 2)

    def test_ties_accepted(self):
        assert tar_far([48], [48], 48).far == 100.0

    def test_empty_side_named(self):
        with pytest.raises(ValidationError, match="genuine"):
            tar_far([], [1.0], 1)
        with pytest.raises(ValidationError, match="imposter"):
            tar_far([1.0], [], 1)

    def test_far_fractions(self):
        assert far_percent(57, 1000000) == pytest.approx(0.0057)
        assert round(far_percent(118, 31266000), 6) == 0.000377
        assert round(far_percent(155, 31266000), 6) == 0.000496
        with pytest.raises(ValidationError):
            far_percent(1, 0)

    def test_target_boundary(self):
        imposter = np.full(1102500, 10.0)
        imposter[:110] = 60.0
        imposter[110:142] = 50.0
        assert tar_far([70.0], imposter, 50).far > 0.01
        assert tar_far([70.0], imposter, 60).far <= 0.01
        assert threshold_for_far(imposter, 0.01).threshold == 60.0

    def test_uniform_threshold(self):
        result = threshold_for_far(np.arange(1, 101, dtype=float), 5.0)
        assert result.threshold == 96.0
        assert result.far == 5.0
        assert not result.saturated

    def test_saturated(self):
        result = threshold_for_far(np.zeros(100), 0.01)
        assert result.saturated
        assert result.threshold > 0
        assert result.far == 0.0

    def test_invalid_target(self):
        with pytest.raises(ValidationError):
            threshold_for_far([1.0, 2.0], 0.0)

    def test_agreement_and_monotonicity(self):
        gen = np.random.default_rng(5)
        for _ in range(20):
            scores = np.round(gen.gamma(2.0, 5.0, size=500), 1)
            previous = -np.inf
            for target in (10.0, 5.0, 1.0, 0.5, 0.1):
                found = threshold_for_far(scores, target)
                assert tar_far([1.0], scores, found.threshold).far <= target
                lower = scores[scores < found.threshold]
                if lower.size and not found.saturated:
                    assert tar_far([1.0], scores, lower.max()).far > target
                assert found.threshold >= previous
                previous = found.threshold

    def test_far_non_increasing(self):
        scores = np.random.default_rng(6).random(1000) * 100
        fars = [tar_far(scores, scores, t).far for t in np.linspace(0, 100, 41)]
        assert all(a >= b for a, b in zip(fars, fars[1:]))
        assert all(0 <= f <= 100 for f in fars)

    def test_table_rows(self):
        datasets = {"a": (np.array([50.0, 70.0]), np.arange(1, 101, dtype=float))}
        rows = tar_far_table(datasets, thresholds=[48.0], far_target=5.0)
        assert [r.source for r in rows] == ["fixed", "far-target"]
        assert rows[1].threshold == 96.0
        assert rows[0].point.tar == 100.0


class TestDistributions:
    """Tests for histograms and the uniqueness distance."""

    def test_single_bin(self):
        dist = histogram([1, 1, 1], 1)
        assert dist.counts.tolist() == [3]
        assert dist.total == 3

    def test_two_bins(self):
        assert histogram([0, 10], 2).counts.tolist() == [1, 1]

    def test_uniform_counts(self):
        dist = histogram(np.random.default_rng(7).random(10000), 10, range_max=1.0)
        assert all(850 <= c <= 1150 for c in dist.counts)

    def test_totals_conserved(self):
        scores = np.random.default_rng(8).gamma(2.0, 10.0, size=777)
        for bins in (1, 7, 50):
            assert histogram(scores, bins).counts.sum() == 777
        assert histogram(scores, 5, range_max=10.0).counts.sum() == 777

    def test_bad_bins(self):
        with pytest.raises(ValidationError):
            histogram([1.0], 0)

    def test_identical_is_zero(self):
        dist = histogram([1, 2, 3, 4], 4, range_max=4.0)
        assert uniqueness_compare(dist, dist) == 0.0

    def test_disjoint_is_one(self):
        a = histogram([0.1, 0.2], 2, range_max=1.0)
        b = histogram([0.9], 2, range_max=1.0)
        assert uniqueness_compare(a, b) == pytest.approx(1.0)

    def test_same_generator_close(self):
        gen = np.random.default_rng(9)
        a = histogram(gen.random(10000), 10, range_max=1.0)
        b = histogram(gen.random(10000), 10, range_max=1.0)
        assert uniqueness_compare(a, b) < 0.05

    def test_mismatched_bins(self):
        with pytest.raises(ValidationError):
            uniqueness_compare(histogram([1.0], 2, 1.0), histogram([1.0], 3, 1.0))
        with pytest.raises(ValidationError):
            uniqueness_compare(histogram([1.0], 2, 1.0), histogram([1.0], 2, 2.0))

    def test_empty_rejected(self):
        empty = ScoreDistribution(np.array([0.0, 1.0]), np.array([0]), 0)
        with pytest.raises(ValidationError):
            uniqueness_compare(empty, histogram([0.5], 1, 1.0))


class TestScoring:
    """Tests for block scoring and the privacy scan."""

    def test_score_pairs_blocks(self):
        templates = [random_set(s, n=15) for s in range(6)]
        pairs = np.array(list(itertools.combinations(range(6), 2)))
        scores, support = score_pairs(templates, pairs, workers=1, block_size=4)
        again, _ = score_pairs(templates, pairs, workers=1, block_size=100)
        assert np.array_equal(scores, again)
        assert scores.shape == (15,) and support.dtype == np.int64

    def test_score_pairs_workers(self):
        templates = [random_set(s, n=15) for s in range(5)]
        pairs = np.array(list(itertools.combinations(range(5), 2)))
        serial, _ = score_pairs(templates, pairs, workers=1, block_size=3)
        parallel, _ = score_pairs(templates, pairs, workers=2, block_size=3)
        assert np.array_equal(serial, parallel)

    @pytest.mark.slow
    @pytest.mark.skipif(len(os.sched_getaffinity(0)) < 8, reason="needs at least 8 usable cores")
    def test_score_pairs_scales_with_workers(self):
        templates = [random_set(900 + s, n=60) for s in range(200)]
        pairs = np.array(list(itertools.combinations(range(len(templates)), 2)))
        start = time.perf_counter()
        serial, _ = score_pairs(templates, pairs, workers=1)
        serial_time = time.perf_counter() - start
        start = time.perf_counter()
        parallel, _ = score_pairs(templates, pairs, workers=4)
        parallel_time = time.perf_counter() - start
        assert np.array_equal(serial, parallel)
        assert serial_time / parallel_time >= 3.0

    def test_score_pairs_empty(self):
        scores, support = score_pairs([], np.zeros((0, 2), dtype=np.int64))
        assert scores.size == 0 and support.size == 0

    def test_privacy_self_match(self):
        a = random_set(50)
        result = privacy_scan([a], [a], threshold=99.999)
        assert result.pairs_compared == 1
        assert result.matches_above_threshold == 1
        assert result.effective_far == pytest.approx(100.0)

    def test_privacy_counts(self):
        side_a = [random_set(60 + s, n=12) for s in range(4)]
        side_b = [random_set(70 + s, n=12) for s in range(3)] + [side_a[0]]
        result = privacy_scan(side_a, side_b, threshold=99.999, block_size=5)
        assert result.pairs_compared == 16
        assert result.matches_above_threshold >= 1
        assert result.matches_above_threshold <= result.pairs_compared
        assert result.max_score == pytest.approx(100.0)

    def test_privacy_worker_independent(self):
        side_a = [random_set(80 + s, n=12) for s in range(4)]
        side_b = [random_set(90 + s, n=12) for s in range(3)]
        serial = privacy_scan(side_a, side_b, threshold=5.0, workers=1, block_size=3)
        parallel = privacy_scan(side_a, side_b, threshold=5.0, workers=2, block_size=3)
        assert serial == parallel

    def test_privacy_empty(self):
        result = privacy_scan([], [random_set(1)], threshold=10.0)
        assert result.pairs_compared == 0
        assert result.effective_far == 0.0


class TestReportFiles:
    """Tests for CSV writers and number formatting."""

    def read(self, path):
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.reader(f))

    def test_scores_csv(self, tmp_path):
        path = tmp_path / "scores.csv"
        write_scores_csv(path, ["x", "y"], np.array([[0, 1]]), np.array([12.5]), np.array([3]))
        assert self.read(path) == [["id_a", "id_b", "score", "pairs"], ["x", "y", "12.500000", "3"]]

    def test_histogram_csv(self, tmp_path):
        path = tmp_path / "h.csv"
        write_histogram_csv(path, {"a_imposter": histogram([0, 10], 2)})
        rows = self.read(path)
        assert rows[0] == ["series", "bin_low", "bin_high", "count"]
        assert rows[1] == ["a_imposter", "0.000000", "5.000000", "1"]

    def test_tar_far_csv(self, tmp_path):
        path = tmp_path / "t.csv"
        rows = tar_far_table({"a": (np.array([50.0]), np.array([10.0, 49.0]))}, thresholds=[48.0])
        write_tar_far_csv(path, rows)
        content = self.read(path)
        assert content[1][:4] == ["48.0", "a", "100.000000", "50.000000"]
        assert content[1][6:] == ["1", "2", "fixed"]

    def test_format_percent(self):
        assert format_percent(94.47) == "94.47"
        assert format_percent(0.000377) == "0.000377"
        assert format_percent(0.0) == "0"
