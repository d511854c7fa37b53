"""
Tests for minutiae alignment and matching.
"""

import itertools
import time

import numpy as np
import pytest
from scipy import ndimage

from synthprint.matcher import (
    DEFAULT_SETTINGS,
    Alignment,
    MatcherSettings,
    _neighbourhood_sum,
    align,
    match,
    pair_minutiae,
    score_pair_list,
    settings_from_config,
)
from synthprint.minutiae import MinutiaSet


def random_set(seed, n=30):
    gen = np.random.default_rng(seed)
    return MinutiaSet(
        gen.uniform(120, 390, size=(n, 2)),
        gen.uniform(0, 2 * np.pi, size=n),
        gen.integers(0, 2, size=n),
        gen.uniform(0.5, 1.0, size=n),
    )


def jittered(mset, seed, px=1.0):
    gen = np.random.default_rng(seed)
    return MinutiaSet(mset.xy + gen.uniform(-px, px, mset.xy.shape), mset.angle, mset.kind,
                      mset.reliability)


def grid_set(seed, side=6, step=40.0):
    """Minutiae on a square grid, so no two are within pairing distance."""
    gen = np.random.default_rng(seed)
    ticks = 150.0 + step * np.arange(side)
    xs, ys = np.meshgrid(ticks, ticks)
    n = side * side
    return MinutiaSet(
        np.stack([xs.ravel(), ys.ravel()], axis=1),
        gen.uniform(0, 2 * np.pi, size=n),
        gen.integers(0, 2, size=n),
        gen.uniform(0.5, 1.0, size=n),
    )


def dense_pairs(a, b, alignment, settings=DEFAULT_SETTINGS):
    """All-against-all greedy pairing used as a reference."""
    moved = a.transformed(alignment.dx, alignment.dy, alignment.dtheta)
    dist = np.hypot(moved.xy[:, None, 0] - b.xy[None, :, 0], moved.xy[:, None, 1] - b.xy[None, :, 1])
    turn = np.abs(np.pi - np.mod(np.pi - (moved.angle[:, None] - b.angle[None, :]), 2 * np.pi))
    ok = ((dist <= settings.pair_distance_px)
          & (turn <= np.radians(settings.pair_angle_deg))
          & (moved.kind[:, None] == b.kind[None, :]))
    ia, ib = np.nonzero(ok)
    used_a, used_b, pairs = set(), set(), []
    for k in np.lexsort((ib, ia, dist[ia, ib])):
        i, j = int(ia[k]), int(ib[k])
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            pairs.append((i, j))
    return pairs


class TestAlign:
    """Tests for Hough alignment."""

    def test_self_alignment(self):
        a = random_set(1)
        result = align(a, a)
        assert abs(result.dx) <= 8 and abs(result.dy) <= 8
        assert abs(result.dtheta) <= 5
        assert result.votes >= len(a)

    def test_translation_recovered(self):
        a = random_set(2)
        result = align(a, a.transformed(5, -3, 0))
        assert result.dx == pytest.approx(5, abs=8)
        assert result.dy == pytest.approx(-3, abs=8)
        assert abs(result.dtheta) <= 5

    def test_rotation_recovered(self):
        a = random_set(3)
        result = align(a, a.transformed(0, 0, 20))
        assert result.dtheta == pytest.approx(20, abs=5)

    def test_large_rotation_within_default_bound(self):
        a = random_set(4)
        result = align(a, a.transformed(4, 2, -55))
        assert result.dtheta == pytest.approx(-55, abs=5)

    def test_too_few_minutiae(self):
        a = random_set(5, n=2)
        assert align(a, random_set(6)) == Alignment()

    def test_bounded_search(self):
        a = random_set(7)
        narrow = MatcherSettings(max_rotation_deg=10)
        result = align(a, a.transformed(0, 0, 40), narrow)
        assert abs(result.dtheta) <= 10

    def test_neighbourhood_sum_matches_convolution(self):
        gen = np.random.default_rng(8)
        hist = gen.integers(0, 4, size=(25, 15, 15))
        expected = ndimage.convolve(hist, np.ones((3, 3, 3), dtype=hist.dtype), mode="constant")
        assert np.array_equal(_neighbourhood_sum(hist), expected)


class TestMatch:
    """Tests for match scores."""

    def test_self_match_is_100(self):
        a = random_set(10)
        score = match(a, a)
        assert score.value == pytest.approx(100.0)
        assert score.supporting_pairs == len(a)

    def test_small_self_match(self):
        a = random_set(11, n=2)
        assert match(a, a).value == pytest.approx(100.0)

    def test_empty(self):
        assert match(random_set(12), MinutiaSet.empty()).value == 0
        assert match(MinutiaSet.empty(), MinutiaSet.empty()).value == 0

    def test_symmetric(self):
        for seed in range(5):
            a, b = random_set(seed), random_set(seed + 100, n=25)
            assert match(a, b) == match(b, a)
            c = jittered(a.transformed(3, 7, 12), seed)
            assert match(a, c) == match(c, a)

    def test_rigid_invariance(self):
        a = random_set(20)
        b = jittered(a, 21).select(np.arange(3, len(a)))
        expected = 100.0 * (len(a) - 3) / len(a)
        assert match(a, b).value == pytest.approx(expected)
        moved = match(a.transformed(10, -5, 15), b.transformed(10, -5, 15))
        assert moved.value == pytest.approx(expected)

    def test_removing_matched_minutia(self):
        a = grid_set(22)
        b = jittered(a, 23)
        before = match(a, b)
        assert before.supporting_pairs == len(a)
        after = match(a, b.select(np.arange(1, len(b))))
        assert after.supporting_pairs == len(a) - 1
        assert after.value < before.value

    def test_duplicate_can_replace_removed_minutia(self):
        # The normalisation by |a| lets a near duplicate take over the
        # removed minutia's partner, so the score can rise.
        b = grid_set(24, side=4)
        a = MinutiaSet(
            np.vstack([b.xy, b.xy[:1] + (4.0, 0.0)]),
            np.append(b.angle, b.angle[0]),
            np.append(b.kind, b.kind[0]),
            np.append(b.reliability, b.reliability[0]),
        )
        before = match(a, b)
        after = match(a.select(np.arange(1, len(a))), b)
        assert before.supporting_pairs == after.supporting_pairs == len(b)
        assert before.value == pytest.approx(100.0 * len(b) / len(a))
        assert after.value == pytest.approx(100.0)

    def test_genuine_above_imposter(self):
        masters = [random_set(300 + i, n=40) for i in range(10)]
        genuine, imposter = [], []
        for i, m in enumerate(masters):
            first = jittered(m.transformed(4, -6, 10), 400 + i, px=2.0).select(np.arange(0, 36))
            second = jittered(m.transformed(-5, 3, -12), 500 + i, px=2.0).select(np.arange(4, 40))
            genuine.append(match(first, second).value)
            for j, other in enumerate(masters):
                if j != i:
                    imposter.append(match(first, jittered(other, 600 + j)).value)
        assert np.mean(genuine) > np.mean(imposter)
        assert min(genuine) > max(imposter)

    def test_pairs_respect_kind(self):
        a = random_set(30)
        flipped = MinutiaSet(a.xy, a.angle, 1 - a.kind, a.reliability)
        assert pair_minutiae(a, flipped, Alignment()) == []

    def test_pairs_one_to_one(self):
        a = random_set(31)
        pairs = pair_minutiae(a, a, Alignment())
        assert sorted(i for i, _ in pairs) == list(range(len(a)))
        assert all(i == j for i, j in pairs)

    def test_pairing_matches_dense_reference(self):
        for seed in range(8):
            a = random_set(200 + seed, n=60)
            genuine = jittered(a.transformed(-7, 5, 14), 250 + seed, px=3.0)
            for b in (genuine, random_set(260 + seed, n=55)):
                alignment = align(a, b)
                assert pair_minutiae(a, b, alignment) == dense_pairs(a, b, alignment)


class TestScoreList:
    """Tests for batch scoring helpers."""

    def test_score_pair_list(self):
        templates = {"x.png": random_set(40), "y.png": random_set(41)}
        rows = score_pair_list(templates, [("x.png", "x.png"), ("x.png", "y.png")])
        assert rows[0].score == pytest.approx(100.0)
        assert rows[1].id_b == "y.png"

    def test_unknown_id(self):
        with pytest.raises(KeyError):
            score_pair_list({}, [("a", "b")])

    def test_settings_from_config(self):
        settings = settings_from_config({"max_rotation_deg": 45, "pair_distance_px": 10})
        assert settings.max_rotation_deg == 45.0
        assert settings.pair_distance_px == 10.0
        assert settings.pair_angle_deg == DEFAULT_SETTINGS.pair_angle_deg


@pytest.mark.slow
class TestThroughput:
    """Single-process matching rate on templates of realistic size."""

    def test_pairs_per_minute(self):
        templates = [random_set(700 + s, n=60) for s in range(60)]
        pairs = list(itertools.combinations(range(len(templates)), 2))
        match(templates[0], templates[1])
        start = time.perf_counter()
        for i, j in pairs:
            match(templates[i], templates[j])
        elapsed = time.perf_counter() - start
        assert len(pairs) / elapsed * 60 >= 100_000
