"""
Tests for minutiae extraction and the quality report.
"""

import csv
import math

import numpy as np
import pytest
from scipy import ndimage

from synthprint.impression import region_mask
from synthprint.minutiae import (
    METRIC_LABELS,
    ImageMetrics,
    Minutia,
    MinutiaKind,
    MinutiaSet,
    aggregate_metrics,
    crossing_number,
    enhance_and_binarize,
    estimate_orientation,
    extract_from_image,
    extract_minutiae,
    metrics_from_minutiae,
    quality_report,
    quality_score,
    thin,
    write_quality_csv,
)
from synthprint.synthcore import blank_image, read_manifest

from .conftest import blob_print, stripes

EIGHT = np.ones((3, 3), dtype=bool)


def canvas():
    return np.zeros((512, 512), dtype=bool)


def y_skeleton():
    skel = canvas()
    skel[257:350, 256] = True
    for k in range(0, 80):
        skel[256 - k, 256 - k] = True
        skel[256 - k, 256 + k] = True
    return skel


class TestMinutiaSet:
    """Tests for the column container."""

    def test_round_trip(self):
        items = [Minutia(10, 20, 0.5, MinutiaKind.RIDGE_ENDING, 0.9),
                 Minutia(30, 40, 7.0, MinutiaKind.BIFURCATION, 1.5)]
        mset = MinutiaSet.from_minutiae(items)
        assert len(mset) == 2
        assert mset.ridge_endings == 1 and mset.bifurcations == 1
        back = list(mset)
        assert back[1].angle == pytest.approx(7.0 - 2 * math.pi)
        assert back[1].reliability == 1.0

    def test_empty(self):
        assert len(MinutiaSet.empty()) == 0
        assert len(MinutiaSet.from_minutiae([])) == 0

    def test_transformed(self):
        mset = MinutiaSet.from_minutiae([Minutia(355.5, 255.5, 0.0, MinutiaKind.RIDGE_ENDING)])
        moved = mset.transformed(5, -3, 90)
        assert moved.xy[0] == pytest.approx([255.5 + 5, 355.5 - 3])
        assert moved.angle[0] == pytest.approx(math.pi / 2)


class TestEnhance:
    """Tests for enhance_and_binarize."""

    def test_blank_is_empty(self):
        assert not enhance_and_binarize(blank_image()).any()

    def test_stripe_ridge_fraction(self, stripe_image):
        ridges = enhance_and_binarize(stripe_image)
        area = region_mask(stripe_image)
        fraction = ridges[area].mean()
        assert 0.4 <= fraction <= 0.6

    def test_ridges_follow_dark_bands(self, stripe_image):
        ridges = enhance_and_binarize(stripe_image)
        interior = np.zeros_like(ridges)
        interior[40:-40, 40:-40] = True
        assert (stripe_image[ridges & interior] < 130).mean() > 0.9

    def test_confined_to_area(self, blob_image):
        ridges = enhance_and_binarize(blob_image)
        assert not ridges[~region_mask(blob_image)].any()

    def test_brightness_invariance(self, blob_image):
        area = region_mask(blob_image)
        brighter = blob_image.astype(int)
        brighter[area] += 20
        brighter = np.clip(brighter, 0, 255).astype(np.uint8)
        interior = ndimage.binary_erosion(area, iterations=48)
        a = enhance_and_binarize(blob_image)[interior]
        b = enhance_and_binarize(brighter)[interior]
        assert (a != b).mean() < 1e-3

    def test_orientation_of_vertical_stripes(self, stripe_image):
        field = estimate_orientation(stripe_image)
        centre = field.angles[8:-8, 8:-8]
        assert np.allclose(centre, math.pi / 2, atol=0.05)
        assert field.coherence[8:-8, 8:-8].min() > 0.9


class TestThin:
    """Tests for thinning."""

    def test_bar_becomes_line(self):
        bar = canvas()
        bar[100:105, 100:160] = True
        skel = thin(bar)
        rows, cols = np.nonzero(skel)
        assert rows.min() >= 100 and rows.max() <= 104
        assert np.bincount(cols).max() == 1
        assert 54 <= cols.max() - cols.min() + 1 <= 60

    def test_empty(self):
        assert not thin(canvas()).any()

    def test_one_pixel_wide(self, blob_image):
        skel = thin(enhance_and_binarize(blob_image)).astype(int)
        blocks = skel[:-1, :-1] + skel[1:, :-1] + skel[:-1, 1:] + skel[1:, 1:]
        assert blocks.max() < 4

    def test_idempotent(self, blob_image):
        once = thin(enhance_and_binarize(blob_image))
        assert np.array_equal(thin(once), once)

    def test_connectivity_preserved(self, blob_image):
        ridges = enhance_and_binarize(blob_image)
        _, before = ndimage.label(ridges, structure=EIGHT)
        _, after = ndimage.label(thin(ridges), structure=EIGHT)
        assert before == after


class TestExtract:
    """Tests for crossing-number extraction."""

    def test_crossing_numbers(self):
        skel = y_skeleton()
        cn = crossing_number(skel)
        assert cn[256, 256] == 3
        assert cn[349, 256] == 1
        assert cn[300, 256] == 2
        assert cn[0, 0] == 0

    def test_straight_segment(self):
        skel = canvas()
        skel[256, 100:301] = True
        found = extract_minutiae(skel)
        assert found.ridge_endings == 2
        assert found.bifurcations == 0
        by_x = {int(m.x): m.angle for m in found}
        assert by_x[300] == pytest.approx(0.0, abs=1e-9)
        assert by_x[100] == pytest.approx(math.pi)

    def test_y_shape(self):
        found = extract_minutiae(y_skeleton())
        assert found.ridge_endings == 3
        assert found.bifurcations == 1
        fork = next(m for m in found if m.kind is MinutiaKind.BIFURCATION)
        # stem below, so the fork opens upward
        assert fork.angle == pytest.approx(3 * math.pi / 2, abs=0.2)

    def test_ring(self):
        skel = canvas()
        skel[200, 200:301] = True
        skel[300, 200:301] = True
        skel[200:301, 200] = True
        skel[200:301, 300] = True
        found = extract_minutiae(skel)
        assert len(found) == 0

    def test_border_artifacts_removed(self):
        skel = canvas()
        skel[256, 3:301] = True
        found = extract_minutiae(skel)
        assert len(found) == 1
        assert found.xy[0][0] == 300

    def test_mask_edge(self):
        skel = canvas()
        skel[256, 100:301] = True
        mask = canvas()
        mask[:, 95:400] = True
        found = extract_minutiae(skel, mask=mask)
        assert [int(x) for x, _ in found.xy] == [300]

    def test_reliability_from_coherence(self, stripe_image):
        skel = canvas()
        skel[256, 100:301] = True
        found = extract_minutiae(skel, estimate_orientation(stripe_image))
        assert np.all((found.reliability >= 0) & (found.reliability <= 1))
        assert found.reliability.min() > 0.9

    def test_rotation_counts(self, blob_image):
        a = extract_from_image(blob_image)
        b = extract_from_image(np.ascontiguousarray(np.rot90(blob_image)))
        assert abs(len(a) - len(b)) <= 2

    def test_minutiae_inside_eroded_area(self):
        img = blob_print(period=8.5, angle_deg=75.0)
        found = extract_from_image(img)
        depth = ndimage.distance_transform_edt(np.pad(region_mask(img), 1))[1:-1, 1:-1]
        for x, y in found.xy.astype(int):
            assert depth[y, x] > 8


class TestQualityScore:
    """Tests for the quality proxy."""

    def test_blank_is_zero(self):
        assert quality_score(blank_image()) == 0.0

    def test_noise_lowers_score(self, blob_image):
        gen = np.random.default_rng(0)
        noisy = np.clip(blob_image + gen.normal(0, 40, blob_image.shape), 0, 255).astype(np.uint8)
        assert quality_score(blob_image) > quality_score(noisy)

    def test_range(self):
        gen = np.random.default_rng(1)
        images = [blank_image(), blank_image(0), blob_print(), stripes(11.0, 45.0)]
        images += [gen.integers(0, 256, (512, 512), dtype=np.uint8) for _ in range(2)]
        for img in images:
            assert 0.0 <= quality_score(img) <= 100.0


class TestQualityReport:
    """Tests for metric aggregation."""

    def metrics(self, area, endings=10, bifurcations=5):
        kinds = [MinutiaKind.RIDGE_ENDING] * endings + [MinutiaKind.BIFURCATION] * bifurcations
        mset = MinutiaSet.from_minutiae(Minutia(i, i, 0.0, k, 0.5) for i, k in enumerate(kinds))
        return metrics_from_minutiae(mset, area, 50.0)

    def test_bifurcation_percentage(self):
        report = aggregate_metrics([self.metrics(30.0)])
        mean, std = report.stats["bifurcation_percentage"]
        assert round(mean, 2) == 33.33
        assert std == 0.0

    def test_population_std(self):
        report = aggregate_metrics([self.metrics(30.0), self.metrics(40.0)])
        assert report.stats["fingerprint_area"] == pytest.approx((35.0, 5.0))

    def test_matches_two_pass(self):
        gen = np.random.default_rng(3)
        records = [ImageMetrics(int(e), int(b), r1, r2, p, a, q)
                   for e, b, r1, r2, p, a, q in zip(
                       gen.integers(0, 100, 50), gen.integers(0, 50, 50), gen.random(50),
                       gen.random(50), gen.random(50) * 100, gen.random(50) * 60, gen.random(50) * 100)]
        report = aggregate_metrics(records)
        for name in METRIC_LABELS:
            values = [float(getattr(m, name)) for m in records]
            mean = sum(values) / len(values)
            std = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
            assert report.stats[name][0] == pytest.approx(mean, rel=1e-9)
            assert report.stats[name][1] == pytest.approx(std, rel=1e-9)

    def test_order_independent(self):
        records = [self.metrics(a, e, b) for a, e, b in [(20.0, 4, 2), (33.0, 9, 1), (41.0, 0, 0)]]
        assert aggregate_metrics(records) == aggregate_metrics(records[::-1])

    def test_empty_minutiae(self):
        m = metrics_from_minutiae(MinutiaSet.empty(), 0.0, 0.0)
        assert m.bifurcation_percentage == 0.0
        assert m.ridge_reliability == 0.0

    def test_rows_labelled(self):
        rows = aggregate_metrics([self.metrics(30.0)]).rows()
        assert len(rows) == 7
        assert rows[-1][0] == "quality_score (proxy)"

    def test_report_skips_unreadable(self, dataset_dir):
        manifest = read_manifest(dataset_dir / "manifest.jsonl")
        (dataset_dir / manifest[0].path).write_bytes(b"broken")
        report = quality_report(manifest, dataset_dir)
        assert report.images == 3
        assert report.skipped == 1
        for mean, std in report.stats.values():
            assert mean >= 0 and std >= 0

    def test_csv(self, tmp_path):
        path = tmp_path / "q.csv"
        write_quality_csv(aggregate_metrics([self.metrics(30.0), self.metrics(40.0)]), path)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["metric", "mean", "std_population"]
        assert ["Area of the Fingerprint (% of frame)", "35.0000", "5.0000"] in rows
