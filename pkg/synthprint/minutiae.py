"""
Minutiae extraction and per-image biometric features.

Pipeline: block orientation estimate, local normalisation and oriented Gabor
smoothing, binarisation, thinning to a one-pixel skeleton, crossing-number
classification and border cleanup. On top of that sit the seven per-image
metrics of the quality report, including a composite quality score that is a
proxy, not an NFIQ2 implementation.
"""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import morphology

from .exceptions import ImageError
from .impression import region_mask
from .masterprint import OrientationField, oriented_filter
from .synthcore import (
    IMAGE_SIZE,
    DatasetManifest,
    GrayImage,
    Mask,
    load_image,
    require_pipeline_image,
)

logger = logging.getLogger(__name__)

ORIENTATION_BLOCK = 16
ENHANCE_PERIOD = 9.0
NORMALIZE_SIGMA = 8.0
SMALL_BLOB = 20
BORDER_MARGIN = 8
TRACE_STEPS = 10
CLOSE_PAIR_PX = 6.0

QUALITY_WEIGHTS = {"coherence": 0.4, "contrast": 0.25, "reliability": 0.2, "area": 0.15}
CONTRAST_FULL_SCALE = 64.0
AREA_FULL_SCALE = 25.0


class MinutiaKind(IntEnum):
    RIDGE_ENDING = 0
    BIFURCATION = 1


@dataclass(frozen=True)
class Minutia:
    """A single ridge event; ``angle`` in radians, [0, 2 pi)."""

    x: float
    y: float
    angle: float
    kind: MinutiaKind
    reliability: float = 1.0


@dataclass(frozen=True, eq=False)
class MinutiaSet:
    """
    Column-oriented minutiae of one image.

    Arrays keep matching vectorised; iterating yields :class:`Minutia`.
    """

    xy: NDArray[np.float64]
    angle: NDArray[np.float64]
    kind: NDArray[np.int8]
    reliability: NDArray[np.float64]

    def __post_init__(self) -> None:
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        n = xy.shape[0]
        angle = np.mod(np.asarray(self.angle, dtype=np.float64).reshape(n), 2 * math.pi)
        kind = np.asarray(self.kind, dtype=np.int8).reshape(n)
        reliability = np.clip(np.asarray(self.reliability, dtype=np.float64).reshape(n), 0.0, 1.0)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "angle", angle)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "reliability", reliability)

    @classmethod
    def empty(cls) -> "MinutiaSet":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0, np.int8), np.zeros(0))

    @classmethod
    def from_minutiae(cls, minutiae: Iterable[Minutia]) -> "MinutiaSet":
        items = list(minutiae)
        if not items:
            return cls.empty()
        return cls(
            np.array([(m.x, m.y) for m in items]),
            np.array([m.angle for m in items]),
            np.array([int(m.kind) for m in items]),
            np.array([m.reliability for m in items]),
        )

    def __len__(self) -> int:
        return int(self.xy.shape[0])

    def __iter__(self) -> Iterator[Minutia]:
        for (x, y), a, k, r in zip(self.xy, self.angle, self.kind, self.reliability):
            yield Minutia(float(x), float(y), float(a), MinutiaKind(int(k)), float(r))

    @property
    def ridge_endings(self) -> int:
        return int(np.count_nonzero(self.kind == MinutiaKind.RIDGE_ENDING))

    @property
    def bifurcations(self) -> int:
        return int(np.count_nonzero(self.kind == MinutiaKind.BIFURCATION))

    def select(self, keep: NDArray) -> "MinutiaSet":
        """Subset by boolean mask or index array."""
        return MinutiaSet(self.xy[keep], self.angle[keep], self.kind[keep], self.reliability[keep])

    def transformed(
        self,
        dx: float,
        dy: float,
        dtheta: float,
        centre: Tuple[float, float] = ((IMAGE_SIZE - 1) / 2.0, (IMAGE_SIZE - 1) / 2.0)
    ) -> "MinutiaSet":
        """Rotate by ``dtheta`` degrees about ``centre``, then translate by (dx, dy)."""
        rad = math.radians(dtheta)
        rotation = np.array([[math.cos(rad), -math.sin(rad)], [math.sin(rad), math.cos(rad)]])
        xy = (self.xy - centre) @ rotation.T + centre + (dx, dy)
        return MinutiaSet(xy, self.angle + rad, self.kind, self.reliability)

    def sort_key(self) -> Tuple[int, bytes]:
        """Total order used wherever a result must not depend on argument order."""
        return (len(self), self.xy.tobytes() + self.angle.tobytes() + self.kind.tobytes())


# ============================================================================
# Orientation and enhancement
# ============================================================================

def estimate_orientation(img: GrayImage, block: int = ORIENTATION_BLOCK) -> OrientationField:
    """
    Block ridge orientation from squared gradients.

    Coherence per block is |(Gxx - Gyy, 2 Gxy)| / (Gxx + Gyy), in [0, 1].
    Angles are smoothed over neighbouring blocks in the doubled-angle domain.
    """
    values = np.asarray(img, dtype=np.float64)
    gx = ndimage.sobel(values, axis=1)
    gy = ndimage.sobel(values, axis=0)
    rows, cols = values.shape[0] // block, values.shape[1] // block

    def block_sum(a: NDArray[np.float64]) -> NDArray[np.float64]:
        return a[:rows * block, :cols * block].reshape(rows, block, cols, block).sum(axis=(1, 3))

    gxx, gyy, gxy = block_sum(gx * gx), block_sum(gy * gy), block_sum(gx * gy)
    diff, cross = gxx - gyy, 2.0 * gxy
    energy = gxx + gyy
    coherence = np.zeros_like(energy)
    np.divide(np.hypot(diff, cross), energy, out=coherence, where=energy > 1e-9)

    smooth_diff = ndimage.gaussian_filter(diff, 1.0)
    smooth_cross = ndimage.gaussian_filter(cross, 1.0)
    angles = np.mod(0.5 * np.arctan2(smooth_cross, smooth_diff) + math.pi / 2, math.pi)
    angles[angles >= math.pi] = 0.0
    return OrientationField(angles, block_size=block, coherence=np.clip(coherence, 0.0, 1.0))


def enhance_and_binarize(
    img: GrayImage,
    orientation: Optional[OrientationField] = None
) -> Mask:
    """
    Binary ridge map (True on ridges) confined to the fingerprint area.

    Local mean and contrast are normalised first, so a uniform brightness
    change of the print leaves the map unchanged.
    """
    require_pipeline_image(img)
    area = region_mask(img)
    if not area.any():
        return np.zeros(img.shape, dtype=bool)

    values = img.astype(np.float64)
    centred = values - ndimage.gaussian_filter(values, NORMALIZE_SIGMA)
    spread = np.sqrt(ndimage.gaussian_filter(centred * centred, NORMALIZE_SIGMA))
    normalized = centred / (spread + 1.0)
    normalized[~area] = 0.0

    if orientation is None:
        orientation = estimate_orientation(img)
    filtered = oriented_filter(normalized, orientation.dense(img.shape[0]), ENHANCE_PERIOD)

    # dark ridges give a negative even-filter response
    ridges = (filtered < 0) & area
    ridges = morphology.remove_small_objects(ridges, SMALL_BLOB)
    ridges = morphology.remove_small_holes(ridges, SMALL_BLOB)
    return ridges & area


# ============================================================================
# Skeleton
# ============================================================================

def _shifted(a: NDArray[np.bool_], dy: int, dx: int) -> NDArray[np.bool_]:
    """Value of the neighbour at (y + dy, x + dx), False beyond the frame."""
    out = np.zeros_like(a)
    h, w = a.shape
    out[max(-dy, 0):h - max(dy, 0), max(-dx, 0):w - max(dx, 0)] = \
        a[max(dy, 0):h - max(-dy, 0), max(dx, 0):w - max(-dx, 0)]
    return out


# (two orthogonal neighbours that must be set, three neighbours that must be clear)
_CORNERS = (
    (((-1, 0), (0, 1)), ((1, 0), (0, -1), (1, -1))),
    (((0, 1), (1, 0)), ((-1, 0), (0, -1), (-1, -1))),
    (((1, 0), (0, -1)), ((-1, 0), (0, 1), (-1, 1))),
    (((0, -1), (-1, 0)), ((1, 0), (0, 1), (1, 1))),
)


def _remove_corners(skeleton: NDArray[np.bool_]) -> NDArray[np.bool_]:
    """Delete staircase corner pixels whose two arms already touch diagonally."""
    out = skeleton.copy()
    for required, clear in _CORNERS:
        corner = out.copy()
        for dy, dx in required:
            corner &= _shifted(out, dy, dx)
        for dy, dx in clear:
            corner &= ~_shifted(out, dy, dx)
        out &= ~corner
    return out


def thin(ridge_map: Mask) -> Mask:
    """
    Reduce a binary map to a one-pixel-wide, 8-connected skeleton.

    Thinning and corner removal repeat until nothing changes, so the result
    is a fixed point: ``thin(thin(m))`` equals ``thin(m)``.
    """
    skeleton = np.asarray(ridge_map, dtype=bool)
    while True:
        thinned = _remove_corners(morphology.thin(skeleton))
        if np.array_equal(thinned, skeleton):
            return thinned
        skeleton = thinned


# ============================================================================
# Crossing number
# ============================================================================

# neighbour bits in circular order N, NE, E, SE, S, SW, W, NW
_NEIGHBOUR_WEIGHTS = np.array([[128, 1, 2], [64, 0, 4], [32, 16, 8]], dtype=np.int32)
_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _crossing_table() -> NDArray[np.uint8]:
    table = np.zeros(256, dtype=np.uint8)
    for code in range(256):
        bits = [(code >> i) & 1 for i in range(8)]
        table[code] = sum(abs(bits[i] - bits[(i + 1) % 8]) for i in range(8)) // 2
    return table


_CN_TABLE = _crossing_table()


def crossing_number(skeleton: Mask) -> NDArray[np.uint8]:
    """CN(p) = 1/2 sum |v_i - v_(i+1)| around each skeleton pixel, 0 elsewhere."""
    skel = np.asarray(skeleton, dtype=bool)
    codes = ndimage.correlate(skel.astype(np.int32), _NEIGHBOUR_WEIGHTS, mode="constant", cval=0)
    return np.where(skel, _CN_TABLE[codes], 0).astype(np.uint8)


Pixel = Tuple[int, int]


def _neighbours(skel: Mask, p: Pixel) -> List[Pixel]:
    h, w = skel.shape
    return [(p[0] + dy, p[1] + dx) for dy, dx in _OFFSETS
            if 0 <= p[0] + dy < h and 0 <= p[1] + dx < w and skel[p[0] + dy, p[1] + dx]]


def _branch_starts(skel: Mask, p: Pixel) -> List[Pixel]:
    """One pixel per run of set neighbours, preferring orthogonal ones."""
    h, w = skel.shape
    bits = [0 <= p[0] + dy < h and 0 <= p[1] + dx < w and bool(skel[p[0] + dy, p[1] + dx])
            for dy, dx in _OFFSETS]
    starts = []
    for i in range(8):
        if bits[i] and not bits[i - 1]:
            run = []
            k = i
            while bits[k % 8] and len(run) < 8:
                run.append(k % 8)
                k += 1
            best = min(run, key=lambda j: (j % 2, j))
            starts.append((p[0] + _OFFSETS[best][0], p[1] + _OFFSETS[best][1]))
    return starts


def _trace(skel: Mask, origin: Pixel, first: Pixel, blocked: Iterable[Pixel]) -> Pixel:
    """Follow a ridge from ``first`` away from ``origin`` for up to TRACE_STEPS pixels."""
    visited = set(blocked) | {origin, first}
    current = first
    for _ in range(TRACE_STEPS - 1):
        ahead = [q for q in _neighbours(skel, current) if q not in visited]
        if not ahead:
            break
        ahead.sort(key=lambda q: abs(q[0] - current[0]) + abs(q[1] - current[1]))
        visited.update(ahead)
        current = ahead[0]
    return current


def _direction(src: Pixel, dst: Pixel) -> float:
    return math.atan2(dst[0] - src[0], dst[1] - src[1]) % (2 * math.pi)


def _minutia_angle(skel: Mask, p: Pixel, kind: MinutiaKind) -> float:
    starts = _branch_starts(skel, p)
    if not starts:
        return 0.0
    if kind is MinutiaKind.RIDGE_ENDING:
        # from the ridge toward the ending
        return _direction(_trace(skel, p, starts[0], ()), p)

    blocked = _neighbours(skel, p)
    ends = [_trace(skel, p, s, blocked) for s in starts]
    angles = [_direction(p, e) for e in ends]

    def separation(i: int) -> float:
        gaps = [abs((angles[i] - angles[j] + math.pi) % (2 * math.pi) - math.pi)
                for j in range(len(angles)) if j != i]
        return min(gaps) if gaps else 0.0

    stem = max(range(len(angles)), key=lambda i: (separation(i), -i))
    # from the stem into the fork
    return _direction(ends[stem], p)


def extract_minutiae(
    skeleton: Mask,
    orientation: Optional[OrientationField] = None,
    mask: Optional[Mask] = None
) -> MinutiaSet:
    """
    Crossing-number minutiae of a skeleton.

    CN 1 is a ridge ending and CN 3 a bifurcation. Candidates within
    BORDER_MARGIN px of the mask edge (the frame edge when ``mask`` is None)
    are dropped. Reliability is the orientation coherence at the minutia, or
    1.0 without an estimated field.

    Args:
        skeleton: One-pixel-wide binary skeleton
        orientation: Field supplying per-block coherence
        mask: Fingerprint area

    Returns:
        MinutiaSet in row-major pixel order
    """
    skel = np.asarray(skeleton, dtype=bool)
    if mask is None:
        mask = np.ones(skel.shape, dtype=bool)
    depth = ndimage.distance_transform_edt(np.pad(mask, 1))[1:-1, 1:-1]
    cn = crossing_number(skel)
    ys, xs = np.nonzero(skel & ((cn == 1) | (cn == 3)) & (depth > BORDER_MARGIN))

    found = []
    for y, x in zip(ys.tolist(), xs.tolist()):
        kind = MinutiaKind.RIDGE_ENDING if cn[y, x] == 1 else MinutiaKind.BIFURCATION
        reliability = orientation.coherence_at(x, y) if orientation is not None else 1.0
        found.append(Minutia(float(x), float(y), _minutia_angle(skel, (y, x), kind), kind,
                             reliability))
    return MinutiaSet.from_minutiae(found)


def _drop_close_pairs(minutiae: MinutiaSet, distance: float = CLOSE_PAIR_PX) -> MinutiaSet:
    """Remove both members of every pair closer than ``distance`` (broken ridges, short spurs)."""
    if len(minutiae) < 2:
        return minutiae
    nearest, _ = cKDTree(minutiae.xy).query(minutiae.xy, k=2)
    return minutiae.select(nearest[:, 1] >= distance)


@dataclass(frozen=True)
class _Analysis:
    orientation: OrientationField
    area: Mask
    minutiae: MinutiaSet


def _analyze(img: GrayImage) -> _Analysis:
    require_pipeline_image(img)
    orientation = estimate_orientation(img)
    area = region_mask(img)
    if not area.any():
        return _Analysis(orientation, area, MinutiaSet.empty())
    skeleton = thin(enhance_and_binarize(img, orientation))
    minutiae = _drop_close_pairs(extract_minutiae(skeleton, orientation, area))
    return _Analysis(orientation, area, minutiae)


def extract_from_image(img: GrayImage) -> MinutiaSet:
    """Full extraction: enhance, thin, classify, then drop close spurious pairs."""
    return _analyze(img).minutiae


# ============================================================================
# Quality
# ============================================================================

def _quality(img: GrayImage, analysis: _Analysis) -> float:
    area = analysis.area
    if not area.any():
        return 0.0
    orientation = analysis.orientation
    block = orientation.block_size
    rows, cols = orientation.angles.shape
    cover = area[:rows * block, :cols * block].reshape(rows, block, cols, block).mean(axis=(1, 3))
    inside = cover >= 0.5
    coherence = float(orientation.coherence[inside].mean()) if inside.any() else 0.0  # type: ignore[index]
    contrast = min(1.0, float(img[area].std()) / CONTRAST_FULL_SCALE)
    # a print without minutiae (clean parallel ridges) is judged by its flow alone
    reliability = float(analysis.minutiae.reliability.mean()) if len(analysis.minutiae) else coherence
    coverage = min(1.0, 100.0 * float(area.mean()) / AREA_FULL_SCALE)
    score = 100.0 * (
        QUALITY_WEIGHTS["coherence"] * coherence
        + QUALITY_WEIGHTS["contrast"] * contrast
        + QUALITY_WEIGHTS["reliability"] * reliability
        + QUALITY_WEIGHTS["area"] * coverage
    )
    return float(np.clip(score, 0.0, 100.0))


def quality_score(img: GrayImage) -> float:
    """
    Composite 0-100 quality proxy.

    Blends mean orientation coherence over the print, grey-level contrast,
    mean minutia reliability and fingerprint coverage. A blank image scores 0;
    without minutiae the reliability term falls back to the coherence.
    """
    return _quality(img, _analyze(img))


# ============================================================================
# Per-image metrics and the quality report
# ============================================================================

METRIC_LABELS: Dict[str, str] = {
    "ridge_ending_count": "Ridge Ending Minutiae Count",
    "bifurcation_count": "Bifurcation Minutiae Count",
    "ridge_reliability": "Ridge Ending Reliability",
    "bifurcation_reliability": "Bifurcation Reliability",
    "bifurcation_percentage": "Bifurcation Percentage (%)",
    "fingerprint_area": "Area of the Fingerprint (% of frame)",
    "quality_score": "quality_score (proxy)",
}


@dataclass(frozen=True)
class ImageMetrics:
    ridge_ending_count: int
    bifurcation_count: int
    ridge_reliability: float
    bifurcation_reliability: float
    bifurcation_percentage: float
    fingerprint_area: float
    quality_score: float


def metrics_from_minutiae(
    minutiae: MinutiaSet,
    fingerprint_area: float,
    quality: float
) -> ImageMetrics:
    """Derive the per-image metric record from extracted minutiae."""
    endings = minutiae.kind == MinutiaKind.RIDGE_ENDING
    bifurcations = minutiae.kind == MinutiaKind.BIFURCATION
    n_end, n_bif = int(endings.sum()), int(bifurcations.sum())
    return ImageMetrics(
        ridge_ending_count=n_end,
        bifurcation_count=n_bif,
        ridge_reliability=float(minutiae.reliability[endings].mean()) if n_end else 0.0,
        bifurcation_reliability=float(minutiae.reliability[bifurcations].mean()) if n_bif else 0.0,
        bifurcation_percentage=100.0 * n_bif / (n_bif + n_end) if n_bif + n_end else 0.0,
        fingerprint_area=float(fingerprint_area),
        quality_score=float(quality),
    )


def analyze_image(img: GrayImage) -> Tuple[MinutiaSet, ImageMetrics]:
    """Extract minutiae and compute the metric record in one pass."""
    analysis = _analyze(img)
    metrics = metrics_from_minutiae(
        analysis.minutiae, 100.0 * float(analysis.area.mean()), _quality(img, analysis)
    )
    return analysis.minutiae, metrics


def image_metrics(img: GrayImage) -> ImageMetrics:
    return analyze_image(img)[1]


@dataclass(frozen=True)
class QualityReport:
    """
    Mean and population standard deviation of each per-image metric.

    ``stats`` maps a metric name from METRIC_LABELS to (mean, std).
    """

    images: int
    skipped: int
    stats: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def rows(self) -> List[Tuple[str, float, float]]:
        return [(METRIC_LABELS[name], *self.stats[name]) for name in METRIC_LABELS
                if name in self.stats]


def aggregate_metrics(metrics: Sequence[ImageMetrics], skipped: int = 0) -> QualityReport:
    """Aggregate per-image records; order of ``metrics`` does not matter."""
    stats: Dict[str, Tuple[float, float]] = {}
    for name in METRIC_LABELS:
        values = np.array([getattr(m, name) for m in metrics], dtype=np.float64)
        if values.size:
            stats[name] = (float(values.mean()), float(values.std(ddof=0)))
        else:
            stats[name] = (0.0, 0.0)
    return QualityReport(len(metrics), skipped, stats)


def _metrics_for_path(path: str) -> Optional[ImageMetrics]:
    try:
        return image_metrics(load_image(path))
    except ImageError as e:
        logger.warning(f"Skipping {path}: {e.message}")
        return None


def quality_report(
    manifest: DatasetManifest,
    root: Union[str, Path],
    workers: int = 1
) -> QualityReport:
    """
    Compute the quality report for every image of a manifest.

    Unreadable images are skipped with a warning and counted in ``skipped``.
    """
    paths = [str(Path(root) / r.path) for r in manifest]
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_metrics_for_path, paths, chunksize=8))
    else:
        results = [_metrics_for_path(p) for p in paths]
    metrics = [m for m in results if m is not None]
    skipped = len(results) - len(metrics)
    if skipped:
        logger.warning(f"{skipped} of {len(paths)} images could not be read")
    return aggregate_metrics(metrics, skipped)


def write_quality_csv(report: QualityReport, path: Union[str, Path]) -> None:
    """Write one row per metric with mean and population std columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "mean", "std_population"])
        for label, mean, std in report.rows():
            writer.writerow([label, f"{mean:.4f}", f"{std:.4f}"])
