"""
Verification protocol and error-rate arithmetic.

Builds mated and non-mated pair protocols from a manifest, scores pairs in
parallel blocks, and computes TAR/FAR, FAR-target thresholds, score
histograms, distribution distances and the cross-dataset privacy scan.

Pair lists are (n, 2) integer arrays of manifest indices. All aggregates
are sums over blocks, so results do not depend on the worker count.
"""

import csv
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .exceptions import ValidationError
from .matcher import DEFAULT_SETTINGS, MatcherSettings, match
from .minutiae import MinutiaSet
from .synthcore import DatasetManifest, RngStream

logger = logging.getLogger(__name__)

NONMATED_POLICY = "exclude-same-subject"
DEFAULT_BLOCK_SIZE = 512

PairArray = NDArray[np.int64]


# ============================================================================
# Pair protocol
# ============================================================================

def _pairs(count: int) -> int:
    return count * (count - 1) // 2


def count_mated(manifest: DatasetManifest) -> int:
    """Closed form: per (subject, class), all pairs minus same-impression pairs."""
    groups = Counter((r.subject, r.finger_class) for r in manifest)
    same = Counter((r.subject, r.finger_class, r.impression) for r in manifest)
    return sum(_pairs(n) for n in groups.values()) - sum(_pairs(n) for n in same.values())


def count_nonmated(manifest: DatasetManifest) -> int:
    """Closed form: C(N, 2) minus the same-subject pairs."""
    per_subject = Counter(r.subject for r in manifest)
    return _pairs(len(manifest)) - sum(_pairs(n) for n in per_subject.values())


def cross_pair_count(size_a: int, size_b: int) -> int:
    return size_a * size_b


def build_mated_pairs(manifest: DatasetManifest) -> PairArray:
    """All unordered index pairs sharing (subject, class) with different impressions."""
    groups: Dict[Tuple[int, int], List[int]] = {}
    for index, record in enumerate(manifest):
        groups.setdefault((record.subject, int(record.finger_class)), []).append(index)

    impressions = np.array([r.impression for r in manifest], dtype=np.int64)
    chunks = []
    for indices in groups.values():
        members = np.array(indices, dtype=np.int64)
        i, j = np.triu_indices(len(members), k=1)
        keep = impressions[members[i]] != impressions[members[j]]
        chunks.append(np.stack([members[i][keep], members[j][keep]], axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate(chunks)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def build_nonmated_pairs(manifest: DatasetManifest) -> PairArray:
    """All unordered index pairs with different subjects, any classes."""
    subjects = np.array([r.subject for r in manifest], dtype=np.int64)
    i, j = np.triu_indices(len(subjects), k=1)
    keep = subjects[i] != subjects[j]
    return np.stack([i[keep], j[keep]], axis=1).astype(np.int64)


def _unrank_pairs(ranks: NDArray[np.int64], size: int) -> Tuple[NDArray[np.int64], NDArray[np.int64]]:
    """Map row-major ranks of the strict upper triangle of a size x size grid to (i, j)."""
    def before(row: NDArray[np.int64]) -> NDArray[np.int64]:
        return row * (2 * size - row - 1) // 2

    b = 2.0 * size - 1.0
    i = np.floor((b - np.sqrt(np.maximum(b * b - 8.0 * ranks, 0.0))) / 2.0).astype(np.int64)
    i = np.clip(i, 0, max(size - 2, 0))
    for _ in range(2):
        i = np.where(before(i) > ranks, i - 1, i)
        i = np.where(before(i + 1) <= ranks, i + 1, i)
    j = ranks - before(i) + i + 1
    return i, j


def sample_nonmated_pairs(manifest: DatasetManifest, count: int, rng: RngStream) -> PairArray:
    """
    Uniform random subset of the non-mated pairs, without replacement.

    Draws ranks into the upper triangle and rejects same-subject and repeated
    draws, so memory grows with ``count`` rather than with the number of
    pairs. Returns every non-mated pair when ``count`` is not smaller than
    their number, and enumerates when it is at least half of them. The
    result is sorted like :func:`build_nonmated_pairs`.
    """
    if count < 0:
        raise ValidationError(f"count must be >= 0, got {count}")
    available = count_nonmated(manifest)
    if available == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if 2 * count >= available:
        pairs = build_nonmated_pairs(manifest)
        if count >= available:
            return pairs
        chosen = np.sort(rng.generator().choice(len(pairs), size=count, replace=False))
        return pairs[chosen]

    size = len(manifest)
    total = _pairs(size)
    subjects = np.array([r.subject for r in manifest], dtype=np.int64)
    gen = rng.generator()
    kept = np.zeros(0, dtype=np.int64)
    while len(kept) < count:
        draw = gen.integers(0, total, size=max(2 * (count - len(kept)), 1024), dtype=np.int64)
        i, j = _unrank_pairs(draw, size)
        merged = np.concatenate([kept, draw[subjects[i] != subjects[j]]])
        # first occurrence wins so the draw order is kept
        _, first = np.unique(merged, return_index=True)
        kept = merged[np.sort(first)]
    i, j = _unrank_pairs(np.sort(kept[:count]), size)
    logger.debug(f"Sampled {count} of {available} non-mated pairs")
    return np.stack([i, j], axis=1).astype(np.int64)


@dataclass(frozen=True)
class PairProtocol:
    manifest: DatasetManifest
    mated: PairArray
    nonmated: PairArray
    policy: str = NONMATED_POLICY

    @classmethod
    def build(
        cls,
        manifest: DatasetManifest,
        max_nonmated: Optional[int] = None,
        rng: Optional[RngStream] = None
    ) -> "PairProtocol":
        if max_nonmated is not None and max_nonmated < count_nonmated(manifest):
            nonmated = sample_nonmated_pairs(manifest, max_nonmated, rng or RngStream.from_seed(0))
        else:
            nonmated = build_nonmated_pairs(manifest)
        return cls(manifest, build_mated_pairs(manifest), nonmated)

    def records(self, pairs: PairArray) -> Iterator[Tuple[Any, Any]]:
        for i, j in pairs:
            yield self.manifest[int(i)], self.manifest[int(j)]


# ============================================================================
# Error rates
# ============================================================================

def far_percent(false_matches: int, comparisons: int) -> float:
    """Exact percentage of false matches; keep the raw counts alongside it."""
    if comparisons <= 0:
        raise ValidationError("Number of comparisons must be positive")
    return 100.0 * false_matches / comparisons


@dataclass(frozen=True)
class TarFarPoint:
    threshold: float
    tar: float
    far: float
    genuine_accepted: int = 0
    genuine_total: int = 0
    imposter_accepted: int = 0
    imposter_total: int = 0


def _as_scores(scores: Union[Sequence[float], NDArray[np.float64]], side: str) -> NDArray[np.float64]:
    values = np.asarray(scores, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValidationError(f"The {side} score list is empty")
    return values


def tar_far(
    genuine: Union[Sequence[float], NDArray[np.float64]],
    imposter: Union[Sequence[float], NDArray[np.float64]],
    threshold: float
) -> TarFarPoint:
    """
    TAR and FAR in percent at ``threshold``; ties count as accepted.

    Raises:
        ValidationError: If either score list is empty (the message names it)
    """
    g = _as_scores(genuine, "genuine")
    i = _as_scores(imposter, "imposter")
    g_acc = int(np.count_nonzero(g >= threshold))
    i_acc = int(np.count_nonzero(i >= threshold))
    return TarFarPoint(
        threshold=float(threshold),
        tar=100.0 * g_acc / g.size,
        far=100.0 * i_acc / i.size,
        genuine_accepted=g_acc,
        genuine_total=int(g.size),
        imposter_accepted=i_acc,
        imposter_total=int(i.size),
    )


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    far: float
    saturated: bool = False


def threshold_for_far(
    imposter: Union[Sequence[float], NDArray[np.float64]],
    far_target: float
) -> ThresholdResult:
    """
    Smallest observed score whose FAR does not exceed ``far_target`` percent.

    When even the largest score leaves FAR above the target, the next float
    above it is returned (FAR 0) and ``saturated`` is set.

    Raises:
        ValidationError: If ``far_target`` is not positive or no scores are given
    """
    if not far_target > 0:
        raise ValidationError(f"far_target must be positive, got {far_target}")
    values = np.sort(_as_scores(imposter, "imposter"))
    n = values.size
    candidates = np.unique(values)
    at_or_above = n - np.searchsorted(values, candidates, side="left")
    far = 100.0 * at_or_above / n
    ok = np.flatnonzero(far <= far_target)
    if ok.size:
        k = int(ok[0])
        return ThresholdResult(float(candidates[k]), float(far[k]))

    top = float(np.nextafter(values[-1], np.inf))
    logger.warning(
        f"FAR target {far_target}% is not reachable with {n} imposter scores; "
        f"using {top!r} just above the maximum"
    )
    return ThresholdResult(top, 0.0, saturated=True)


@dataclass(frozen=True)
class TarFarRow:
    threshold: float
    dataset: str
    point: TarFarPoint
    source: str = "fixed"


def tar_far_table(
    datasets: Mapping[str, Tuple[NDArray[np.float64], NDArray[np.float64]]],
    thresholds: Sequence[float] = (),
    far_target: Optional[float] = None
) -> List[TarFarRow]:
    """
    Rows of (threshold, dataset, TAR, FAR) for every dataset.

    ``datasets`` maps a name to (genuine, imposter) scores. Each fixed
    threshold gives one row per dataset; with ``far_target`` every dataset
    also gets a row at its own FAR-target threshold.
    """
    rows = []
    for name, (genuine, imposter) in datasets.items():
        for t in thresholds:
            rows.append(TarFarRow(float(t), name, tar_far(genuine, imposter, t)))
        if far_target is not None:
            found = threshold_for_far(imposter, far_target)
            source = "far-target (saturated)" if found.saturated else "far-target"
            rows.append(TarFarRow(found.threshold, name,
                                  tar_far(genuine, imposter, found.threshold), source))
    return rows


# ============================================================================
# Distributions
# ============================================================================

@dataclass(frozen=True)
class ScoreDistribution:
    edges: NDArray[np.float64]
    counts: NDArray[np.int64]
    total: int

    @property
    def probabilities(self) -> NDArray[np.float64]:
        if self.total == 0:
            return np.zeros(self.counts.shape)
        return self.counts / float(self.total)


def histogram(
    scores: Union[Sequence[float], NDArray[np.float64]],
    bins: int,
    range_max: Optional[float] = None
) -> ScoreDistribution:
    """
    Equal-width histogram over [0, max], or [0, ``range_max``] when given.

    Scores beyond the range are counted in the end bins, so counts always
    sum to the number of scores.
    """
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    values = np.asarray(scores, dtype=np.float64).ravel()
    upper = range_max if range_max is not None else (float(values.max()) if values.size else 0.0)
    if upper <= 0:
        upper = 1.0
    counts, edges = np.histogram(np.clip(values, 0.0, upper), bins=bins, range=(0.0, upper))
    return ScoreDistribution(edges, counts.astype(np.int64), int(values.size))


def uniqueness_compare(a: ScoreDistribution, b: ScoreDistribution) -> float:
    """
    Total-variation distance between two normalised histograms, in [0, 1].

    Raises:
        ValidationError: If the binning differs or a distribution is empty
    """
    if a.edges.shape != b.edges.shape or not np.allclose(a.edges, b.edges, rtol=0, atol=1e-12):
        raise ValidationError("Distributions use different bins",
                              "Build both histograms with the same bins and range_max")
    if a.total == 0 or b.total == 0:
        raise ValidationError("Cannot compare an empty distribution")
    distance = 0.5 * float(np.abs(a.probabilities - b.probabilities).sum())
    return min(max(distance, 0.0), 1.0)


# ============================================================================
# Parallel scoring
# ============================================================================

_worker_templates_a: Sequence[MinutiaSet] = ()
_worker_templates_b: Sequence[MinutiaSet] = ()
_worker_settings: MatcherSettings = DEFAULT_SETTINGS


def _init_worker(
    templates_a: Sequence[MinutiaSet],
    templates_b: Sequence[MinutiaSet],
    settings: MatcherSettings
) -> None:
    global _worker_templates_a, _worker_templates_b, _worker_settings
    _worker_templates_a = templates_a
    _worker_templates_b = templates_b
    _worker_settings = settings


def _score_block(pairs: PairArray) -> Tuple[NDArray[np.float64], NDArray[np.int64]]:
    scores = np.zeros(len(pairs))
    support = np.zeros(len(pairs), dtype=np.int64)
    for k, (i, j) in enumerate(pairs):
        result = match(_worker_templates_a[int(i)], _worker_templates_b[int(j)], _worker_settings)
        scores[k] = result.value
        support[k] = result.supporting_pairs
    return scores, support


def _blocks(pairs: PairArray, block_size: int) -> List[PairArray]:
    return [pairs[start:start + block_size] for start in range(0, len(pairs), block_size)]


def score_pairs(
    templates: Sequence[MinutiaSet],
    pairs: PairArray,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    settings: MatcherSettings = DEFAULT_SETTINGS
) -> Tuple[NDArray[np.float64], NDArray[np.int64]]:
    """
    Score index pairs against one template list.

    Returns (scores, supporting pairs) in the order of ``pairs``; identical
    for any ``workers`` and ``block_size``.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    blocks = _blocks(pairs, max(1, block_size))
    if workers <= 1 or len(blocks) == 1:
        _init_worker(templates, templates, settings)
        results = [_score_block(block) for block in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(list(templates), list(templates), settings)) as pool:
            results = list(pool.map(_score_block, blocks))
    scores = np.concatenate([r[0] for r in results])
    support = np.concatenate([r[1] for r in results])
    logger.debug(f"Scored {len(pairs)} pairs in {len(blocks)} blocks")
    return scores, support


# ============================================================================
# Privacy scan
# ============================================================================

@dataclass(frozen=True)
class PrivacyScanResult:
    pairs_compared: int
    matches_above_threshold: int
    threshold: float = 0.0
    max_score: float = 0.0

    @property
    def effective_far(self) -> float:
        """Percentage of cross pairs at or above the threshold."""
        if self.pairs_compared == 0:
            return 0.0
        return far_percent(self.matches_above_threshold, self.pairs_compared)


def _scan_rows(task: Tuple[int, int, float]) -> Tuple[int, int, float]:
    start, stop, threshold = task
    compared = matches = 0
    top = 0.0
    for a in _worker_templates_a[start:stop]:
        for b in _worker_templates_b:
            value = match(a, b, _worker_settings).value
            compared += 1
            if value >= threshold:
                matches += 1
            top = max(top, value)
    return compared, matches, top


def privacy_scan(
    templates_a: Sequence[MinutiaSet],
    templates_b: Sequence[MinutiaSet],
    threshold: float,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    settings: MatcherSettings = DEFAULT_SETTINGS
) -> PrivacyScanResult:
    """
    Score every (a, b) cross pair and count scores at or above ``threshold``.

    Work is split into blocks of rows of ``templates_a`` (each block covers
    about ``block_size`` pairs); only counts and the maximum travel back, so
    memory does not grow with the number of pairs.
    """
    n_a, n_b = len(templates_a), len(templates_b)
    if n_a == 0 or n_b == 0:
        return PrivacyScanResult(0, 0, float(threshold))
    rows_per_block = max(1, block_size // n_b)
    tasks = [(start, min(start + rows_per_block, n_a), float(threshold))
             for start in range(0, n_a, rows_per_block)]

    if workers <= 1 or len(tasks) == 1:
        _init_worker(templates_a, templates_b, settings)
        results = [_scan_rows(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(list(templates_a), list(templates_b), settings)) as pool:
            results = list(pool.map(_scan_rows, tasks))

    compared = sum(r[0] for r in results)
    matches = sum(r[1] for r in results)
    top = max(r[2] for r in results)
    logger.info(f"Privacy scan: {matches} of {compared} cross pairs >= {threshold:g}")
    return PrivacyScanResult(compared, matches, float(threshold), top)


# ============================================================================
# Report files
# ============================================================================

def _open_csv(path: Union[str, Path]) -> Any:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def write_scores_csv(
    path: Union[str, Path],
    ids: Sequence[str],
    pairs: PairArray,
    scores: NDArray[np.float64],
    support: NDArray[np.int64]
) -> None:
    """Write (id_a, id_b, score, pairs) rows; ``ids`` maps manifest indices to identifiers."""
    with _open_csv(path) as f:
        writer = csv.writer(f)
        writer.writerow(["id_a", "id_b", "score", "pairs"])
        for (i, j), score, n in zip(pairs, scores, support):
            writer.writerow([ids[int(i)], ids[int(j)], f"{score:.6f}", int(n)])


def write_histogram_csv(path: Union[str, Path], distributions: Mapping[str, ScoreDistribution]) -> None:
    """Write (series, bin_low, bin_high, count) rows for external plotting."""
    with _open_csv(path) as f:
        writer = csv.writer(f)
        writer.writerow(["series", "bin_low", "bin_high", "count"])
        for name, dist in distributions.items():
            for low, high, count in zip(dist.edges[:-1], dist.edges[1:], dist.counts):
                writer.writerow([name, f"{low:.6f}", f"{high:.6f}", int(count)])


def write_tar_far_csv(path: Union[str, Path], rows: Sequence[TarFarRow]) -> None:
    """Write the TAR/FAR table with raw counts next to the percentages."""
    with _open_csv(path) as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "dataset", "tar_percent", "far_percent", "genuine_accepted",
                         "genuine_total", "imposter_accepted", "imposter_total", "source"])
        for row in rows:
            p = row.point
            writer.writerow([repr(row.threshold), row.dataset, f"{p.tar:.6f}", f"{p.far:.6f}",
                             p.genuine_accepted, p.genuine_total, p.imposter_accepted,
                             p.imposter_total, row.source])


def format_percent(value: float) -> str:
    """Render a percentage with enough digits for very small FARs."""
    if value == 0 or not math.isfinite(value):
        return f"{value:g}"
    digits = max(2, 2 - int(math.floor(math.log10(abs(value)))))
    return f"{value:.{digits}f}"
