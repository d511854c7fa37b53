"""
Minutiae matching.

Alignment is a Hough-style vote over rotation and translation, pairing is
greedy and one-to-one under distance and angle tolerances, and the score is
100 * pairs^2 / (|a| |b|). Scores are comparable within this matcher only.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .minutiae import MinutiaSet
from .synthcore import IMAGE_SIZE

logger = logging.getLogger(__name__)

MIN_MINUTIAE = 3
CENTRE = ((IMAGE_SIZE - 1) / 2.0, (IMAGE_SIZE - 1) / 2.0)


@dataclass(frozen=True)
class MatcherSettings:
    """
    Search bounds and pairing tolerances.

    ``max_rotation_deg`` defaults to 60 because two impressions that are each
    rotated by up to 30 degrees can differ by 60.
    """

    max_rotation_deg: float = 60.0
    max_translation_px: float = 60.0
    rotation_bin_deg: float = 5.0
    translation_bin_px: float = 8.0
    pair_distance_px: float = 12.0
    pair_angle_deg: float = 20.0


DEFAULT_SETTINGS = MatcherSettings()


@dataclass(frozen=True)
class Alignment:
    """Rigid transform taking ``a`` onto ``b``: rotate by dtheta (deg) about the centre, then shift."""

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0
    votes: int = 0
    confidence: float = 0.0


@dataclass(frozen=True)
class MatchScore:
    value: float = 0.0
    supporting_pairs: int = 0


def _wrap(angle: NDArray[np.float64]) -> NDArray[np.float64]:
    """Wrap radians to (-pi, pi]."""
    return np.pi - np.mod(np.pi - angle, 2 * np.pi)


def _neighbourhood_sum(hist: NDArray[np.int64]) -> NDArray[np.int64]:
    """3x3x3 box sum with zero padding, one axis at a time."""
    out = hist
    for axis in range(out.ndim):
        n = out.shape[axis]
        pad = [(1, 1) if ax == axis else (0, 0) for ax in range(out.ndim)]
        padded = np.pad(out, pad)
        out = sum(
            padded[tuple(slice(k, k + n) if ax == axis else slice(None) for ax in range(out.ndim))]
            for k in range(3)
        )
    return out


def align(
    a: MinutiaSet,
    b: MinutiaSet,
    settings: MatcherSettings = DEFAULT_SETTINGS
) -> Alignment:
    """
    Find the rigid transform with the most minutia correspondence votes.

    Every same-kind pair (i, j) votes for dtheta = angle_b - angle_a and the
    translation that then carries a_i onto b_j. Votes are binned, the bin with
    the largest 3x3x3 neighbourhood total wins, and the transform is the
    median of the votes in that neighbourhood.

    Returns:
        Alignment; the identity with zero confidence when either set has
        fewer than three minutiae or nothing votes inside the search bounds
    """
    if len(a) < MIN_MINUTIAE or len(b) < MIN_MINUTIAE:
        return Alignment()

    ia, ib = np.nonzero(a.kind[:, None] == b.kind[None, :])
    dtheta = _wrap(b.angle[ib] - a.angle[ia])
    cos_t, sin_t = np.cos(dtheta), np.sin(dtheta)
    rel = a.xy[ia] - CENTRE
    tx = b.xy[ib, 0] - CENTRE[0] - (cos_t * rel[:, 0] - sin_t * rel[:, 1])
    ty = b.xy[ib, 1] - CENTRE[1] - (sin_t * rel[:, 0] + cos_t * rel[:, 1])

    deg = np.degrees(dtheta)
    inside = ((np.abs(deg) <= settings.max_rotation_deg)
              & (np.abs(tx) <= settings.max_translation_px)
              & (np.abs(ty) <= settings.max_translation_px))
    if not inside.any():
        return Alignment()
    deg, tx, ty = deg[inside], tx[inside], ty[inside]

    r_half = int(round(settings.max_rotation_deg / settings.rotation_bin_deg))
    t_half = int(round(settings.max_translation_px / settings.translation_bin_px))
    ri = np.rint(deg / settings.rotation_bin_deg).astype(np.int64) + r_half
    xi = np.rint(tx / settings.translation_bin_px).astype(np.int64) + t_half
    yi = np.rint(ty / settings.translation_bin_px).astype(np.int64) + t_half

    shape = (2 * r_half + 1, 2 * t_half + 1, 2 * t_half + 1)
    flat = np.ravel_multi_index((ri, xi, yi), shape)
    hist = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
    support = _neighbourhood_sum(hist)
    best = np.unravel_index(int(np.argmax(support)), support.shape)

    near = ((np.abs(ri - best[0]) <= 1) & (np.abs(xi - best[1]) <= 1)
            & (np.abs(yi - best[2]) <= 1))
    votes = int(near.sum())
    return Alignment(
        dx=float(np.median(tx[near])),
        dy=float(np.median(ty[near])),
        dtheta=float(np.median(deg[near])),
        votes=votes,
        confidence=votes / min(len(a), len(b)),
    )


def pair_minutiae(
    a: MinutiaSet,
    b: MinutiaSet,
    alignment: Alignment,
    settings: MatcherSettings = DEFAULT_SETTINGS
) -> List[Tuple[int, int]]:
    """
    Greedy one-to-one pairing of aligned ``a`` with ``b``.

    Candidates are same-kind pairs within the distance and angle tolerances;
    they are taken closest first, ties broken by index.
    """
    if len(a) == 0 or len(b) == 0:
        return []
    moved = a.transformed(alignment.dx, alignment.dy, alignment.dtheta, CENTRE)
    # Slightly widened radius; the exact distance test below decides.
    near = cKDTree(moved.xy).query_ball_tree(cKDTree(b.xy), settings.pair_distance_px * (1 + 1e-9))
    counts = [len(hits) for hits in near]
    if not any(counts):
        return []
    ia = np.repeat(np.arange(len(moved), dtype=np.int64), counts)
    ib = np.fromiter(itertools.chain.from_iterable(near), dtype=np.int64, count=int(sum(counts)))

    dist = np.hypot(moved.xy[ia, 0] - b.xy[ib, 0], moved.xy[ia, 1] - b.xy[ib, 1])
    turn = np.abs(_wrap(moved.angle[ia] - b.angle[ib]))
    ok = ((dist <= settings.pair_distance_px)
          & (turn <= math.radians(settings.pair_angle_deg))
          & (moved.kind[ia] == b.kind[ib]))
    ia, ib, dist = ia[ok], ib[ok], dist[ok]
    order = np.lexsort((ib, ia, dist))

    used_a: set = set()
    used_b: set = set()
    pairs = []
    for k in order:
        i, j = int(ia[k]), int(ib[k])
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return pairs


def match(
    a: MinutiaSet,
    b: MinutiaSet,
    settings: MatcherSettings = DEFAULT_SETTINGS
) -> MatchScore:
    """
    Similarity of two minutiae sets; symmetric in its arguments.

    The two sets are put into a canonical order before aligning, so
    ``match(a, b)`` and ``match(b, a)`` run the identical computation.
    """
    if len(a) == 0 or len(b) == 0:
        return MatchScore()
    first, second = (a, b) if a.sort_key() <= b.sort_key() else (b, a)
    pairs = len(pair_minutiae(first, second, align(first, second, settings), settings))
    return MatchScore(100.0 * pairs * pairs / (len(a) * len(b)), pairs)


@dataclass(frozen=True)
class ScoreRow:
    id_a: str
    id_b: str
    score: float
    pairs: int


def score_pair_list(
    templates: Mapping[str, MinutiaSet],
    pairs: Sequence[Tuple[str, str]],
    settings: MatcherSettings = DEFAULT_SETTINGS
) -> List[ScoreRow]:
    """Score an explicit list of (id_a, id_b) pairs; unknown ids raise KeyError."""
    rows = []
    for id_a, id_b in pairs:
        result = match(templates[id_a], templates[id_b], settings)
        rows.append(ScoreRow(id_a, id_b, result.value, result.supporting_pairs))
    logger.debug(f"Scored {len(rows)} listed pairs")
    return rows


def settings_from_config(values: Dict[str, float]) -> MatcherSettings:
    """Build matcher settings from the configuration keys that concern matching."""
    return MatcherSettings(
        max_rotation_deg=float(values.get("max_rotation_deg", DEFAULT_SETTINGS.max_rotation_deg)),
        pair_distance_px=float(values.get("pair_distance_px", DEFAULT_SETTINGS.pair_distance_px)),
        pair_angle_deg=float(values.get("pair_angle_deg", DEFAULT_SETTINGS.pair_angle_deg)),
    )
