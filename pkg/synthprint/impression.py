"""
Multiple impressions from one master print.

Four steps, always in this order: rigid transform (translate, then rotate
about the image centre), Gaussian RBF elastic deformation, fingerprint mask
at intensity 180, and contrast/brightness jitter confined to that mask.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from skimage.morphology import disk

from .exceptions import ValidationError
from .synthcore import (
    IMAGE_SIZE,
    WHITE,
    GrayImage,
    Mask,
    RngStream,
    require_pipeline_image,
    to_gray,
)

logger = logging.getLogger(__name__)

TRANSLATION_RANGE = (-10.0, 10.0)
ROTATION_RANGE = (-30.0, 30.0)
ALPHA_RANGE = (0.7, 1.3)
BETA_RANGE = (-30.0, 30.0)
MASK_THRESHOLD = 180
REGION_SMOOTHING = 2.5

CONTROL_GRID = 4
CONTROL_COUNT_RANGE = (4, 32)
MAX_CONTROL_WEIGHT = 8.0
RBF_SIGMA = 40.0
FIELD_BOUND = 12.0
FIELD_TARGET = 10.5

BBox = Tuple[float, float, float, float]

# coarse grid on which a sampled field is checked against FIELD_TARGET
_CHECK_STEP = 8
_check_y, _check_x = np.mgrid[0:IMAGE_SIZE:_CHECK_STEP, 0:IMAGE_SIZE:_CHECK_STEP]
_CHECK_X = _check_x.ravel().astype(np.float64)
_CHECK_Y = _check_y.ravel().astype(np.float64)


@dataclass(frozen=True)
class ControlPoint:
    """RBF centre (x, y) and its displacement weight (wx, wy), all in px."""

    x: float
    y: float
    wx: float = 0.0
    wy: float = 0.0

    @property
    def weight(self) -> float:
        return math.hypot(self.wx, self.wy)


@dataclass(frozen=True)
class ImpressionParams:
    """Every random quantity of one impression."""

    dx: float
    dy: float
    angle: float
    controls: Tuple[ControlPoint, ...]
    sigma: float = RBF_SIGMA
    mask_threshold: int = MASK_THRESHOLD
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "controls", tuple(self.controls))
        _check_range("dx", self.dx, TRANSLATION_RANGE)
        _check_range("dy", self.dy, TRANSLATION_RANGE)
        _check_range("angle", self.angle, ROTATION_RANGE)
        _check_range("alpha", self.alpha, ALPHA_RANGE)
        _check_range("beta", self.beta, BETA_RANGE)
        low, high = CONTROL_COUNT_RANGE
        if not low <= len(self.controls) <= high:
            raise ValidationError(f"Need {low}-{high} control points, got {len(self.controls)}")
        if any(c.weight > MAX_CONTROL_WEIGHT + 1e-9 for c in self.controls):
            raise ValidationError(f"Control weights are limited to {MAX_CONTROL_WEIGHT:g} px")
        if self.sigma < RBF_SIGMA:
            raise ValidationError(f"RBF sigma must be >= {RBF_SIGMA:g} px")

    @classmethod
    def identity(cls, bbox: Optional[BBox] = None) -> "ImpressionParams":
        """Parameters under which the whole pipeline returns its input."""
        centres = _grid_centres(bbox or (0.0, 0.0, float(IMAGE_SIZE), float(IMAGE_SIZE)))
        return cls(0.0, 0.0, 0.0, tuple(ControlPoint(x, y) for x, y in centres))


def _check_range(name: str, value: float, bounds: Tuple[float, float]) -> None:
    if not bounds[0] <= value <= bounds[1]:
        raise ValidationError(f"{name}={value} outside [{bounds[0]:g}, {bounds[1]:g}]")


def _grid_centres(bbox: BBox) -> list:
    x0, y0, x1, y1 = bbox
    step_x = (x1 - x0) / CONTROL_GRID
    step_y = (y1 - y0) / CONTROL_GRID
    return [
        (x0 + (i + 0.5) * step_x, y0 + (j + 0.5) * step_y)
        for j in range(CONTROL_GRID) for i in range(CONTROL_GRID)
    ]


# ============================================================================
# Sampling
# ============================================================================

def mask_bbox(mask: Mask) -> BBox:
    """Bounding box (x0, y0, x1, y1) of a mask; the full frame when empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return (0.0, 0.0, float(mask.shape[1]), float(mask.shape[0]))
    return (float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def sample_params(rng: RngStream, bbox: Optional[BBox] = None) -> ImpressionParams:
    """
    Draw impression parameters uniformly within their ranges.

    Sixteen controls are jittered on a 4x4 grid over ``bbox`` (the full frame
    by default) with weights of uniform direction and magnitude up to 8 px.
    If the resulting field would exceed FIELD_TARGET anywhere on the check
    grid, all weights are scaled down together, which keeps the field smooth.
    """
    gen = rng.generator()
    dx, dy = gen.uniform(*TRANSLATION_RANGE, size=2)
    angle = gen.uniform(*ROTATION_RANGE)
    alpha = gen.uniform(*ALPHA_RANGE)
    beta = gen.uniform(*BETA_RANGE)

    box = bbox or (0.0, 0.0, float(IMAGE_SIZE), float(IMAGE_SIZE))
    centres = np.array(_grid_centres(box))
    cell = np.array([(box[2] - box[0]) / CONTROL_GRID, (box[3] - box[1]) / CONTROL_GRID])
    centres = centres + gen.uniform(-0.25, 0.25, size=centres.shape) * cell
    magnitude = gen.uniform(0.0, MAX_CONTROL_WEIGHT, size=len(centres))
    direction = gen.uniform(0.0, 2 * math.pi, size=len(centres))
    weights = np.stack([magnitude * np.cos(direction), magnitude * np.sin(direction)], axis=1)

    controls = [ControlPoint(float(x), float(y), float(wx), float(wy))
                for (x, y), (wx, wy) in zip(centres, weights)]
    ux, uy = displacement_field(controls, RBF_SIGMA, _CHECK_X, _CHECK_Y)
    peak = float(np.hypot(ux, uy).max()) if len(controls) else 0.0
    if peak > FIELD_TARGET:
        scale = FIELD_TARGET / peak
        controls = [ControlPoint(c.x, c.y, c.wx * scale, c.wy * scale) for c in controls]

    return ImpressionParams(
        dx=float(dx), dy=float(dy), angle=float(angle), controls=tuple(controls),
        sigma=RBF_SIGMA, mask_threshold=MASK_THRESHOLD, alpha=float(alpha), beta=float(beta),
    )


# ============================================================================
# Geometry
# ============================================================================

def _resample(img: GrayImage, src_x: NDArray[np.float64], src_y: NDArray[np.float64]) -> GrayImage:
    values = ndimage.map_coordinates(
        img.astype(np.float64), [src_y, src_x], order=1, mode="constant", cval=float(WHITE)
    )
    return to_gray(values)


def apply_rigid(img: GrayImage, dx: float, dy: float, angle: float) -> GrayImage:
    """
    Translate by (dx, dy), then rotate by ``angle`` degrees about the centre.

    Rotation is counter-clockwise in (x, y) with y pointing down the rows.
    Pixels mapped from outside the frame are white.
    """
    require_pipeline_image(img)
    h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cos_a, sin_a = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    rx, ry = xs - cx, ys - cy
    src_x = cos_a * rx + sin_a * ry + cx - dx
    src_y = -sin_a * rx + cos_a * ry + cy - dy
    return _resample(img, src_x, src_y)


def rotate_points(
    xy: NDArray[np.float64],
    angle: float,
    centre: Tuple[float, float] = ((IMAGE_SIZE - 1) / 2.0, (IMAGE_SIZE - 1) / 2.0)
) -> NDArray[np.float64]:
    """Rotate (x, y) rows by ``angle`` degrees about ``centre``, same sense as apply_rigid."""
    cos_a, sin_a = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    rel = np.asarray(xy, dtype=np.float64) - centre
    return np.stack([cos_a * rel[:, 0] - sin_a * rel[:, 1],
                     sin_a * rel[:, 0] + cos_a * rel[:, 1]], axis=1) + centre


def displacement_field(
    controls: Sequence[ControlPoint],
    sigma: float,
    xs: NDArray[np.float64],
    ys: NDArray[np.float64]
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gaussian RBF displacement evaluated at arrays of positions."""
    ux = np.zeros(np.shape(xs))
    uy = np.zeros(np.shape(xs))
    two_sigma_sq = 2.0 * sigma * sigma
    for c in controls:
        if c.wx == 0.0 and c.wy == 0.0:
            continue
        kernel = np.exp(-((xs - c.x) ** 2 + (ys - c.y) ** 2) / two_sigma_sq)
        ux += c.wx * kernel
        uy += c.wy * kernel
    return ux, uy


def rbf_displacement(
    controls: Sequence[ControlPoint],
    sigma: float,
    at: Tuple[float, float]
) -> Tuple[float, float]:
    """u(p) = sum_i w_i * exp(-|p - c_i|^2 / (2 sigma^2))."""
    ux, uy = displacement_field(controls, sigma, np.array([at[0]], float), np.array([at[1]], float))
    return float(ux[0]), float(uy[0])


def apply_deformation(img: GrayImage, params: ImpressionParams) -> GrayImage:
    """Backward-warp through the RBF field with bilinear sampling."""
    require_pipeline_image(img)
    if all(c.wx == 0.0 and c.wy == 0.0 for c in params.controls):
        return img.copy()
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ux, uy = displacement_field(params.controls, params.sigma, xs, ys)
    return _resample(img, xs - ux, ys - uy)


# ============================================================================
# Mask and tone
# ============================================================================

def fingerprint_mask(img: GrayImage, threshold: int = MASK_THRESHOLD) -> Mask:
    """
    Pixels darker than ``threshold`` form the fingerprint.

    The comparison is inverted with respect to a literal "above threshold"
    reading so that the white background stays outside the mask.
    """
    return np.asarray(img) < threshold


def region_mask(img: GrayImage, threshold: int = MASK_THRESHOLD) -> Mask:
    """
    Fingerprint area rather than individual ridges.

    The image is smoothed across a ridge period before thresholding, so
    ridges and valleys merge into one region while isolated dark noise in the
    background does not. Holes are filled and small specks opened away.
    """
    img = np.asarray(img)
    if not fingerprint_mask(img, threshold).any():
        return np.zeros(img.shape, dtype=bool)
    smoothed = ndimage.gaussian_filter(img.astype(np.float64), REGION_SMOOTHING)
    area = smoothed < threshold
    area = ndimage.binary_closing(area, structure=disk(4), border_value=0)
    area = ndimage.binary_fill_holes(area)
    return ndimage.binary_opening(area, structure=disk(3))


def adjust_contrast(img: GrayImage, mask: Mask, alpha: float, beta: float) -> GrayImage:
    """Apply clamp(alpha * v + beta) inside ``mask``; other pixels are copied unchanged."""
    _check_range("alpha", alpha, ALPHA_RANGE)
    _check_range("beta", beta, BETA_RANGE)
    out = np.array(img, dtype=np.uint8, copy=True)
    out[mask] = to_gray(alpha * out[mask].astype(np.float64) + beta)
    return out


# ============================================================================
# Pipeline
# ============================================================================

def apply_impression(master: GrayImage, params: ImpressionParams) -> GrayImage:
    """Run the four impression steps with explicit parameters."""
    moved = apply_rigid(master, params.dx, params.dy, params.angle)
    warped = apply_deformation(moved, params)
    mask = fingerprint_mask(warped, params.mask_threshold)
    return adjust_contrast(warped, mask, params.alpha, params.beta)


def generate_impression(master: GrayImage, rng: RngStream) -> GrayImage:
    """One impression of ``master``; a pure function of (master, rng)."""
    require_pipeline_image(master, "master")
    params = sample_params(rng, mask_bbox(fingerprint_mask(master)))
    logger.debug(
        f"Impression: shift ({params.dx:+.1f}, {params.dy:+.1f}) px, "
        f"rotation {params.angle:+.1f} deg, alpha {params.alpha:.2f}, beta {params.beta:+.1f}"
    )
    return apply_impression(master, params)
