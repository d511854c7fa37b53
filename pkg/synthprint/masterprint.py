"""
Class-conditioned procedural master fingerprints.

A master print is grown from seeded noise by iterated Gabor filtering that
follows a zero-pole orientation field, then cut to a finger-shaped
silhouette. Class conditioning only changes the silhouette and where the
cores and deltas sit; ridge statistics are shared by all classes.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import fft

from .exceptions import ValidationError
from .synthcore import IMAGE_SIZE, WHITE, FingerClass, GrayImage, Mask, RngStream, to_gray

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

RIDGE_PERIOD_RANGE = (7.0, 11.0)
GABOR_ITERATIONS = 15
ORIENTATION_BINS = 16
CONVERGENCE_TOL = 0.1
SILHOUETTE_MARGIN = 20

RIDGE_LEVEL = 30
VALLEY_LEVEL = 230

# (half width, half height) in px per finger; thumbs widest, little fingers narrowest
SILHOUETTE_DEFAULTS = {
    "Thumb": (160.0, 205.0),
    "Index": (135.0, 185.0),
    "Middle": (138.0, 192.0),
    "Ring": (128.0, 180.0),
    "Little": (112.0, 160.0),
}
SILHOUETTE_JITTER = 0.04
SILHOUETTE_MAX_OFFSET = 8.0

# Pattern-type prior per finger: arch, tented arch, ulnar loop, radial loop, whorl
PATTERN_PRIORS = {
    "Thumb": (0.05, 0.05, 0.40, 0.05, 0.45),
    "Index": (0.12, 0.10, 0.30, 0.15, 0.33),
    "Middle": (0.08, 0.04, 0.63, 0.05, 0.20),
    "Ring": (0.03, 0.02, 0.47, 0.03, 0.45),
    "Little": (0.03, 0.02, 0.82, 0.03, 0.10),
}
PATTERNS = ("arch", "tented_arch", "ulnar_loop", "radial_loop", "whorl")


# ============================================================================
# Parameters
# ============================================================================

@dataclass(frozen=True)
class Silhouette:
    """Elliptic fingertip outline centred horizontally in the frame."""

    half_width: float
    half_height: float
    vertical_offset: float = 0.0

    def fits(self, size: int = IMAGE_SIZE) -> bool:
        centre = size / 2.0
        return (
            self.half_width > 0 and self.half_height > 0
            and centre - self.half_width >= 1
            and centre + abs(self.vertical_offset) + self.half_height <= size - 1
        )


@dataclass(frozen=True)
class MasterPrintParams:
    """Singular points, ridge spacing and silhouette of one master print."""

    cores: Tuple[Point, ...]
    deltas: Tuple[Point, ...]
    ridge_period: float
    shape: Silhouette
    base_angle: float = 0.0
    pattern: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "cores", tuple(tuple(map(float, p)) for p in self.cores))
        object.__setattr__(self, "deltas", tuple(tuple(map(float, p)) for p in self.deltas))
        if len(self.cores) > 2 or len(self.deltas) > 2:
            raise ValidationError("A master print has at most two cores and two deltas")
        low, high = RIDGE_PERIOD_RANGE
        if not low <= self.ridge_period <= high:
            raise ValidationError(
                f"Ridge period {self.ridge_period} outside [{low:g}, {high:g}] px"
            )
        if not self.shape.fits():
            raise ValidationError("Silhouette does not fit inside the frame")


@dataclass(frozen=True)
class OrientationField:
    """
    Ridge orientation modulo pi sampled on a regular grid.

    ``angles[i, j]`` is the orientation of the block whose top-left pixel is
    ``(j * block_size, i * block_size)``. ``coherence`` is only present for
    fields estimated from an image.
    """

    angles: NDArray[np.float64]
    block_size: int = 1
    coherence: Optional[NDArray[np.float64]] = None

    def at(self, x: float, y: float) -> float:
        i = min(max(int(y) // self.block_size, 0), self.angles.shape[0] - 1)
        j = min(max(int(x) // self.block_size, 0), self.angles.shape[1] - 1)
        return float(self.angles[i, j])

    def coherence_at(self, x: float, y: float) -> float:
        if self.coherence is None:
            return 1.0
        i = min(max(int(y) // self.block_size, 0), self.coherence.shape[0] - 1)
        j = min(max(int(x) // self.block_size, 0), self.coherence.shape[1] - 1)
        return float(self.coherence[i, j])

    def dense(self, size: int = IMAGE_SIZE) -> NDArray[np.float64]:
        """Per-pixel angles for a ``size`` x ``size`` frame."""
        if self.block_size == 1 and self.angles.shape == (size, size):
            return self.angles
        rows = np.minimum(np.arange(size) // self.block_size, self.angles.shape[0] - 1)
        cols = np.minimum(np.arange(size) // self.block_size, self.angles.shape[1] - 1)
        return self.angles[np.ix_(rows, cols)]


@dataclass(frozen=True)
class MasterPrint:
    """A synthesized master print and how it was made."""

    image: GrayImage
    params: MasterPrintParams
    finger_class: FingerClass
    converged: bool = True


# ============================================================================
# Orientation field and silhouette
# ============================================================================

def orientation_field(params: MasterPrintParams, size: int = IMAGE_SIZE) -> OrientationField:
    """
    Zero-pole orientation field.

    theta(z) = theta0 + 1/2 sum arg(z - core) - 1/2 sum arg(z - delta), mod pi,
    sampled at integer pixel positions. A singular point that falls exactly on
    a sample is evaluated half a pixel away along both axes.
    """
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    z = xs + 1j * ys
    theta = np.full((size, size), float(params.base_angle))

    for sign, points in ((0.5, params.cores), (-0.5, params.deltas)):
        for px, py in points:
            dz = z - complex(px, py)
            dz[dz == 0] = 0.5 + 0.5j
            theta += sign * np.angle(dz)

    theta = np.mod(theta, math.pi)
    theta[theta >= math.pi] = 0.0
    return OrientationField(theta, block_size=1)


def sample_silhouette(finger_class: FingerClass, rng: RngStream) -> Silhouette:
    """Class default silhouette with a small deterministic jitter."""
    gen = rng.generator()
    half_width, half_height = SILHOUETTE_DEFAULTS[FingerClass.parse(finger_class).finger]
    scale_w, scale_h = gen.uniform(1 - SILHOUETTE_JITTER, 1 + SILHOUETTE_JITTER, size=2)
    offset = gen.uniform(-SILHOUETTE_MAX_OFFSET, SILHOUETTE_MAX_OFFSET)
    return Silhouette(half_width * scale_w, half_height * scale_h, float(offset))


def silhouette_mask(shape: Silhouette, size: int = IMAGE_SIZE) -> Mask:
    """Rasterise a silhouette; the margin keeps it clear of the frame border."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = size / 2.0
    u = (xs - centre) / shape.half_width
    v = (ys - centre - shape.vertical_offset) / shape.half_height
    mask = u * u + v * v <= 1.0
    mask[:SILHOUETTE_MARGIN // 4, :] = False
    mask[-(SILHOUETTE_MARGIN // 4):, :] = False
    mask[:, :SILHOUETTE_MARGIN // 4] = False
    mask[:, -(SILHOUETTE_MARGIN // 4):] = False
    return mask


def shape_mask(finger_class: FingerClass, size: int, rng: RngStream) -> Mask:
    """Foreground silhouette for a finger class."""
    return silhouette_mask(sample_silhouette(finger_class, rng), size)


def sample_master_params(finger_class: FingerClass, rng: RngStream) -> MasterPrintParams:
    """
    Draw singular points, ridge period and silhouette for a finger class.

    Left-hand ulnar loops open to the left of the image and right-hand ones
    to the right; radial loops are mirrored.
    """
    finger_class = FingerClass.parse(finger_class)
    shape = sample_silhouette(finger_class, rng.fork("shape"))
    gen = rng.fork("singularities").generator()

    pattern = PATTERNS[int(gen.choice(len(PATTERNS), p=PATTERN_PRIORS[finger_class.finger]))]
    period = float(gen.uniform(*RIDGE_PERIOD_RANGE))
    cx = IMAGE_SIZE / 2.0 + gen.uniform(-15, 15)
    cy = IMAGE_SIZE / 2.0 + shape.vertical_offset + gen.uniform(-20, 10)

    cores: Tuple[Point, ...] = ()
    deltas: Tuple[Point, ...] = ()
    base_angle = float(gen.uniform(-0.08, 0.08)) % math.pi

    if pattern == "tented_arch":
        cores = ((cx, cy - 20),)
        deltas = ((cx + gen.uniform(-5, 5), cy + 45 + gen.uniform(0, 15)),)
    elif pattern in ("ulnar_loop", "radial_loop"):
        opens_left = (finger_class.hand == "Left") == (pattern == "ulnar_loop")
        side = 1.0 if opens_left else -1.0
        cores = ((cx - side * gen.uniform(0, 15), cy - 25),)
        deltas = ((cx + side * gen.uniform(70, 110), cy + gen.uniform(85, 125)),)
    elif pattern == "whorl":
        spread = gen.uniform(20, 40)
        cores = ((cx + gen.uniform(-8, 8), cy - spread), (cx + gen.uniform(-8, 8), cy + 5))
        deltas = (
            (cx - gen.uniform(100, 130), cy + gen.uniform(90, 120)),
            (cx + gen.uniform(100, 130), cy + gen.uniform(90, 120)),
        )

    return MasterPrintParams(cores, deltas, period, shape, base_angle, pattern)


# ============================================================================
# Gabor synthesis
# ============================================================================

@lru_cache(maxsize=3)
def _gabor_bank(period: float, size: int, bins: int) -> Tuple[NDArray[np.complex128], ...]:
    """Frequency responses of even Gabor filters, one per orientation bin."""
    sigma = 0.5 * period
    radius = int(math.ceil(3 * sigma))
    ys, xs = np.mgrid[-radius:radius + 1, -radius:radius + 1].astype(np.float64)
    envelope = np.exp(-(xs ** 2 + ys ** 2) / (2 * sigma ** 2))

    bank = []
    for b in range(bins):
        phi = b * math.pi / bins
        across = -xs * math.sin(phi) + ys * math.cos(phi)
        kernel = envelope * np.cos(2 * math.pi * across / period)
        kernel -= kernel.mean()
        kernel /= np.abs(kernel).sum()
        padded = np.zeros((size, size))
        padded[:kernel.shape[0], :kernel.shape[1]] = kernel
        padded = np.roll(padded, (-radius, -radius), axis=(0, 1))
        bank.append(fft.rfft2(padded))
    return tuple(bank)


def oriented_filter(
    values: NDArray[np.float64],
    angles: NDArray[np.float64],
    period: float,
    bins: int = ORIENTATION_BINS
) -> NDArray[np.float64]:
    """
    Filter with the even Gabor kernel matching each pixel's orientation.

    Orientation is quantised to ``bins`` levels; each level is one FFT
    product over the whole frame.
    """
    size = values.shape[0]
    bank = _gabor_bank(round(float(period), 3), size, bins)
    index = np.rint(angles / (math.pi / bins)).astype(np.int64) % bins
    spectrum = fft.rfft2(values)
    out = np.zeros_like(values)
    for b, response in enumerate(bank):
        selected = index == b
        if selected.any():
            out[selected] = fft.irfft2(spectrum * response, s=values.shape)[selected]
    return out


def synthesize_master(
    params: MasterPrintParams,
    finger_class: FingerClass,
    rng: RngStream
) -> MasterPrint:
    """
    Grow a ridge pattern from seeded noise.

    Runs a fixed number of Gabor filtering passes, each followed by a
    normalise-and-squash step whose gain rises every pass so ridges end up
    nearly binary. If the last pass still moves the pattern by more than
    CONVERGENCE_TOL the current iterate is returned with ``converged=False``.
    """
    finger_class = FingerClass.parse(finger_class)
    size = IMAGE_SIZE
    angles = orientation_field(params, size).angles
    mask = silhouette_mask(params.shape, size)

    state = rng.fork("noise").generator().standard_normal((size, size))
    change = float("inf")
    for iteration in range(GABOR_ITERATIONS):
        filtered = oriented_filter(state, angles, params.ridge_period)
        filtered /= filtered[mask].std() + 1e-12
        gain = 1.0 + 0.25 * iteration
        updated = np.tanh(gain * filtered)
        change = float(np.abs(updated - state)[mask].mean())
        state = updated

    converged = change <= CONVERGENCE_TOL
    if not converged:
        logger.warning(
            f"Master synthesis for {finger_class.label} stopped after "
            f"{GABOR_ITERATIONS} passes (mean change {change:.3f})"
        )

    # positive response is ridge: dark ridges on a light valley level
    level = 0.5 * (VALLEY_LEVEL + RIDGE_LEVEL) - 0.5 * (VALLEY_LEVEL - RIDGE_LEVEL) * state
    image = to_gray(level)
    image[~mask] = WHITE
    return MasterPrint(image, params, finger_class, converged)


def generate_master(finger_class: FingerClass, rng: RngStream) -> MasterPrint:
    """Sample parameters for a class and synthesize its master print."""
    params = sample_master_params(finger_class, rng.fork("params"))
    logger.debug(
        f"{FingerClass.parse(finger_class).label}: {params.pattern}, "
        f"period {params.ridge_period:.2f}px"
    )
    return synthesize_master(params, finger_class, rng)
