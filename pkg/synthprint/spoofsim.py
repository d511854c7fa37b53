"""
Material-conditioned spoof appearance.

A procedural stand-in for per-material image translators: each spoof
material has a SpoofRecipe of blur, tone curve, sensor noise, ridge dropout
and tint, applied only inside the fingerprint area. Real translator outputs
can replace these images through ``synthprint ingest``.

Also holds the arithmetic of the cycle-consistent translator training
objective and the live/spoof balance check used for PAD datasets.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .exceptions import ValidationError
from .impression import MASK_THRESHOLD, region_mask
from .synthcore import (
    SPOOF_MATERIALS,
    DatasetManifest,
    GrayImage,
    Mask,
    Material,
    RngStream,
    require_pipeline_image,
    to_gray,
)

logger = logging.getLogger(__name__)

MAX_DROPOUT = 0.3
DROPOUT_LEVEL = 230.0
DROPOUT_STRENGTH = 0.85
DROPOUT_GRAIN = 3.0

LAMBDA_CYC = 10.0
LAMBDA_ID = 0.5

# Live/spoof image counts per material of the public liveness training data
# the translators were fitted on; used as reference sizes for balanced sets.
LIVDET_TRAINING_SIZES: Dict[Material, int] = {
    Material.BODYDOUBLE: 1095,
    Material.ECOFLEX: 748,
    Material.GELATINE: 1600,
    Material.LATEX: 480,
    Material.WOODGLUE: 480,
    Material.OOMOO: 297,
    Material.PLAYDOH: 2417,
    Material.SILICONE: 1190,
}


@dataclass(frozen=True)
class SpoofRecipe:
    """Texture parameters that make a live impression look like one material."""

    material: Material
    blur_sigma: float = 0.0
    noise_std: float = 0.0
    tone_gamma: float = 1.0
    dropout_rate: float = 0.0
    global_tint: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "material", Material.parse(self.material))
        if not self.material.is_spoof:
            raise ValidationError("Live prints have no spoof recipe")
        values = {
            "blur_sigma": self.blur_sigma,
            "noise_std": self.noise_std,
            "tone_gamma": self.tone_gamma,
            "dropout_rate": self.dropout_rate,
            "global_tint": self.global_tint,
        }
        for name, value in values.items():
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {value}")
        if self.tone_gamma == 0:
            raise ValidationError("tone_gamma must be positive")
        if self.dropout_rate > MAX_DROPOUT:
            raise ValidationError(f"dropout_rate must be <= {MAX_DROPOUT}, got {self.dropout_rate}")

    @property
    def is_identity(self) -> bool:
        return (self.blur_sigma == 0 and self.noise_std == 0 and self.tone_gamma == 1
                and self.dropout_rate == 0 and self.global_tint == 0)


# Defaults chosen for visual plausibility: soft, glossy casts (gelatine,
# wood glue) blur and lighten; doughy casts (Play-Doh, OOMOO) lose ridge
# segments and darken.
RECIPES: Dict[Material, SpoofRecipe] = {
    Material.ECOFLEX: SpoofRecipe(Material.ECOFLEX, 0.8, 6.0, 0.9, 0.05, 10.0),
    Material.PLAYDOH: SpoofRecipe(Material.PLAYDOH, 1.2, 10.0, 0.7, 0.25, 0.0),
    Material.WOODGLUE: SpoofRecipe(Material.WOODGLUE, 1.5, 4.0, 1.2, 0.10, 20.0),
    Material.GELATINE: SpoofRecipe(Material.GELATINE, 1.6, 12.0, 1.0, 0.05, 5.0),
    Material.LATEX: SpoofRecipe(Material.LATEX, 1.0, 5.0, 1.3, 0.12, 15.0),
    Material.OOMOO: SpoofRecipe(Material.OOMOO, 1.3, 8.0, 0.85, 0.18, 8.0),
    Material.SILICONE: SpoofRecipe(Material.SILICONE, 0.6, 7.0, 1.1, 0.08, 12.0),
    Material.BODYDOUBLE: SpoofRecipe(Material.BODYDOUBLE, 0.9, 3.0, 0.95, 0.15, 25.0),
}


def recipe_for(material: Material) -> SpoofRecipe:
    """
    Look up the default recipe for a spoof material.

    Raises:
        ValidationError: For Live or unknown materials
    """
    material = Material.parse(material)
    if not material.is_spoof:
        raise ValidationError("Live is not a spoof material", "Choose one of: " + ", ".join(
            m.value for m in SPOOF_MATERIALS))
    return RECIPES[material]


# ============================================================================
# Appearance transform
# ============================================================================

def apply_recipe(img: GrayImage, recipe: SpoofRecipe, rng: RngStream) -> GrayImage:
    """
    Apply one recipe inside the fingerprint area.

    Steps run in a fixed order: blur, tone curve, additive noise, ridge
    dropout, tint. Pixels outside the area are copied unchanged.
    """
    require_pipeline_image(img)
    area = region_mask(img)
    out = img.copy()
    if recipe.is_identity or not area.any():
        return out

    values = img.astype(np.float64)
    if recipe.blur_sigma > 0:
        values = ndimage.gaussian_filter(values, recipe.blur_sigma)
    if recipe.tone_gamma != 1:
        values = 255.0 * np.power(np.clip(values, 0, 255) / 255.0, recipe.tone_gamma)
    if recipe.noise_std > 0:
        values = values + rng.fork("noise").generator().normal(0.0, recipe.noise_std, img.shape)
    if recipe.dropout_rate > 0:
        values = _dropout(values, img < MASK_THRESHOLD, area, recipe.dropout_rate, rng)
    if recipe.global_tint > 0:
        values = values + recipe.global_tint

    out[area] = to_gray(values[area])
    return out


def _dropout(
    values: NDArray[np.float64],
    ridges: Mask,
    area: Mask,
    rate: float,
    rng: RngStream
) -> NDArray[np.float64]:
    """Fade smooth blotches covering about ``rate`` of the ridge pixels toward the valley level."""
    candidates = ridges & area
    if not candidates.any():
        return values
    grain = ndimage.gaussian_filter(
        rng.fork("dropout").generator().standard_normal(values.shape), DROPOUT_GRAIN
    )
    cut = np.quantile(grain[candidates], 1.0 - rate)
    blotch = (grain >= cut) & area
    faded = values + DROPOUT_STRENGTH * (DROPOUT_LEVEL - values)
    return np.where(blotch, faded, values)


def apply_spoof(img: GrayImage, material: Material, rng: RngStream) -> GrayImage:
    """
    Make a live impression look like a presentation attack of ``material``.

    The result is a pure function of (img, material, rng).

    Raises:
        ValidationError: If ``material`` is Live
    """
    recipe = recipe_for(material)
    logger.debug(f"Applying {recipe.material.value} recipe")
    return apply_recipe(img, recipe, rng)


# ============================================================================
# Translator training objective
# ============================================================================

@dataclass(frozen=True)
class CycleGANObjective:
    """Loss components of a cycle-consistent translator pair."""

    l_gan_ab: float
    l_gan_ba: float
    l_cyc: float
    l_id: float
    lambda_cyc: float = LAMBDA_CYC
    lambda_id: float = LAMBDA_ID

    def __post_init__(self) -> None:
        for name in ("l_gan_ab", "l_gan_ba", "l_cyc", "l_id", "lambda_cyc", "lambda_id"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be a non-negative number, got {value}")


def cyclegan_objective(obj: CycleGANObjective) -> float:
    """Total loss: both adversarial terms plus weighted cycle and identity terms."""
    return obj.l_gan_ab + obj.l_gan_ba + obj.lambda_cyc * obj.l_cyc + obj.lambda_id * obj.l_id


# ============================================================================
# Live/spoof balance
# ============================================================================

@dataclass(frozen=True)
class MaterialBalance:
    """
    Live and spoof counts for one material.

    Without a ``target`` the spoof count must equal the live count. With one,
    the spoof count must equal the target and the live pool must hold at
    least that many images.
    """

    material: Material
    live: int
    spoof: int
    target: Optional[int] = None

    @property
    def expected(self) -> int:
        return self.live if self.target is None else self.target

    @property
    def deficit(self) -> int:
        """Spoof images missing to reach the expected count (negative when spoofs exceed it)."""
        return self.expected - self.spoof

    @property
    def balanced(self) -> bool:
        return self.spoof == self.expected and self.live >= self.expected


@dataclass(frozen=True)
class BalanceReport:
    live: int
    rows: List[MaterialBalance] = field(default_factory=list)

    @property
    def balanced(self) -> bool:
        return all(row.balanced for row in self.rows)

    @property
    def has_targets(self) -> bool:
        return any(row.target is not None for row in self.rows)


def validate_balanced(
    manifest: DatasetManifest,
    reference: Optional[Mapping[Material, int]] = None
) -> BalanceReport:
    """
    Compare every spoof material present in a manifest with its live count.

    Args:
        manifest: Dataset to check
        reference: Optional per-material target sizes, such as
            :data:`LIVDET_TRAINING_SIZES`; materials missing from it fall
            back to the live count
    """
    live = sum(1 for r in manifest if r.material is Material.LIVE)
    rows = []
    for material in manifest.materials():
        if not material.is_spoof:
            continue
        spoof = sum(1 for r in manifest if r.material is material)
        row = MaterialBalance(material, live, spoof, (reference or {}).get(material))
        if not row.balanced:
            logger.warning(f"{material.value}: {spoof} spoof, {live} live, "
                           f"expected {row.expected} (deficit {row.deficit})")
        rows.append(row)
    return BalanceReport(live, rows)
