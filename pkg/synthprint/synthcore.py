"""
Shared domain types for synthprint.

Finger classes, materials, grayscale raster helpers, deterministic random
streams and the line-delimited JSON dataset manifest used by every other
module.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from PIL import Image, UnidentifiedImageError

from .exceptions import ImageError, ManifestError, ValidationError

logger = logging.getLogger(__name__)

IMAGE_SIZE = 512
WHITE = 255

MANIFEST_FIELDS = ("path", "subject", "class", "impression", "material")

GrayImage = NDArray[np.uint8]
Mask = NDArray[np.bool_]


# ============================================================================
# Finger classes and materials
# ============================================================================

class FingerClass(IntEnum):
    """The ten finger identities a print can be conditioned on."""

    LEFT_INDEX = 1
    LEFT_MIDDLE = 2
    LEFT_RING = 3
    LEFT_LITTLE = 4
    LEFT_THUMB = 5
    RIGHT_INDEX = 6
    RIGHT_MIDDLE = 7
    RIGHT_RING = 8
    RIGHT_LITTLE = 9
    RIGHT_THUMB = 10

    @property
    def hand(self) -> str:
        return "Left" if self.value <= 5 else "Right"

    @property
    def finger(self) -> str:
        return self.name.split("_", 1)[1].capitalize()

    @property
    def label(self) -> str:
        """Hyphenated display name, e.g. ``Left-Index``."""
        return f"{self.hand}-{self.finger}"

    @classmethod
    def parse(cls, value: Union[int, str, "FingerClass"]) -> "FingerClass":
        """
        Resolve a class index (1-10) or a label such as ``Right-Thumb``.

        Raises:
            ValidationError: If the value names no finger class
        """
        if isinstance(value, FingerClass):
            return value
        if isinstance(value, str) and not value.strip().isdigit():
            wanted = value.strip().lower().replace("_", "-").replace(" ", "-")
            for member in cls:
                if member.label.lower() == wanted:
                    return member
            raise ValidationError(f"Unknown finger class: {value!r}")
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ValidationError(
                f"Finger class out of range: {value!r}",
                "Finger classes are numbered 1 (Left-Index) to 10 (Right-Thumb)."
            )


class Material(str, Enum):
    """Presentation material of a print; everything but LIVE is a spoof."""

    LIVE = "Live"
    ECOFLEX = "EcoFlex"
    PLAYDOH = "PlayDoh"
    WOODGLUE = "WoodGlue"
    GELATINE = "Gelatine"
    LATEX = "Latex"
    OOMOO = "OOMOO"
    SILICONE = "Silicone"
    BODYDOUBLE = "BodyDouble"

    @property
    def is_spoof(self) -> bool:
        return self is not Material.LIVE

    @classmethod
    def parse(cls, value: Union[str, "Material"]) -> "Material":
        """
        Resolve a canonical material string or a common spelling of it.

        ``Play-Doh``, ``wood glue``, ``Body Double`` and ``Ecoflex`` all resolve.

        Raises:
            ValidationError: If the value names no material
        """
        if isinstance(value, Material):
            return value
        wanted = "".join(ch for ch in str(value).lower() if ch.isalnum())
        for member in cls:
            if member.value.lower() == wanted:
                return member
        if wanted == "gelatin":
            return cls.GELATINE
        raise ValidationError(
            f"Unknown material: {value!r}",
            "Expected one of: " + ", ".join(m.value for m in cls)
        )


SPOOF_MATERIALS: Tuple[Material, ...] = tuple(m for m in Material if m.is_spoof)


# ============================================================================
# Raster helpers
# ============================================================================

def blank_image(value: int = WHITE, size: int = IMAGE_SIZE) -> GrayImage:
    """Create a uniform square image."""
    return np.full((size, size), value, dtype=np.uint8)


def to_gray(values: NDArray[Any]) -> GrayImage:
    """Round, clamp to [0, 255] and convert a float raster to uint8."""
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def require_pipeline_image(img: NDArray[Any], name: str = "image") -> None:
    """
    Check that an image is a 512x512 single-channel 8-bit raster.

    Raises:
        ValidationError: On wrong dtype or geometry
    """
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValidationError(f"{name} must be a single-channel uint8 raster")
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValidationError(
            f"{name} must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {img.shape[1]}x{img.shape[0]}"
        )


def load_image(path: Union[str, Path]) -> GrayImage:
    """
    Load an image file as 8-bit grayscale.

    Raises:
        ImageError: If the file is missing or not a readable image
    """
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except FileNotFoundError:
        raise ImageError(f"Image not found: {path}", path=path)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageError(f"Cannot read image: {path}", path=path, details=str(e))


def save_image(img: GrayImage, path: Union[str, Path]) -> None:
    """Write an 8-bit grayscale PNG, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8)).save(path, format="PNG")


# ============================================================================
# Deterministic random streams
# ============================================================================

def _hash_key(*parts: Any) -> int:
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:16], "little")


@dataclass(frozen=True)
class RngStream:
    """
    Counter-based random stream keyed by a 128-bit hash.

    The stream itself is immutable: every call to :meth:`generator` starts a
    fresh Philox generator at counter zero, so a stream can be shared between
    threads or shipped to worker processes and always yields the same draws.
    """

    key: int

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key))

    def fork(self, label: str) -> "RngStream":
        """Derive an independent child stream for a named purpose."""
        return RngStream(_hash_key(self.key, label))

    @classmethod
    def from_seed(cls, seed: int) -> "RngStream":
        return cls(_hash_key("seed", int(seed)))


def derive_rng(
    master_seed: int,
    subject: int,
    finger_class: Union[int, FingerClass],
    impression: int
) -> RngStream:
    """
    Derive the stream for one (subject, class, impression) tuple.

    The result depends on nothing but the four inputs, which is what makes
    generation with any worker count byte-identical to a serial run.
    Impression 0 is used for the master print itself.
    """
    return RngStream(_hash_key("synthprint", int(master_seed), int(subject),
                               int(finger_class), int(impression)))


# ============================================================================
# Dataset manifest
# ============================================================================

RecordKey = Tuple[int, FingerClass, int, Material]


@dataclass(frozen=True)
class ManifestRecord:
    """One labelled image of a dataset."""

    path: str
    subject: int
    finger_class: FingerClass
    impression: int
    material: Material = Material.LIVE

    def __post_init__(self) -> None:
        if not self.path:
            raise ValidationError("Manifest record path is empty")
        if isinstance(self.subject, bool) or int(self.subject) < 0:
            raise ValidationError(f"Subject id must be >= 0, got {self.subject!r}")
        if int(self.impression) < 1:
            raise ValidationError(f"Impression index must be >= 1, got {self.impression!r}")
        object.__setattr__(self, "finger_class", FingerClass.parse(self.finger_class))
        object.__setattr__(self, "material", Material.parse(self.material))

    @property
    def key(self) -> RecordKey:
        return (self.subject, self.finger_class, self.impression, self.material)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "path": self.path,
            "subject": self.subject,
            "class": int(self.finger_class),
            "impression": self.impression,
            "material": self.material.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifestRecord":
        missing = [name for name in MANIFEST_FIELDS if name not in data]
        if missing:
            raise ValidationError(f"Missing fields: {', '.join(missing)}")
        extra = sorted(set(data) - set(MANIFEST_FIELDS))
        if extra:
            raise ValidationError(f"Unexpected fields: {', '.join(extra)}")
        for name in ("subject", "class", "impression"):
            if isinstance(data[name], bool) or not isinstance(data[name], int):
                raise ValidationError(f"Field '{name}' must be an integer")
        return cls(
            path=str(data["path"]),
            subject=data["subject"],
            finger_class=FingerClass.parse(data["class"]),
            impression=data["impression"],
            material=Material.parse(data["material"]),
        )


@dataclass(frozen=True)
class DatasetManifest:
    """An ordered, duplicate-free collection of manifest records."""

    records: Tuple[ManifestRecord, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: Dict[RecordKey, int] = {}
        for index, record in enumerate(self.records):
            if record.key in seen:
                raise ManifestError(
                    f"Duplicate record at index {index}",
                    record_index=index,
                    details=f"Same (subject, class, impression, material) as record {seen[record.key]}"
                )
            seen[record.key] = index

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> ManifestRecord:
        return self.records[index]

    @classmethod
    def from_records(cls, records: Iterable[ManifestRecord]) -> "DatasetManifest":
        return cls(tuple(records))

    def filter(
        self,
        material: Optional[Material] = None,
        finger_class: Optional[FingerClass] = None
    ) -> "DatasetManifest":
        """Return the records matching the given material and/or class."""
        return DatasetManifest(tuple(
            r for r in self.records
            if (material is None or r.material is material)
            and (finger_class is None or r.finger_class is finger_class)
        ))

    def materials(self) -> List[Material]:
        return sorted({r.material for r in self.records}, key=lambda m: list(Material).index(m))

    def subjects(self) -> List[int]:
        return sorted({r.subject for r in self.records})

    def sorted(self) -> "DatasetManifest":
        """Records in canonical (material, class, subject, impression) order."""
        return DatasetManifest(tuple(sorted(
            self.records,
            key=lambda r: (list(Material).index(r.material), int(r.finger_class),
                           r.subject, r.impression)
        )))


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    """
    Write a manifest as UTF-8 JSON lines with the fixed field set.

    Args:
        manifest: Manifest to write
        path: Destination file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in manifest:
            f.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
    logger.debug(f"Wrote {len(manifest)} manifest records to {path}")


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    """
    Read a JSON-lines manifest.

    Raises:
        ManifestError: On unreadable files, malformed lines or duplicate records;
            ``record_index`` names the offending record
    """
    records: List[ManifestRecord] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise ManifestError(f"Cannot read manifest {path}", details=str(e))

    for line in lines:
        if not line.strip():
            continue
        index = len(records)
        try:
            data = json.loads(line)
            if not isinstance(data, dict):
                raise ValidationError("Record is not a JSON object")
            records.append(ManifestRecord.from_dict(data))
        except json.JSONDecodeError as e:
            raise ManifestError(f"Malformed manifest record {index}", record_index=index,
                                details=str(e))
        except ValidationError as e:
            raise ManifestError(f"Invalid manifest record {index}: {e.message}",
                                record_index=index, details=e.details)
    return DatasetManifest(tuple(records))


def missing_paths(manifest: DatasetManifest, root: Union[str, Path]) -> List[str]:
    """Return the record paths that do not exist below ``root``."""
    root = Path(root)
    return [r.path for r in manifest if not (root / r.path).is_file()]
