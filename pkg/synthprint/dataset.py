"""
Dataset orchestration behind the command line.

Generation of conditioned datasets, ingestion of externally produced
images, PAD train/test export, template extraction and the end-to-end
evaluation run.
"""

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from PIL import Image, ImageOps, UnidentifiedImageError

from . import evalharness
from .exceptions import ImageError, ValidationError
from .impression import generate_impression
from .masterprint import generate_master
from .matcher import DEFAULT_SETTINGS, MatcherSettings
from .minutiae import (
    ImageMetrics,
    MinutiaSet,
    QualityReport,
    aggregate_metrics,
    analyze_image,
    write_quality_csv,
)
from .spoofsim import apply_spoof
from .synthcore import (
    IMAGE_SIZE,
    WHITE,
    DatasetManifest,
    FingerClass,
    ManifestRecord,
    Material,
    RngStream,
    derive_rng,
    load_image,
    missing_paths,
    read_manifest,
    save_image,
    write_manifest,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")
MISSING_TOLERANCE = 0.01


# ============================================================================
# Generation
# ============================================================================

@dataclass(frozen=True)
class GenerateSpec:
    """What to generate: classes x subjects x impressions of one material."""

    classes: Tuple[FingerClass, ...]
    subjects_per_class: int
    impressions: int
    material: Material
    master_seed: int
    out_dir: Path

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(FingerClass.parse(c) for c in self.classes))
        object.__setattr__(self, "material", Material.parse(self.material))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if not self.classes:
            raise ValidationError("At least one finger class is required")
        if len(set(self.classes)) != len(self.classes):
            raise ValidationError("Finger classes must not repeat")
        if self.subjects_per_class < 1 or self.impressions < 1:
            raise ValidationError("Subject and impression counts must be >= 1")

    @property
    def total(self) -> int:
        return len(self.classes) * self.subjects_per_class * self.impressions


def image_path(material: Material, finger_class: FingerClass, subject: int, impression: int) -> str:
    """Relative path of one image: <material>/<class>/<subject>_<impression>.png."""
    return f"{material.value}/{int(finger_class)}/{subject}_{impression}.png"


def _generate_finger(
    task: Tuple[int, FingerClass, int, int, Tuple[Material, ...], str]
) -> List[ManifestRecord]:
    """Master plus impressions for one (subject, class); a pure function of the task."""
    seed, finger_class, subject, impressions, materials, out_dir = task
    master = generate_master(finger_class, derive_rng(seed, subject, finger_class, 0))
    records = []
    for impression in range(1, impressions + 1):
        rng = derive_rng(seed, subject, finger_class, impression)
        live = generate_impression(master.image, rng)
        for material in materials:
            if material.is_spoof:
                img = apply_spoof(live, material, rng.fork(f"spoof/{material.value}"))
            else:
                img = live
            rel = image_path(material, finger_class, subject, impression)
            save_image(img, Path(out_dir) / rel)
            records.append(ManifestRecord(rel, subject, finger_class, impression, material))
    return records


def generate_dataset(spec: GenerateSpec, workers: int = 1, with_live: bool = False) -> DatasetManifest:
    """
    Generate images and write ``manifest.jsonl`` into ``spec.out_dir``.

    Every image depends only on (seed, subject, class, impression), so the
    output is byte-identical for any worker count. Subjects are numbered
    from 1 and shared across classes. For a spoof material, each image is
    the spoofed version of the live impression with the same numbers;
    ``with_live`` also writes those live impressions.

    Args:
        spec: What to generate
        workers: Worker processes
        with_live: Also keep the live source of every spoof image

    Returns:
        The written manifest
    """
    materials: Tuple[Material, ...] = (spec.material,)
    if with_live and spec.material.is_spoof:
        materials = (Material.LIVE, spec.material)

    tasks = [(spec.master_seed, c, s, spec.impressions, materials, str(spec.out_dir))
             for c in spec.classes for s in range(1, spec.subjects_per_class + 1)]
    try:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"Cannot create output directory {spec.out_dir}", str(e))

    logger.info(f"Generating {spec.total * len(materials)} images into {spec.out_dir}")
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_generate_finger, tasks))
    else:
        chunks = [_generate_finger(task) for task in tasks]

    manifest = DatasetManifest.from_records(r for chunk in chunks for r in chunk).sorted()
    write_manifest(manifest, spec.out_dir / MANIFEST_NAME)
    return manifest


# ============================================================================
# Ingestion and PAD export
# ============================================================================

def _conform(img: Image.Image, pad: bool) -> np.ndarray:
    gray = img.convert("L")
    size = (IMAGE_SIZE, IMAGE_SIZE)
    if pad:
        fitted = ImageOps.pad(gray, size, method=Image.Resampling.LANCZOS, color=WHITE)
    else:
        fitted = ImageOps.fit(gray, size, method=Image.Resampling.LANCZOS)
    return np.asarray(fitted, dtype=np.uint8)


def ingest_images(
    src_dir: Union[str, Path],
    out_dir: Union[str, Path],
    finger_class: FingerClass,
    material: Material,
    subject_start: int = 1,
    impression: int = 1,
    pad: bool = False
) -> DatasetManifest:
    """
    Bring external images (for example real translator outputs) into a dataset.

    Each readable image in ``src_dir`` (sorted by name) becomes one subject,
    center-cropped to a square and resized to 512x512, or white-padded to a
    square when ``pad`` is set. Records are appended to the manifest in
    ``out_dir``; unreadable files are skipped with a warning.
    """
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    finger_class, material = FingerClass.parse(finger_class), Material.parse(material)
    if not src_dir.is_dir():
        raise ValidationError(f"Not a directory: {src_dir}")

    manifest_path = out_dir / MANIFEST_NAME
    existing = list(read_manifest(manifest_path)) if manifest_path.exists() else []

    added = []
    subject = subject_start
    for path in sorted(p for p in src_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        try:
            with Image.open(path) as im:
                img = _conform(im, pad)
        except (UnidentifiedImageError, OSError) as e:
            logger.warning(f"Skipping unreadable image {path.name}: {e}")
            continue
        rel = image_path(material, finger_class, subject, impression)
        save_image(img, out_dir / rel)
        added.append(ManifestRecord(rel, subject, finger_class, impression, material))
        subject += 1

    manifest = DatasetManifest.from_records(existing + added).sorted()
    write_manifest(manifest, manifest_path)
    logger.info(f"Ingested {len(added)} images from {src_dir}")
    return DatasetManifest.from_records(added)


@dataclass(frozen=True)
class PadSplit:
    train: DatasetManifest
    test: DatasetManifest


def _balance(records: List[ManifestRecord], rng: RngStream) -> List[ManifestRecord]:
    live = [r for r in records if not r.material.is_spoof]
    spoof = [r for r in records if r.material.is_spoof]
    keep = min(len(live), len(spoof))
    gen = rng.generator()

    def pick(items: List[ManifestRecord]) -> List[ManifestRecord]:
        if len(items) == keep:
            return items
        chosen = np.sort(gen.choice(len(items), size=keep, replace=False))
        return [items[int(i)] for i in chosen]

    return pick(live) + pick(spoof)


def export_pad_split(
    manifest: DatasetManifest,
    out_dir: Union[str, Path],
    test_fraction: float = 0.2,
    seed: int = 0
) -> PadSplit:
    """
    Split a live/spoof manifest into balanced, subject-disjoint train and test sets.

    Within each split the larger of the live and spoof groups is subsampled to
    the size of the smaller. Writes ``pad_train.jsonl`` and ``pad_test.jsonl``;
    record paths stay relative to the original dataset root.
    """
    if not 0 < test_fraction < 1:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    subjects = manifest.subjects()
    if len(subjects) < 2:
        raise ValidationError("Need at least two subjects for a subject-disjoint split")

    rng = RngStream.from_seed(seed).fork("pad-split")
    order = rng.fork("subjects").generator().permutation(len(subjects))
    n_test = min(len(subjects) - 1, max(1, int(round(test_fraction * len(subjects)))))
    test_subjects = {subjects[int(i)] for i in order[:n_test]}

    split = PadSplit(
        train=DatasetManifest.from_records(_balance(
            [r for r in manifest if r.subject not in test_subjects], rng.fork("train"))).sorted(),
        test=DatasetManifest.from_records(_balance(
            [r for r in manifest if r.subject in test_subjects], rng.fork("test"))).sorted(),
    )
    out_dir = Path(out_dir)
    write_manifest(split.train, out_dir / "pad_train.jsonl")
    write_manifest(split.test, out_dir / "pad_test.jsonl")
    return split


# ============================================================================
# Templates and evaluation
# ============================================================================

@dataclass
class TemplateBatch:
    """Templates and metrics of the readable images of one manifest."""

    manifest: DatasetManifest
    templates: List[MinutiaSet] = field(default_factory=list)
    metrics: List[ImageMetrics] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    def by_path(self) -> Dict[str, MinutiaSet]:
        return {r.path: t for r, t in zip(self.manifest, self.templates)}


def _analyze_path(path: str) -> Optional[Tuple[MinutiaSet, ImageMetrics]]:
    try:
        return analyze_image(load_image(path))
    except ImageError as e:
        logger.warning(f"Skipping {path}: {e.message}")
        return None


def extract_templates(
    manifest: DatasetManifest,
    root: Union[str, Path],
    workers: int = 1
) -> TemplateBatch:
    """
    Extract minutiae and quality metrics for every record.

    Unreadable images are skipped with a warning; the returned batch keeps
    only the readable records, in manifest order.
    """
    paths = [str(Path(root) / r.path) for r in manifest]
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_analyze_path, paths, chunksize=4))
    else:
        results = [_analyze_path(p) for p in paths]

    kept, templates, metrics, skipped = [], [], [], []
    for record, result in zip(manifest, results):
        if result is None:
            skipped.append(record.path)
            continue
        kept.append(record)
        templates.append(result[0])
        metrics.append(result[1])
    return TemplateBatch(DatasetManifest.from_records(kept), templates, metrics, skipped)


def check_missing(manifest: DatasetManifest, root: Union[str, Path], name: str) -> DatasetManifest:
    """
    Warn about every missing image and drop it.

    Raises:
        ValidationError: If more than 1% of the images are missing
    """
    missing = missing_paths(manifest, root)
    for path in missing:
        logger.warning(f"{name}: missing image {path}")
    if len(manifest) and len(missing) / len(manifest) > MISSING_TOLERANCE:
        raise ValidationError(
            f"{name}: {len(missing)} of {len(manifest)} images are missing",
            f"At most {MISSING_TOLERANCE:.0%} may be missing"
        )
    absent = set(missing)
    return DatasetManifest.from_records(r for r in manifest if r.path not in absent)


@dataclass(frozen=True)
class EvaluateOptions:
    thresholds: Tuple[float, ...] = ()
    far_target: Optional[float] = None
    workers: int = 1
    block_size: int = evalharness.DEFAULT_BLOCK_SIZE
    histogram_bins: int = 50
    max_nonmated: Optional[int] = None
    seed: int = 0
    privacy_threshold: Optional[float] = None
    settings: MatcherSettings = DEFAULT_SETTINGS


@dataclass
class DatasetEvaluation:
    name: str
    mated: int
    nonmated: int
    quality: QualityReport
    genuine: np.ndarray
    imposter: np.ndarray
    far_threshold: Optional[evalharness.ThresholdResult] = None


@dataclass
class EvaluationSummary:
    datasets: List[DatasetEvaluation] = field(default_factory=list)
    tar_far_rows: List[evalharness.TarFarRow] = field(default_factory=list)
    uniqueness_tv: Optional[float] = None
    privacy: Optional[evalharness.PrivacyScanResult] = None
    outputs: List[Path] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        data: Dict[str, object] = {
            "datasets": [
                {
                    "name": d.name,
                    "mated_pairs": d.mated,
                    "nonmated_pairs": d.nonmated,
                    "images": d.quality.images,
                    "skipped_images": d.quality.skipped,
                    "far_target_threshold": None if d.far_threshold is None else {
                        "threshold": d.far_threshold.threshold,
                        "far_percent": d.far_threshold.far,
                        "saturated": d.far_threshold.saturated,
                    },
                }
                for d in self.datasets
            ],
            "uniqueness_tv_distance": self.uniqueness_tv,
        }
        if self.privacy is not None:
            data["privacy_scan"] = {
                "pairs_compared": self.privacy.pairs_compared,
                "matches_above_threshold": self.privacy.matches_above_threshold,
                "threshold": self.privacy.threshold,
                "effective_far_percent": self.privacy.effective_far,
                "max_score": self.privacy.max_score,
            }
        return data


def _evaluate_one(
    name: str,
    batch: TemplateBatch,
    options: EvaluateOptions,
    out_dir: Path,
    summary: EvaluationSummary
) -> DatasetEvaluation:
    protocol = evalharness.PairProtocol.build(
        batch.manifest, options.max_nonmated, RngStream.from_seed(options.seed).fork(name)
    )
    logger.info(f"{name}: {len(protocol.mated)} mated, {len(protocol.nonmated)} non-mated pairs")
    ids = [r.path for r in batch.manifest]

    scored = {}
    for kind, pairs in (("mated", protocol.mated), ("nonmated", protocol.nonmated)):
        scores, support = evalharness.score_pairs(
            batch.templates, pairs, options.workers, options.block_size, options.settings
        )
        path = out_dir / f"scores_{name}_{kind}.csv"
        evalharness.write_scores_csv(path, ids, pairs, scores, support)
        summary.outputs.append(path)
        scored[kind] = scores

    quality = aggregate_metrics(batch.metrics, len(batch.skipped))
    path = out_dir / f"quality_{name}.csv"
    write_quality_csv(quality, path)
    summary.outputs.append(path)

    result = DatasetEvaluation(name, len(protocol.mated), len(protocol.nonmated), quality,
                               scored["mated"], scored["nonmated"])
    if options.far_target is not None and result.imposter.size:
        result.far_threshold = evalharness.threshold_for_far(result.imposter, options.far_target)
    return result


def evaluate(
    manifest_a: Union[str, Path],
    out_dir: Union[str, Path],
    options: EvaluateOptions,
    manifest_b: Optional[Union[str, Path]] = None
) -> EvaluationSummary:
    """
    Run the whole evaluation for one or two manifests.

    Writes quality, score, TAR/FAR and histogram files plus ``summary.json``
    into ``out_dir``. With two manifests the second is also evaluated on its
    own, the non-mated distributions are compared, and every cross pair is
    scanned at the privacy threshold (the first dataset's FAR-target
    threshold unless one is given).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = EvaluationSummary()

    batches = []
    for name, manifest_path in (("a", manifest_a), ("b", manifest_b)):
        if manifest_path is None:
            continue
        manifest_path = Path(manifest_path)
        manifest = check_missing(read_manifest(manifest_path), manifest_path.parent, name)
        batch = extract_templates(manifest, manifest_path.parent, options.workers)
        batches.append(batch)
        summary.datasets.append(_evaluate_one(name, batch, options, out_dir, summary))

    datasets = {d.name: (d.genuine, d.imposter) for d in summary.datasets
                if d.genuine.size and d.imposter.size}
    summary.tar_far_rows = evalharness.tar_far_table(datasets, options.thresholds, options.far_target)
    path = out_dir / "tar_far.csv"
    evalharness.write_tar_far_csv(path, summary.tar_far_rows)
    summary.outputs.append(path)

    upper = max([float(np.max(s)) for d in summary.datasets for s in (d.genuine, d.imposter)
                 if s.size] or [1.0])
    distributions = {}
    for d in summary.datasets:
        distributions[f"{d.name}_genuine"] = evalharness.histogram(d.genuine, options.histogram_bins, upper)
        distributions[f"{d.name}_imposter"] = evalharness.histogram(d.imposter, options.histogram_bins, upper)
    path = out_dir / "histograms.csv"
    evalharness.write_histogram_csv(path, distributions)
    summary.outputs.append(path)

    if len(batches) == 2:
        if summary.datasets[0].imposter.size and summary.datasets[1].imposter.size:
            summary.uniqueness_tv = evalharness.uniqueness_compare(
                distributions["a_imposter"], distributions["b_imposter"])
        threshold = options.privacy_threshold
        if threshold is None:
            first = summary.datasets[0].far_threshold
            threshold = first.threshold if first is not None else 100.0
        summary.privacy = evalharness.privacy_scan(
            batches[0].templates, batches[1].templates, threshold,
            options.workers, options.block_size, options.settings
        )

    path = out_dir / "summary.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary.to_dict(), f, indent=2)
    summary.outputs.append(path)
    return summary


def read_pair_list(path: Union[str, Path]) -> List[Tuple[str, str]]:
    """Read (id_a, id_b) rows from a CSV with a header; ids are manifest paths."""
    pairs = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ValidationError(f"Pair list {path} needs an id_a,id_b header")
        for row in reader:
            if len(row) >= 2 and row[0].strip():
                pairs.append((row[0].strip(), row[1].strip()))
    return pairs


def templates_for_paths(
    manifest: DatasetManifest,
    root: Union[str, Path],
    wanted: Iterable[str],
    workers: int = 1
) -> Dict[str, MinutiaSet]:
    """Extract templates for the records whose paths appear in ``wanted``."""
    needed = set(wanted)
    unknown = needed - {r.path for r in manifest}
    if unknown:
        raise ValidationError(f"{len(unknown)} pair ids are not in the manifest",
                              ", ".join(sorted(unknown)[:5]))
    subset = DatasetManifest.from_records(r for r in manifest if r.path in needed)
    return extract_templates(subset, root, workers).by_path()


def parse_class_list(value: str) -> Tuple[FingerClass, ...]:
    """
    Parse ``1-10``, ``1,3,5`` or ``2-4,7`` into finger classes.

    Raises:
        ValidationError: On malformed input or classes outside 1-10
    """
    classes: List[FingerClass] = []
    for part in (p.strip() for p in value.split(",")):
        if not part:
            continue
        if "-" in part:
            low, _, high = part.partition("-")
            try:
                start, stop = int(low), int(high)
            except ValueError:
                raise ValidationError(f"Invalid class range: {part!r}")
            if start > stop:
                raise ValidationError(f"Invalid class range: {part!r}")
            classes.extend(FingerClass.parse(c) for c in range(start, stop + 1))
        else:
            classes.append(FingerClass.parse(part))
    if not classes:
        raise ValidationError("Class list is empty")
    return tuple(dict.fromkeys(classes))
