"""
Shared test fixtures and configuration for synthprint tests.
"""

from pathlib import Path
from typing import List
from unittest.mock import MagicMock

import numpy as np
import pytest
from click.testing import CliRunner

from synthprint.config import ConfigManager, SynthprintConfig
from synthprint.synthcore import (
    DatasetManifest,
    FingerClass,
    ManifestRecord,
    Material,
    save_image,
    write_manifest,
)


# ============================================================================
# CLI Runner Fixtures
# ============================================================================

@pytest.fixture
def runner():
    """Create CLI test runner."""
    return CliRunner()


@pytest.fixture
def isolated_runner():
    """Create CLI test runner with isolated filesystem."""
    runner = CliRunner()
    with runner.isolated_filesystem():
        yield runner


# ============================================================================
# Configuration Fixtures
# ============================================================================

@pytest.fixture
def temp_config_dir(tmp_path):
    """Create temporary configuration directory."""
    config_dir = tmp_path / ".synthprint"
    config_dir.mkdir()
    return config_dir


@pytest.fixture
def test_config():
    """Create test configuration object."""
    return SynthprintConfig(workers=1, far_target=0.1, thresholds=[20.0, 40.0])


@pytest.fixture
def config_manager(temp_config_dir, test_config):
    """Create ConfigManager with test configuration."""
    manager = ConfigManager(temp_config_dir)
    manager.save(test_config)
    return manager


@pytest.fixture
def mock_config_manager(test_config):
    """Mock config manager returning the test configuration."""
    manager = MagicMock(spec=ConfigManager)
    manager.get.return_value = test_config
    manager.load.return_value = test_config
    return manager


# ============================================================================
# Image Fixtures
# ============================================================================

def stripes(period: float = 9.0, angle_deg: float = 0.0, size: int = 512) -> np.ndarray:
    """Sinusoidal ridge pattern at 30/230 gray levels."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    t = np.deg2rad(angle_deg)
    phase = 2 * np.pi * (xx * np.cos(t) + yy * np.sin(t)) / period
    return np.rint(130 + 100 * np.cos(phase)).astype(np.uint8)


def ellipse_mask(cx: float = 256, cy: float = 256, rx: float = 150, ry: float = 200,
                 size: int = 512) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def blob_print(period: float = 9.0, angle_deg: float = 30.0) -> np.ndarray:
    """Striped ellipse on a white background."""
    img = np.full((512, 512), 255, dtype=np.uint8)
    mask = ellipse_mask()
    img[mask] = stripes(period, angle_deg)[mask]
    return img


@pytest.fixture
def stripe_image():
    return stripes()


@pytest.fixture
def blob_image():
    return blob_print()


# ============================================================================
# Manifest Fixtures
# ============================================================================

def make_records(subjects: int, impressions: int, material: Material = Material.LIVE,
                 finger_class: FingerClass = FingerClass.LEFT_INDEX) -> List[ManifestRecord]:
    return [
        ManifestRecord(f"{material.value}/{int(finger_class)}/{s}_{i}.png",
                       s, finger_class, i, material)
        for s in range(1, subjects + 1)
        for i in range(1, impressions + 1)
    ]


@pytest.fixture
def small_manifest():
    """Three subjects with two impressions each."""
    return DatasetManifest.from_records(make_records(3, 2))


@pytest.fixture
def dataset_dir(tmp_path) -> Path:
    """A tiny on-disk dataset of striped blobs with a manifest."""
    root = tmp_path / "data"
    records = make_records(2, 2)
    for n, record in enumerate(records):
        save_image(blob_print(period=8.0 + n * 0.5, angle_deg=20.0 * n), root / record.path)
    write_manifest(DatasetManifest.from_records(records), root / "manifest.jsonl")
    return root
