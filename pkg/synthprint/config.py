"""
Configuration management for synthprint.

Evaluation defaults (worker count, scan block size, histogram bins, FAR
target, matcher tolerances) persisted as JSON. There are deliberately no
environment-variable overrides: every run is reproducible from its command
line and this file.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# Default configuration file locations
CONFIG_DIR_NAME = ".synthprint"
CONFIG_FILE_NAME = "config.json"

# Default values
DEFAULT_WORKERS = 1
DEFAULT_BLOCK_SIZE = 512
DEFAULT_HISTOGRAM_BINS = 50
DEFAULT_FAR_TARGET = 0.01


@dataclass
class SynthprintConfig:
    """synthprint configuration."""

    workers: int = DEFAULT_WORKERS
    block_size: int = DEFAULT_BLOCK_SIZE  # pairs per scoring block
    histogram_bins: int = DEFAULT_HISTOGRAM_BINS
    far_target: float = DEFAULT_FAR_TARGET  # percent
    thresholds: List[float] = field(default_factory=list)  # extra fixed TAR/FAR thresholds
    max_rotation_deg: float = 60.0
    pair_distance_px: float = 12.0
    pair_angle_deg: float = 20.0
    output_format: str = "table"

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthprintConfig":
        """Create configuration from dictionary, ignoring unknown keys."""
        valid_fields = {f.name for f in fields(cls)}
        filtered_data = {k: v for k, v in data.items() if k in valid_fields}
        try:
            config = cls(**filtered_data)
        except TypeError as e:
            raise ConfigurationError("Invalid configuration values", str(e))
        config.validate()
        return config

    def validate(self) -> None:
        """
        Check value ranges.

        Raises:
            ConfigurationError: On a value no command could use
        """
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if self.block_size < 1:
            raise ConfigurationError(f"block_size must be >= 1, got {self.block_size}")
        if self.histogram_bins < 1:
            raise ConfigurationError(f"histogram_bins must be >= 1, got {self.histogram_bins}")
        if not 0 < self.far_target <= 100:
            raise ConfigurationError(f"far_target must be in (0, 100], got {self.far_target}")
        if self.output_format not in ("table", "json", "csv"):
            raise ConfigurationError(f"Unknown output format: {self.output_format}")

    def matcher_values(self) -> Dict[str, float]:
        return {
            "max_rotation_deg": self.max_rotation_deg,
            "pair_distance_px": self.pair_distance_px,
            "pair_angle_deg": self.pair_angle_deg,
        }


class ConfigManager:
    """Manages synthprint configuration."""

    def __init__(self, config_dir: Optional[Path] = None):
        """
        Initialize configuration manager.

        Args:
            config_dir: Custom configuration directory. Defaults to ~/.synthprint
        """
        if config_dir:
            self.config_dir = Path(config_dir)
        else:
            self.config_dir = Path.home() / CONFIG_DIR_NAME

        self.config_file = self.config_dir / CONFIG_FILE_NAME
        self._config: Optional[SynthprintConfig] = None

    def _ensure_config_dir(self) -> None:
        """Ensure configuration directory exists."""
        self.config_dir.mkdir(parents=True, exist_ok=True)

    def _load_from_file(self) -> Dict[str, Any]:
        """Load configuration from file; a broken file falls back to defaults."""
        config_data: Dict[str, Any] = {}
        if self.config_file.exists():
            try:
                with open(self.config_file, 'r', encoding='utf-8') as f:
                    loaded = json.load(f)
                if isinstance(loaded, dict):
                    config_data.update(loaded)
                else:
                    logger.warning("Invalid config file: top level is not an object")
            except json.JSONDecodeError as e:
                logger.warning(f"Invalid config file: {e}")
            except OSError as e:
                logger.warning(f"Cannot read config file: {e}")
        return config_data

    def load(self) -> SynthprintConfig:
        """
        Load configuration from the config file over the defaults.

        Returns:
            SynthprintConfig: The loaded configuration
        """
        try:
            self._config = SynthprintConfig.from_dict(self._load_from_file())
        except ConfigurationError as e:
            logger.warning(f"Ignoring config file: {e.message}")
            self._config = SynthprintConfig()
        return self._config

    def save(self, config: SynthprintConfig) -> None:
        """
        Save configuration to file.

        Args:
            config: Configuration to save
        """
        config.validate()
        try:
            self._ensure_config_dir()
            with open(self.config_file, 'w', encoding='utf-8') as f:
                json.dump(config.to_dict(), f, indent=2)
            logger.debug(f"Saved config to {self.config_file}")
        except OSError as e:
            raise ConfigurationError(f"Cannot save config file: {e}")
        self._config = config

    def get(self) -> SynthprintConfig:
        """
        Get current configuration.

        Returns:
            SynthprintConfig: Current configuration (loads if not already loaded)
        """
        if self._config is None:
            self.load()
        return self._config  # type: ignore

    def update(self, **kwargs: Any) -> SynthprintConfig:
        """
        Update specific configuration values.

        Args:
            **kwargs: Configuration values to update

        Returns:
            SynthprintConfig: Updated configuration
        """
        config_dict = self.get().to_dict()
        config_dict.update(kwargs)
        new_config = SynthprintConfig.from_dict(config_dict)
        self.save(new_config)
        return new_config

    def clear(self) -> None:
        """Clear all configuration."""
        if self.config_file.exists():
            self.config_file.unlink()
        self._config = None

    def get_config_path(self) -> Path:
        """Get the configuration directory path."""
        return self.config_dir


# Global config manager instance
_config_manager: Optional[ConfigManager] = None


def get_config_manager(config_dir: Optional[Path] = None) -> ConfigManager:
    """
    Get the global configuration manager.

    Args:
        config_dir: Optional custom configuration directory

    Returns:
        ConfigManager: The configuration manager instance
    """
    global _config_manager
    if _config_manager is None or config_dir is not None:
        _config_manager = ConfigManager(config_dir)
    return _config_manager
