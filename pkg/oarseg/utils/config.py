"""
Configuration management for oarseg.
"""

import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from oarseg.utils.errors import ConfigurationError

THREADS_ENV = "OARSEG_THREADS"

PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    # Cervical protocol: 320x320 crops, 100 epochs, no flips
    "cervix": {
        "data": {"patch": [320, 320], "flip": False},
        "training": {"epochs": 100, "batch": 16},
        "model": {"scale_preset": "paper", "img_size": 320},
    },
    # Brain protocol: 128x128 crops, 50 epochs, flips on
    "brain": {
        "data": {"patch": [128, 128], "flip": True},
        "training": {"epochs": 50, "batch": 16},
        "model": {"scale_preset": "paper", "img_size": 128},
    },
    "desk": {
        "data": {"patch": [64, 64], "flip": False},
        "training": {"epochs": 5, "batch": 8},
        "model": {"scale_preset": "desk", "img_size": 64},
    },
}


class Config:
    """Configuration manager for oarseg."""

    def __init__(self, config_path: Optional[str] = None, preset: Optional[str] = None):
        """Initialize configuration manager.

        Args:
            config_path: Path to a JSON configuration file. If None, defaults only.
            preset: Optional preset name applied over the defaults
        """
        load_dotenv()
        self.config_path = config_path
        self.config: Dict[str, Any] = self._load_default_config()
        if preset:
            self.apply_preset(preset)
        self.load()

    def _load_default_config(self) -> Dict[str, Any]:
        """Load default configuration.

        Returns:
            Dict containing default configuration values.
        """
        return {
            "data": {
                "patch": [320, 320],
                "fg_fraction": 1.0 / 3.0,
                "rotate": True,
                "scale": True,
                "flip": False,
                "rotation_degrees": 15.0,
                "scale_range": [0.85, 1.15],
                "transform_probability": 0.5,
                "folds": 5,
            },
            "training": {
                "lr": 3e-4,
                "weight_decay": 0.05,
                "batch": 16,
                "epochs": 100,
                "patience": 3,
                "lr_factor": 0.5,
                "lr_min": 1e-5,
                "loss_weights": [1.0, 1.0],
                "seed": 0,
                "iterations_per_epoch": None,
            },
            "inference": {
                "overlap": 0.5,
                "batch": 4,
            },
            "model": {
                "scale_preset": "paper",
                "img_size": 320,
                "performer_features": 256,
                "window": 4,
                "se_reduction": 8,
            },
            "logging": {
                "level": "INFO",
                "directory": None,
            },
            "runtime": {
                "threads": None,
                "deterministic": False,
            },
        }

    def apply_preset(self, name: str) -> None:
        """Merge a named preset over the current values.

        Args:
            name: One of ``cervix``, ``brain``, ``desk``

        Raises:
            ConfigurationError: If the preset is unknown
        """
        if name not in PRESETS:
            raise ConfigurationError(f"Unknown preset: {name}", "CONF_003")
        self.update(copy.deepcopy(PRESETS[name]))
        self.config.setdefault("meta", {})["preset"] = name

    def load(self) -> None:
        """Load configuration overrides from file, if one was given.

        Raises:
            ConfigurationError: If the file exists but is not valid JSON
        """
        if not self.config_path:
            return
        if not os.path.exists(self.config_path):
            raise ConfigurationError(f"Config file not found: {self.config_path}", "CONF_001")
        try:
            with open(self.config_path, "r") as f:
                loaded_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid config file {self.config_path}: {e}", "CONF_001")

        # Flat dotted keys ("training.lr") are folded into their sections
        for key in [k for k in loaded_config if "." in k]:
            section, subkey = key.split(".", 1)
            loaded_config.setdefault(section, {})[subkey] = loaded_config.pop(key)
        self.update(loaded_config)

    def save(self, path: Optional[str] = None) -> None:
        """Save configuration to file.

        Args:
            path: Destination; defaults to the path the config was loaded from
        """
        target = path or self.config_path
        if not target:
            raise ConfigurationError("No path to save configuration to", "CONF_002")
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w") as f:
            json.dump(self.config, f, indent=4, sort_keys=True)

    def get(self, section: str, key: str, default: Any = None) -> Any:
        """Get configuration value.

        Args:
            section: Configuration section
            key: Configuration key
            default: Default value if key not found

        Returns:
            Configuration value
        """
        return self.config.get(section, {}).get(key, default)

    def set(self, section: str, key: str, value: Any) -> None:
        """Set configuration value.

        Args:
            section: Configuration section
            key: Configuration key
            value: Configuration value
        """
        self.config.setdefault(section, {})[key] = value

    def update(self, config: Dict[str, Any]) -> None:
        """Update configuration with new values, merging section by section.

        Args:
            config: New configuration values
        """
        for section, values in config.items():
            if isinstance(values, dict):
                self.config.setdefault(section, {}).update(values)
            else:
                self.config[section] = values

    def section(self, section: str) -> Dict[str, Any]:
        """Return a copy of one section."""
        return dict(self.config.get(section, {}))

    def as_dict(self) -> Dict[str, Any]:
        """Return the full resolved configuration."""
        return copy.deepcopy(self.config)

    def threads(self) -> int:
        """Worker count: configured threads, capped by ``OARSEG_THREADS``."""
        configured = self.get("runtime", "threads")
        env = os.environ.get(THREADS_ENV)
        cap = None
        if env:
            try:
                cap = int(env)
            except ValueError:
                raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {env!r}", "CONF_003")
        if configured is None:
            threads = cap or 1
        else:
            threads = min(int(configured), cap) if cap else int(configured)
        return max(1, threads)
