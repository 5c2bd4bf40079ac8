"""
Configuration management for NRSR.
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv

from .exceptions import ConfigError
from .models import (
    BundleConfig,
    CameraIntrinsics,
    PipelineConfig,
    RigidityParams,
    SceneConfig,
    SpectralConfig,
)

logger = logging.getLogger(__name__)


def resolve_workers(value: Union[int, str, None]) -> int:
    """Turn ``"auto"``/None/int into a positive worker count."""
    if value is None or value == "auto":
        return os.cpu_count() or 1
    try:
        workers = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"pipeline.workers must be a positive integer or 'auto', got {value!r}")
    if workers < 1:
        raise ConfigError(f"pipeline.workers must be >= 1, got {workers}")
    return workers


class Config:
    """Configuration handler for NRSR."""

    DEFAULT_CONFIG: Dict[str, Any] = {
        "rigidity": {
            "sigma_f": 1.0,
            "sigma_h": 2.0,
            "tau_f": None,  # null -> derived from r_f and M
            "tau_h": None,
            "r_f": None,  # null -> 0.75 * sigma_f
            "r_h": None,
            "sampling_mode": "randomized",  # randomized or exhaustive
            "n_samples_f": 200,
            "n_samples_h": 200,
            "aggregation": "quantile",  # quantile or strict_min
            "quantile": 0.5,  # median sample; lower values reject noisy rigid pairs
            "exhaustive_cap": 10**7,
            "attempt_factor": 10,
            "symmetric_distance": False,
            "max_distance": 1e6,
        },
        "spectral": {
            "k": 2,
            "n_eigenvectors": None,
            "eigen_tolerance": 1e-8,
            "kmeans_restarts": 10,
            "kmeans_max_iters": 300,
            "log2_embedding": False,
        },
        "bundle": {
            "max_iterations": 100,
            "convergence_tol": 1e-10,
            "step_tol": 1e-12,
            "gradient_tol": 1e-10,
            "huber_delta": 2.0,
            "loss": "huber",  # huber or linear
        },
        "reconstruction": {
            "landmark_pair": "auto",  # auto or [a, b]
            "max_seed_retries": 3,
        },
        "evaluation": {
            "success_noise_factor": 5.0,
            "success_offset_px": 1.0,
            "hist_bins": 20,
            "hist_max_px": None,  # null -> max residual
            "sweep_sigmas": [0.0, 0.5, 1.0, 2.0],
            "sweep_seeds": 3,
        },
        "scene": {
            "n_frames": 24,
            "n_points": 20,
            "schedule": "periodic",
            "period": 4,
            "states": None,
            "n_folds": None,
            "shape_model": "random-blob",
            "n_segments": 4,
            "deformation": 0.35,
            "camera_path": "random-sphere",
            "radius_range": [4.0, 6.0],
            "n_rig": 8,
            "orbit_elevation_deg": 20.0,
            "intrinsics": {"fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0, "skew": 0.0},
            "image_size": [640, 480],
            "noise_sigma": 0.0,
            "min_state_separation": 0.1,
            "min_parallax_deg": 15.0,
            "max_retries": 200,
        },
        "pipeline": {
            "seed": 0,
            "workers": 1,  # integer or auto
            "log_level": "INFO",
            "progress": True,
        },
        "paths": {
            "tracks": None,
            "intrinsics": None,
            "output_dir": "results",
            "truth": None,
        },
    }

    def __init__(self, config_path: Optional[str] = None, load_dotenv_file: bool = True):
        """
        Initialize configuration.

        Args:
            config_path: Path to a YAML config file. If None, uses defaults.
            load_dotenv_file: If True, loads a .env file from the usual places.

        Raises:
            ConfigError: the file exists but is not a YAML mapping.
        """
        if load_dotenv_file:
            self._load_dotenv_file()

        self.config = copy.deepcopy(self.DEFAULT_CONFIG)

        if config_path:
            if not os.path.exists(config_path):
                raise ConfigError(f"config file not found: {config_path}")
            self.load_from_file(config_path)

        self._load_from_env()

    def load_from_file(self, config_path: str):
        """Load configuration from YAML file."""
        with open(config_path, "r") as f:
            try:
                user_config = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError(f"invalid YAML in {config_path}: {e}") from e
        if user_config is None:
            return
        if not isinstance(user_config, dict):
            raise ConfigError(f"{config_path} must contain a mapping at top level")
        self.merge(user_config)

    def merge(self, user_config: Dict[str, Any]):
        """Deep-merge ``user_config`` over the current values."""
        _deep_merge(self.config, user_config)

    def _load_dotenv_file(self):
        """
        Load .env file.

        Searches for .env file in:
        1. Current working directory
        2. Directory containing this file (nrsr package)
        3. Parent directory of nrsr package (project root)
        """
        package_dir = Path(__file__).parent
        for candidate in (Path.cwd() / ".env", package_dir / ".env", package_dir.parent / ".env"):
            if candidate.exists():
                load_dotenv(candidate)
                return

    def _load_from_env(self):
        """Load overrides from NRSR_* environment variables."""
        seed = os.getenv("NRSR_SEED")
        if seed:
            try:
                self.config["pipeline"]["seed"] = int(seed)
            except ValueError:
                raise ConfigError(f"NRSR_SEED must be an integer, got {seed!r}")
        workers = os.getenv("NRSR_WORKERS")
        if workers:
            self.config["pipeline"]["workers"] = (
                workers if workers == "auto" else resolve_workers(workers)
            )
        log_level = os.getenv("NRSR_LOG_LEVEL")
        if log_level:
            self.config["pipeline"]["log_level"] = log_level.upper()

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value by dot-separated key.

        Example: config.get("rigidity.sigma_f")
        """
        value: Any = self.config
        for k in key.split("."):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set(self, key: str, value: Any):
        """Set a value by dot-separated key, creating sections as needed."""
        keys = key.split(".")
        node = self.config
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value

    def save(self, config_path: str):
        """Save current configuration to file."""
        with open(config_path, "w") as f:
            yaml.safe_dump(self.config, f, default_flow_style=False, sort_keys=True)

    @property
    def seed(self) -> int:
        seed = self.get("pipeline.seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"pipeline.seed must be a non-negative integer, got {seed!r}")
        return seed

    def rigidity_params(self) -> RigidityParams:
        """Build validated RigidityParams from the ``rigidity`` section."""
        return _build(RigidityParams, "rigidity", self._section("rigidity"), rng_seed=self.seed)

    def spectral_config(self) -> SpectralConfig:
        """Build validated SpectralConfig from the ``spectral`` section."""
        return _build(SpectralConfig, "spectral", self._section("spectral"), rng_seed=self.seed)

    def bundle_config(self) -> BundleConfig:
        return _build(BundleConfig, "bundle", self._section("bundle"))

    def scene_config(self) -> SceneConfig:
        """Build validated SceneConfig from the ``scene`` section."""
        section = self._section("scene")
        intrinsics = section.pop("intrinsics", None)
        if isinstance(intrinsics, dict):
            try:
                section["intrinsics"] = CameraIntrinsics(**intrinsics)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"scene.intrinsics: {e}") from e
        for key in ("radius_range", "image_size", "states"):
            if section.get(key) is not None:
                section[key] = tuple(section[key])
        return _build(SceneConfig, "scene", section, rng_seed=self.seed)

    def landmark_pair(self):
        pair = self.get("reconstruction.landmark_pair", "auto")
        if pair == "auto":
            return "auto"
        if isinstance(pair, (list, tuple)) and len(pair) == 2 and pair[0] != pair[1]:
            return (int(pair[0]), int(pair[1]))
        raise ConfigError(
            f"reconstruction.landmark_pair must be 'auto' or two distinct ids, got {pair!r}"
        )

    def pipeline_config(self) -> PipelineConfig:
        """Assemble the full PipelineConfig for one end-to-end run."""
        log_level = str(self.get("pipeline.log_level", "INFO")).upper()
        if not isinstance(logging.getLevelName(log_level), int):
            raise ConfigError(f"pipeline.log_level is not a logging level: {log_level!r}")
        retries = self.get("reconstruction.max_seed_retries", 3)
        if not isinstance(retries, int) or retries < 1:
            raise ConfigError(
                f"reconstruction.max_seed_retries must be a positive integer, got {retries!r}"
            )
        return PipelineConfig(
            tracks_path=self.get("paths.tracks"),
            intrinsics_path=self.get("paths.intrinsics"),
            output_dir=self.get("paths.output_dir", "results"),
            rigidity=self.rigidity_params(),
            spectral=self.spectral_config(),
            bundle=self.bundle_config(),
            landmark_pair=self.landmark_pair(),
            workers=resolve_workers(self.get("pipeline.workers", 1)),
            log_level=log_level,
            truth_path=self.get("paths.truth"),
            max_seed_retries=retries,
        )

    def _section(self, name: str) -> Dict[str, Any]:
        section = self.config.get(name)
        if not isinstance(section, dict):
            raise ConfigError(f"{name} must be a mapping")
        return dict(section)


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> None:
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)


def _build(cls, section_name: str, values: Dict[str, Any], **extra):
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(values) - known)
    if unknown:
        keys = ", ".join(f"{section_name}.{k}" for k in unknown)
        raise ConfigError(f"unknown {section_name} keys: {keys}")
    values = {**values, **{k: v for k, v in extra.items() if k not in values}}
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section_name}: {e}") from e
