import hashlib
import json
import logging
import os
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError
from rich.logging import RichHandler

from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "HOTCOLD_SEED"
SUPPORTED_FORMATS = ("jsonl", "csv")


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WindowConfig(_StrictModel):
    """Observation windows r_A / r_B in days"""

    r_a: int = Field(10, ge=1)
    r_b: int = Field(20, ge=1)


class OptimizerConfig(_StrictModel):
    """Optimizer choice plus hyperparameters for every supported optimizer"""

    name: Literal["ftrl", "adam", "rmsprop", "fobos"] = "ftrl"
    alpha: float = Field(0.1, gt=0)
    # beta = 1 per example, rescaled for the mean gradient of a 64-row batch
    beta: float = Field(1.0 / 64, ge=0)
    l1: float = Field(1e-4, ge=0)
    l2: float = Field(0.0, ge=0)
    learning_rate: float = Field(0.001, gt=0)
    fobos_learning_rate: float = Field(0.01, gt=0)
    beta_1: float = Field(0.9, ge=0, lt=1)
    beta_2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    rmsprop_decay: float = Field(0.9, ge=0, lt=1)


class NetConfig(_StrictModel):
    """Embedding network shape and training loop settings"""

    embed_dim: int = Field(30, ge=1)
    text_dim: int = Field(30, ge=1)
    text_buckets: int = Field(16384, ge=1)
    hidden: Tuple[int, ...] = (128, 64)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(50, ge=1)
    patience: Optional[int] = Field(10, ge=1)
    min_delta: float = Field(1e-5, ge=0)
    use_embeddings: bool = True
    init_scale: float = Field(0.05, gt=0)


class GbdtConfig(_StrictModel):
    """Boosted tree ensemble hyperparameters"""

    reg_lambda: float = Field(1.0, ge=0)
    gamma: float = Field(0.0, ge=0)
    max_depth: int = Field(4, ge=0)
    n_trees: int = Field(200, ge=0)
    learning_rate: float = Field(0.1, gt=0)
    early_stopping_rounds: Optional[int] = Field(20, ge=1)
    min_trees: int = Field(20, ge=0)
    validation_fraction: float = Field(0.2, ge=0, lt=1)


class PathsConfig(_StrictModel):
    data: Optional[str] = None
    out: Optional[str] = None


class RunConfig(_StrictModel):
    """Everything a run needs; every field has a default"""

    seed: int = 42
    q: float = Field(0.2, gt=0, lt=1)
    period_length: int = Field(10, ge=1)
    label_days: int = Field(10, ge=1)
    windows: WindowConfig = WindowConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    net: NetConfig = NetConfig()
    gbdt: GbdtConfig = GbdtConfig()
    threshold: float = Field(0.5, gt=0, le=1)
    threshold_mode: Literal["fixed", "quantile"] = "fixed"
    target_hot_fraction: float = Field(0.2, gt=0, le=1)
    zero_undefined_metrics: bool = False
    paths: PathsConfig = PathsConfig()


class ConfigManager:
    """Manage run configuration"""

    @staticmethod
    def from_dict(overrides: Dict[str, Any]) -> RunConfig:
        """Validate a (possibly partial) config mapping over the defaults"""
        try:
            return RunConfig.model_validate(overrides)
        except PydanticValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(part) for part in first["loc"])
            if first["type"] == "extra_forbidden":
                raise ConfigError(f"unknown config key '{key}'") from e
            raise ConfigError(f"invalid value for config key '{key}': {first['msg']}") from e

    @staticmethod
    def load_config(path: Optional[str] = None) -> RunConfig:
        """Load configuration from file or return defaults"""
        if path is None:
            return RunConfig()
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "r") as f:
                overrides = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        return ConfigManager.from_dict(overrides)

    @staticmethod
    def to_dict(config: RunConfig) -> Dict[str, Any]:
        return config.model_dump(mode="json")

    @staticmethod
    def config_hash(config: RunConfig) -> str:
        """sha256 of the canonical JSON dump"""
        canonical = json.dumps(ConfigManager.to_dict(config), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @staticmethod
    def with_seed(config: RunConfig, seed: Optional[int]) -> RunConfig:
        if seed is None:
            return config
        return config.model_copy(update={"seed": seed})


class FileValidator:
    """Validate dataset locations before loading"""

    CONTENTS_STEM = "contents"
    VIEWS_STEM = "views"

    @classmethod
    def dataset_paths(cls, directory: str, fmt: str) -> Tuple[str, str]:
        return (
            os.path.join(directory, f"{cls.CONTENTS_STEM}.{fmt}"),
            os.path.join(directory, f"{cls.VIEWS_STEM}.{fmt}"),
        )

    @classmethod
    def detect_format(cls, directory: str) -> Optional[str]:
        """Return the first format whose contents file exists in the directory"""
        for fmt in SUPPORTED_FORMATS:
            contents_path, _ = cls.dataset_paths(directory, fmt)
            if os.path.exists(contents_path):
                return fmt
        return None

    @classmethod
    def validate_dataset_dir(cls, directory: str, fmt: Optional[str] = None) -> Tuple[bool, str]:
        """Validate a dataset directory"""
        if not os.path.isdir(directory):
            return False, f"Dataset directory not found: {directory}"

        fmt = fmt or cls.detect_format(directory)
        if fmt is None:
            return False, f"No contents file found in {directory}. Expected one of: {', '.join(SUPPORTED_FORMATS)}"
        if fmt not in SUPPORTED_FORMATS:
            return False, f"Unsupported format. Allowed: {', '.join(SUPPORTED_FORMATS)}"

        contents_path, views_path = cls.dataset_paths(directory, fmt)
        if not os.path.exists(contents_path):
            return False, f"Missing {contents_path}"
        if not os.path.exists(views_path):
            return False, f"Missing {views_path}"

        return True, fmt


def setup_logging(verbose: bool = False) -> None:
    """Route all package logging through rich"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )


def format_metric(value: Optional[float]) -> str:
    """Render a metric that may be undefined"""
    if value is None:
        return "n/a"
    return f"{value:.3f}"
