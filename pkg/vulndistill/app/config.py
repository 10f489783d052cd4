import logging
import os
from pathlib import Path
from typing import Literal, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from rich.logging import RichHandler

from .errors import ConfigError


load_dotenv()

# Environment overrides; explicit CLI flags still win
CONFIG_PATH = os.getenv("VULNDISTILL_CONFIG")
SEED = os.getenv("VULNDISTILL_SEED")
OUT_DIR = os.getenv("VULNDISTILL_OUT", "runs")
LOG_LEVEL = os.getenv("VULNDISTILL_LOG_LEVEL", "INFO")
PRECISION = os.getenv("VULNDISTILL_PRECISION")

VULNERABILITY_CLASSES = (
    "reentrancy",
    "timestamp",
    "delegatecall",
    "integer-overflow-underflow",
    "cdav",
)


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Install a single rich handler on the root logger."""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )


# ---------------------------
# Section configs
# ---------------------------
class PreprocessConfig(BaseModel):
    min_count: int = Field(2, ge=1)
    patterns_file: Optional[str] = None
    span_only: bool = False
    n_jobs: int = 1


class EmbedConfig(BaseModel):
    dim: int = 300
    seq_len: int = Field(256, ge=1)
    repeat: int = Field(2, ge=1)
    window: int = Field(5, ge=1)
    negatives: int = Field(5, ge=1)
    epochs: int = Field(5, ge=1)
    learning_rate: float = Field(0.025, gt=0)
    batch_size: int = Field(256, ge=1)
    repeat_mode: Literal["tile", "element"] = "tile"
    pe_after_repeat: bool = False

    @field_validator("dim")
    @classmethod
    def _even_dim(cls, value: int) -> int:
        if value < 2 or value % 2:
            raise ValueError("embedding dimension must be a positive even number")
        return value


class FusionConfig(BaseModel):
    numhead: int = Field(4, ge=1)
    groups: int = Field(4, ge=1)
    memory_slots: int = Field(64, ge=1)
    memory_dim: int = Field(64, ge=1)
    stages: int = Field(2, ge=1)
    mb_expansion: int = Field(4, ge=1)
    persist_memory: bool = False
    memory_momentum: float = Field(0.9, ge=0, lt=1)
    use_query_enhancement: bool = True
    use_external_memory: bool = True
    use_multistage: bool = True

    @model_validator(mode="after")
    def _heads_split_into_groups(self):
        if self.numhead % self.groups:
            raise ValueError(f"numhead={self.numhead} must be divisible by groups={self.groups}")
        return self

    def check_channels(self, channels: int) -> None:
        if channels % self.numhead:
            raise ConfigError(f"C={channels} is not divisible by numhead={self.numhead}")
        if channels % self.groups:
            raise ConfigError(f"C={channels} is not divisible by groups={self.groups}")


class TeacherConfig(BaseModel):
    filters: Tuple[int, int, int] = (64, 128, 256)
    kernel_size: int = 3
    bn_momentum: float = Field(0.1, gt=0, le=1)


class StudentConfig(BaseModel):
    filters: Tuple[int, int] = (64, 128)
    kernel_size: int = 3
    psa_groups: int = Field(4, ge=1)
    hidden: int = Field(64, ge=1)
    bn_momentum: float = Field(0.1, gt=0, le=1)


class OptimizerConfig(BaseModel):
    kind: Literal["adam-amsgrad", "sgd-momentum"] = "adam-amsgrad"
    learning_rate: float = Field(1e-3, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)


class TrainConfig(BaseModel):
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(64, ge=1)
    optimizer: OptimizerConfig = OptimizerConfig()
    split_ratio: float = Field(0.8, gt=0, lt=1)
    lr_grid: Tuple[float, ...] = (1e-4, 1e-3, 1e-2)
    lr_search_epochs: int = Field(3, ge=1)


class DistillConfig(BaseModel):
    mu: float = 0.0
    sigma: float = Field(1.0, ge=0)
    noise_dim: Optional[int] = None
    eta: float = Field(0.05, gt=0)
    synth_steps: int = Field(200, ge=0)
    temperature: float = Field(4.0, gt=0)
    alpha: float = Field(0.2, ge=0, le=1)
    batch: int = Field(64, ge=2)
    steps: int = Field(300, ge=0)
    refresh_every: int = Field(10, ge=1)
    optimizer: OptimizerConfig = OptimizerConfig(kind="sgd-momentum", learning_rate=0.01, momentum=0.9)
    lr_schedule: Literal["constant", "cosine", "step"] = "constant"
    warmup_steps: int = Field(0, ge=0)
    max_backtracks: int = Field(20, ge=0)
    # pseudo-batch start: fixed gaussian, or gaussian scaled by the teacher's recorded input moments
    noise_prior: Literal["gaussian", "input-moments"] = "input-moments"
    synth_step: Literal["gradient", "normalized"] = "normalized"
    class_weight: float = Field(1.0, ge=0)
    min_class_share: float = Field(0.1, ge=0, le=0.5)


class TransferConfig(BaseModel):
    epochs: int = Field(30, ge=0)
    target_class: str = "cdav"


class RepeatConfig(BaseModel):
    n: int = Field(5, ge=1)


# ---------------------------
# Pipeline config
# ---------------------------
class PipelineConfig(BaseModel):
    seed: int = 7
    precision: Literal["float32", "float64"] = "float32"
    vulnerability: str = "reentrancy"
    preprocess: PreprocessConfig = PreprocessConfig()
    embed: EmbedConfig = EmbedConfig()
    fusion: FusionConfig = FusionConfig()
    teacher: TeacherConfig = TeacherConfig()
    student: StudentConfig = StudentConfig()
    train: TrainConfig = TrainConfig()
    distill: DistillConfig = DistillConfig()
    transfer: TransferConfig = TransferConfig()
    repeats: RepeatConfig = RepeatConfig()

    @field_validator("vulnerability")
    @classmethod
    def _known_class(cls, value: str) -> str:
        if value not in VULNERABILITY_CLASSES:
            raise ValueError(f"unknown vulnerability class '{value}'")
        return value

    @model_validator(mode="after")
    def _channels_fit_heads(self):
        self.fusion.check_channels(self.embed.dim)
        if self.distill.noise_dim is not None and self.distill.noise_dim != self.embed.dim:
            raise ValueError("distill.noise_dim must equal embed.dim (pseudo-samples live in input space)")
        return self

    @property
    def input_shape(self) -> Tuple[int, int]:
        """(N*K, C) fed to both networks."""
        return self.embed.seq_len * self.embed.repeat, self.embed.dim


def load_config(path: Optional[str] = None, **overrides) -> PipelineConfig:
    """Defaults < YAML file < environment < explicit overrides."""
    data: dict = {}
    path = path or CONFIG_PATH
    if path:
        config_file = Path(path)
        if not config_file.is_file():
            raise ConfigError(f"config file not found: {config_file}")
        with open(config_file, "r") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config file {config_file} must contain a mapping")

    if SEED is not None:
        data["seed"] = int(SEED)
    if PRECISION:
        data["precision"] = PRECISION
    for key, value in overrides.items():
        if value is not None:
            data[key] = value

    try:
        return PipelineConfig.model_validate(data)
    except (ValidationError, ConfigError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
