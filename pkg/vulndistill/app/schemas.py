from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from .config import VULNERABILITY_CLASSES


# ---------------------------
# Contract Schemas
# ---------------------------
class ContractLabel(BaseModel):
    vulnerability: str
    flag: int = Field(ge=0, le=1)

    @field_validator("vulnerability")
    @classmethod
    def _known_class(cls, value: str) -> str:
        if value not in VULNERABILITY_CLASSES:
            raise ValueError(f"unknown vulnerability class '{value}'")
        return value

    @property
    def vulnerable(self) -> bool:
        return self.flag == 1


class RawContract(BaseModel):
    path: str
    source: str
    label: ContractLabel

    @field_validator("source")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("contract source is empty")
        return value


class AnnotationSpan(BaseModel):
    start: int = Field(ge=0)
    end: int = Field(ge=0)  # inclusive
    pattern: str

    @model_validator(mode="after")
    def _ordered(self):
        if self.end < self.start:
            raise ValueError(f"span end {self.end} precedes start {self.start}")
        return self


class PreprocessWarning(BaseModel):
    path: str = ""
    kind: str
    message: str


class TokenizedContract(BaseModel):
    path: str
    tokens: List[str]
    annotations: List[AnnotationSpan] = []
    label: ContractLabel
    warnings: List[PreprocessWarning] = []

    @model_validator(mode="after")
    def _spans_inside_tokens(self):
        for token in self.tokens:
            if not token or any(ch.isspace() for ch in token):
                raise ValueError(f"invalid token {token!r} in {self.path}")
        for span in self.annotations:
            if span.end >= len(self.tokens):
                raise ValueError(f"span {span.start}..{span.end} outside {len(self.tokens)} tokens in {self.path}")
        return self


# ---------------------------
# Dataset Schemas
# ---------------------------
class SampleRecord(BaseModel):
    source_id: str
    flag: int = Field(ge=0, le=1)


class DatasetManifest(BaseModel):
    vulnerability: str
    samples: List[SampleRecord]
    split_seed: int

    @property
    def positives(self) -> List[SampleRecord]:
        return [s for s in self.samples if s.flag == 1]

    @property
    def negatives(self) -> List[SampleRecord]:
        return [s for s in self.samples if s.flag == 0]

    def source_ids(self) -> List[str]:
        return [s.source_id for s in self.samples]


# ---------------------------
# Metrics / Report Schemas
# ---------------------------
class Metrics(BaseModel):
    tp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)
    accuracy: float = Field(ge=0, le=1)
    precision: float = Field(ge=0, le=1)
    recall: float = Field(ge=0, le=1)
    f1: float = Field(ge=0, le=1)
    undefined: List[str] = []

    def as_row(self) -> Dict[str, Any]:
        return self.model_dump(exclude={"undefined"})


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    valid_accuracy: Optional[float] = None


class DistillRecord(BaseModel):
    step: int
    l_mse: float
    l_kl: float
    l_clf: float
    l_concat: float


class RunReport(BaseModel):
    name: str
    config: Dict[str, Any]
    curves: List[EpochRecord] = []
    distill_history: List[DistillRecord] = []
    metrics: Optional[Metrics] = None
    repeat_index: int = 0
    seed: int = 0
    wall_clock: float = 0.0

    @model_validator(mode="after")
    def _one_entry_per_epoch(self):
        epochs = [r.epoch for r in self.curves]
        if epochs != list(range(1, len(epochs) + 1)):
            raise ValueError(f"curves must have one entry per completed epoch, got {epochs}")
        return self


class RepeatSummary(BaseModel):
    mean: Dict[str, float]
    std: Dict[str, float]
    reports: List[RunReport]
    seeds: Tuple[int, ...]
