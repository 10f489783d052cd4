import pytest
import torch

from app.config import (
    DistillConfig,
    EmbedConfig,
    FusionConfig,
    OptimizerConfig,
    PipelineConfig,
    RepeatConfig,
    StudentConfig,
    TeacherConfig,
    TrainConfig,
    TransferConfig,
)
from app.harness import make_synthetic_corpus
from app.numcore import seed_everything


@pytest.fixture(autouse=True)
def _seeded():
    seed_everything(0)
    yield
    torch.use_deterministic_algorithms(False)


@pytest.fixture
def tiny_fusion() -> FusionConfig:
    return FusionConfig(numhead=2, groups=2, memory_slots=4, memory_dim=4, stages=2, mb_expansion=2)


@pytest.fixture
def desk_config() -> PipelineConfig:
    """Single-CPU sizes for end-to-end runs on the synthetic corpus."""
    return PipelineConfig(
        seed=7,
        vulnerability="reentrancy",
        embed=EmbedConfig(dim=32, seq_len=32, repeat=2, epochs=3, batch_size=128),
        fusion=FusionConfig(memory_slots=16, memory_dim=16, mb_expansion=2),
        teacher=TeacherConfig(filters=(16, 32, 64)),
        student=StudentConfig(filters=(8, 16), hidden=16),
        train=TrainConfig(epochs=20, batch_size=32),
        distill=DistillConfig(synth_steps=60, steps=200, batch=64, refresh_every=10,
                              optimizer=OptimizerConfig(kind="sgd-momentum", learning_rate=0.05, momentum=0.9)),
        transfer=TransferConfig(epochs=30),
        repeats=RepeatConfig(n=1),
    )


@pytest.fixture
def micro_config(desk_config) -> PipelineConfig:
    """Smallest sizes that still build every network; for fast wiring tests."""
    return desk_config.model_copy(update={
        "embed": EmbedConfig(dim=8, seq_len=16, repeat=2, epochs=1, batch_size=256),
        "fusion": FusionConfig(numhead=2, groups=2, memory_slots=4, memory_dim=4, mb_expansion=1),
        "teacher": TeacherConfig(filters=(4, 4, 4)),
        "student": StudentConfig(filters=(4, 4), hidden=4, psa_groups=2),
        "train": TrainConfig(epochs=1, batch_size=16),
        "distill": DistillConfig(synth_steps=2, steps=3, batch=8, refresh_every=2),
        "transfer": TransferConfig(epochs=1),
    })


@pytest.fixture
def reentrancy_raws():
    return make_synthetic_corpus(40, "reentrancy", seed=3)
