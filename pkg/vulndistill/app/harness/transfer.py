import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from ..config import PipelineConfig
from ..embed import AssembledDataset
from ..netdistill import StudentModel, build_student
from ..numcore import load_checkpoint, resolve_dtype
from ..schemas import Metrics, RunReport
from .metrics import evaluate
from .training import fit

logger = logging.getLogger(__name__)


@dataclass
class TransferResult:
    student: StudentModel
    report: RunReport
    frozen: Metrics  # the loaded checkpoint before any fine-tuning


def transfer_finetune(student_ckpt: Union[str, Path], train: AssembledDataset, test: AssembledDataset,
                      config: PipelineConfig, seed: int, epochs: Optional[int] = None) -> TransferResult:
    """Load every student weight and fine-tune on a new vulnerability class.

    Uses the same optimizer settings as pre-distillation training.
    """
    started = time.perf_counter()
    epochs = config.transfer.epochs if epochs is None else epochs
    shape = (train.inputs.shape[1], train.inputs.shape[2])
    student = build_student(shape, config.student, seed).to(resolve_dtype(config.precision))
    load_checkpoint(student, student_ckpt, "student")

    frozen = evaluate(student, test)
    logger.info("🔍 Checkpoint on '%s' before fine-tuning: F1 %.4f", train.vulnerability, frozen.f1)
    curves = fit(student, train, test, epochs, config.train.batch_size, config.train.optimizer, seed, "transfer")
    metrics = evaluate(student, test)
    logger.info("✅ Transfer to '%s': F1 %.4f -> %.4f", train.vulnerability, frozen.f1, metrics.f1)

    report = RunReport(
        name=f"transfer-{train.vulnerability}", config=config.model_dump(mode="json"), curves=curves,
        metrics=metrics, seed=seed, wall_clock=time.perf_counter() - started,
    )
    return TransferResult(student, report, frozen)
