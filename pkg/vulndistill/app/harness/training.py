import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from ..config import OptimizerConfig, PipelineConfig
from ..embed import AssembledDataset
from ..errors import DatasetError, NumericError
from ..netdistill import build_student, build_teacher
from ..numcore import ParameterStore, backward, make_generator, optimizer_step, resolve_dtype
from ..schemas import EpochRecord, RunReport
from .metrics import evaluate

logger = logging.getLogger(__name__)


def batch_indices(count: int, batch_size: int, generator: torch.Generator) -> List[torch.Tensor]:
    """Shuffled mini-batches; a trailing batch of one is folded into the previous one."""
    order = torch.randperm(count, generator=generator)
    batches = list(torch.split(order, batch_size))
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = torch.cat([batches[-2], batches.pop()])
    return batches


def fit(model: nn.Module, train: AssembledDataset, valid: Optional[AssembledDataset], epochs: int,
        batch_size: int, optimizer: OptimizerConfig, seed: int, namespace: str) -> List[EpochRecord]:
    """Cross-entropy training on true labels; one curve entry per epoch."""
    if len(train) < 2:
        raise DatasetError(f"need at least 2 training samples for batchnorm, got {len(train)}")
    store = ParameterStore(model, namespace, seed)
    generator = make_generator(seed)
    dtype = next(model.parameters()).dtype
    inputs, labels = train.inputs.to(dtype), train.labels
    curves: List[EpochRecord] = []
    for epoch in tqdm(range(1, epochs + 1), desc=namespace, disable=None):
        model.train()
        running, seen = 0.0, 0
        for b, idx in enumerate(batch_indices(len(train), batch_size, generator)):
            loss = F.cross_entropy(model.logits(inputs[idx]), labels[idx])
            store.zero_grad()
            try:
                backward(loss, store)
            except NumericError as e:
                raise NumericError(f"{namespace} training diverged at epoch {epoch}, batch {b} "
                                   f"(lr={optimizer.learning_rate}): {e}") from e
            optimizer_step(store, optimizer)
            running += loss.item() * len(idx)
            seen += len(idx)
        accuracy = evaluate(model, valid).accuracy if valid is not None and len(valid) else None
        curves.append(EpochRecord(epoch=epoch, train_loss=running / seen, valid_accuracy=accuracy))
        logger.info("🔍 %s epoch %d/%d loss %.4f valid acc %s", namespace, epoch, epochs,
                    running / seen, "n/a" if accuracy is None else f"{accuracy:.4f}")
    model.eval()
    return curves


def _train(name: str, builder: Callable[[], nn.Module], train: AssembledDataset, valid: Optional[AssembledDataset],
           config: PipelineConfig, seed: int, epochs: Optional[int] = None,
           optimizer: Optional[OptimizerConfig] = None) -> Tuple[nn.Module, RunReport]:
    started = time.perf_counter()
    model = builder().to(resolve_dtype(config.precision))
    curves = fit(model, train, valid, config.train.epochs if epochs is None else epochs,
                 config.train.batch_size, optimizer or config.train.optimizer, seed, name)
    report = RunReport(
        name=name, config=config.model_dump(mode="json"), curves=curves, seed=seed,
        metrics=evaluate(model, valid) if valid is not None and len(valid) else None,
        wall_clock=time.perf_counter() - started,
    )
    return model, report


def train_teacher(train: AssembledDataset, valid: Optional[AssembledDataset], config: PipelineConfig,
                  seed: int, epochs: Optional[int] = None, learning_rate: Optional[float] = None):
    shape = (train.inputs.shape[1], train.inputs.shape[2])
    optimizer = config.train.optimizer
    if learning_rate is not None:
        optimizer = optimizer.model_copy(update={"learning_rate": learning_rate})
    return _train("teacher", lambda: build_teacher(shape, config.fusion, config.teacher, seed),
                  train, valid, config, seed, epochs, optimizer)


def train_student_baseline(train: AssembledDataset, valid: Optional[AssembledDataset], config: PipelineConfig,
                           seed: int, epochs: Optional[int] = None):
    """The student trained directly on labelled data, without a teacher."""
    shape = (train.inputs.shape[1], train.inputs.shape[2])
    return _train("student-baseline", lambda: build_student(shape, config.student, seed),
                  train, valid, config, seed, epochs)


@dataclass
class LrSearchResult:
    best_lr: float
    best_accuracy: float
    table: pd.DataFrame


def grid_search_lr(train: AssembledDataset, valid: AssembledDataset, config: PipelineConfig,
                   seed: int) -> LrSearchResult:
    rows = []
    for lr in config.train.lr_grid:
        _, report = train_teacher(train, valid, config, seed, epochs=config.train.lr_search_epochs, learning_rate=lr)
        accuracy = report.curves[-1].valid_accuracy if report.curves else 0.0
        rows.append({"learning_rate": lr, "valid_accuracy": accuracy, "final_loss": report.curves[-1].train_loss})
        logger.info("🔍 lr=%g -> valid accuracy %.4f", lr, accuracy)
    table = pd.DataFrame(rows)
    best = table.sort_values(["valid_accuracy", "learning_rate"], ascending=[False, True]).iloc[0]
    logger.info("✅ Best learning rate %g (valid accuracy %.4f)", best["learning_rate"], best["valid_accuracy"])
    return LrSearchResult(float(best["learning_rate"]), float(best["valid_accuracy"]), table)
