from typing import List

import torch
from sklearn.metrics import confusion_matrix
from torch import nn

from ..embed import AssembledDataset
from ..errors import DatasetError, ShapeError
from ..schemas import Metrics


def _ratio(numerator: int, denominator: int, name: str, undefined: List[str]) -> float:
    if denominator == 0:
        undefined.append(name)
        return 0.0
    return numerator / denominator


def metrics_from_counts(tp: int, tn: int, fp: int, fn: int) -> Metrics:
    """Accuracy, precision, recall and F1; zero denominators report 0 and are listed in ``undefined``."""
    total = tp + tn + fp + fn
    if total == 0:
        raise DatasetError("cannot compute metrics over zero predictions")
    undefined: List[str] = []
    precision = _ratio(tp, tp + fp, "precision", undefined)
    recall = _ratio(tp, tp + fn, "recall", undefined)
    if "precision" in undefined or "recall" in undefined or precision + recall == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(
        tp=tp, tn=tn, fp=fp, fn=fn,
        accuracy=(tp + tn) / total,
        precision=precision, recall=recall, f1=f1,
        undefined=undefined,
    )


@torch.no_grad()
def predict(model: nn.Module, inputs: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    try:
        chunks = [model.logits(inputs[i:i + batch_size].to(dtype)).argmax(dim=-1)
                  for i in range(0, len(inputs), batch_size)]
    finally:
        model.train(was_training)
    return torch.cat(chunks)


def evaluate(model: nn.Module, test: AssembledDataset, batch_size: int = 64) -> Metrics:
    if len(test) == 0:
        raise DatasetError("test set is empty")
    expected = getattr(model, "input_shape", None)
    if expected is not None and tuple(test.inputs.shape[1:]) != tuple(expected):
        raise ShapeError(f"model expects inputs {tuple(expected)}, test set has {tuple(test.inputs.shape[1:])}")
    predictions = predict(model, test.inputs, batch_size)
    tn, fp, fn, tp = confusion_matrix(test.labels.numpy(), predictions.numpy(), labels=[0, 1]).ravel()
    return metrics_from_counts(int(tp), int(tn), int(fp), int(fn))
