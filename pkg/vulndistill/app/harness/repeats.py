import logging
from typing import Callable, Sequence

import pandas as pd

from ..errors import DatasetError
from ..schemas import RepeatSummary, RunReport

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1")


def summarize(reports: Sequence[RunReport]) -> RepeatSummary:
    """Per-metric mean and sample standard deviation (0 for a single run)."""
    scored = [r for r in reports if r.metrics is not None]
    if not scored:
        raise DatasetError("no report carries metrics to summarize")
    frame = pd.DataFrame([r.metrics.as_row() for r in scored])[list(METRIC_COLUMNS)]
    std = frame.std(ddof=1).fillna(0.0)
    return RepeatSummary(
        mean={k: float(v) for k, v in frame.mean().items()},
        std={k: float(v) for k, v in std.items()},
        reports=list(reports),
        seeds=tuple(r.seed for r in reports),
    )


def run_repeats(workflow: Callable[[int], RunReport], n: int = 5, base_seed: int = 0) -> RepeatSummary:
    """Run ``workflow`` with seeds base_seed .. base_seed + n - 1 and average the metrics."""
    if n < 1:
        raise DatasetError(f"need at least one repeat, got n={n}")
    reports = []
    for index in range(n):
        seed = base_seed + index
        logger.info("🔍 Repeat %d/%d (seed %d)", index + 1, n, seed)
        report = workflow(seed).model_copy(update={"repeat_index": index, "seed": seed})
        reports.append(report)
    summary = summarize(reports)
    logger.info("✅ Mean F1 over %d run(s): %.4f ± %.4f", n, summary.mean["f1"], summary.std["f1"])
    return summary
