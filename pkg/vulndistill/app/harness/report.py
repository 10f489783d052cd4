import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import ReportError
from ..schemas import RunReport
from .reference import F1_TOLERANCE, reference_for

logger = logging.getLogger(__name__)

SCALE_LOWER = 0.04
SCALE_UPPER = 0.5
MANIFEST_NAME = "manifest.json"


def min_max_scale(values: Sequence[float], lower: float = SCALE_LOWER,
                  upper: float = SCALE_UPPER) -> Tuple[np.ndarray, float, float]:
    """Map ``values`` affinely onto [lower, upper]; a constant series maps to ``lower``."""
    raw = np.asarray(values, dtype=np.float64)
    if raw.size == 0:
        return raw, float("nan"), float("nan")
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        return np.full_like(raw, lower), lo, hi
    return lower + (raw - lo) * (upper - lower) / (hi - lo), lo, hi


def invert_min_max(scaled: Sequence[float], lo: float, hi: float,
                   lower: float = SCALE_LOWER, upper: float = SCALE_UPPER) -> np.ndarray:
    scaled = np.asarray(scaled, dtype=np.float64)
    return lo + (scaled - lower) * (hi - lo) / (upper - lower)


def update_manifest(out_dir: Union[str, Path], files: Sequence[Union[str, Path]], command: str) -> Path:
    """Record written files (relative to ``out_dir``) in manifest.json."""
    out_dir = Path(out_dir)
    path = out_dir / MANIFEST_NAME
    manifest: Dict = {"files": {}}
    if path.is_file():
        with open(path, "r") as f:
            manifest = json.load(f)
    for file in files:
        file = Path(file)
        try:
            relative = str(file.resolve().relative_to(out_dir.resolve()))
        except ValueError:
            relative = str(file)
        manifest["files"][relative] = {"command": command, "bytes": file.stat().st_size if file.exists() else None}
    manifest["updated"] = datetime.now().isoformat(timespec="seconds")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _metrics_table(reports: Sequence[RunReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        if r.metrics is None:
            continue
        rows.append({"name": r.name, "repeat_index": r.repeat_index, "seed": r.seed, **r.metrics.as_row(),
                     "undefined": ";".join(r.metrics.undefined)})
    return pd.DataFrame(rows, columns=["name", "repeat_index", "seed", "tp", "tn", "fp", "fn",
                                       "accuracy", "precision", "recall", "f1", "undefined"])


def _curves_table(reports: Sequence[RunReport]) -> pd.DataFrame:
    rows = [{"name": r.name, "repeat_index": r.repeat_index, **c.model_dump()} for r in reports for c in r.curves]
    return pd.DataFrame(rows, columns=["name", "repeat_index", "epoch", "train_loss", "valid_accuracy"])


def distillation_comparison(pre: RunReport, post: RunReport) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """Pre-distillation loss (raw and min-max scaled) next to the distillation loss.

    ``pre`` is a student trained without a teacher (its per-epoch train loss);
    ``post`` carries the distillation history (L_concat per step).
    """
    pre_raw = [c.train_loss for c in pre.curves]
    scaled, lo, hi = min_max_scale(pre_raw)
    post_loss = [h.l_concat for h in post.distill_history]
    length = max(len(pre_raw), len(post_loss))

    def padded(values):
        return list(values) + [np.nan] * (length - len(values))

    frame = pd.DataFrame({
        "position": range(1, length + 1),
        "pre_distill_raw": padded(pre_raw),
        "pre_distill_scaled": padded(scaled.tolist()),
        "post_distill": padded(post_loss),
    })
    return frame, {"pre_min": lo, "pre_max": hi, "lower": SCALE_LOWER, "upper": SCALE_UPPER}


def reference_table(reports: Sequence[RunReport], vulnerability: str) -> pd.DataFrame:
    """Measured metrics (percent) next to the published ones; the tolerance flag never gates."""
    rows = []
    for r in reports:
        if r.metrics is None or not r.name.startswith(("student", "transfer")):
            continue
        variant = r.name.split(":", 1)[1] if ":" in r.name else "full"
        reference = reference_for(vulnerability, variant, distilled=r.name != "student-baseline")
        if reference is None:
            continue
        for metric, published in reference.items():
            measured = 100.0 * getattr(r.metrics, metric)
            rows.append({
                "name": r.name, "repeat_index": r.repeat_index, "metric": metric,
                "measured": measured, "reference": published,
                "within_tolerance": abs(measured - published) <= F1_TOLERANCE,
            })
    return pd.DataFrame(rows, columns=["name", "repeat_index", "metric", "measured", "reference", "within_tolerance"])


def emit_report(reports: Sequence[RunReport], out_dir: Union[str, Path],
                vulnerability: Optional[str] = None, command: str = "report") -> List[Path]:
    if not reports:
        raise ReportError("no run reports to emit")
    out_dir = Path(out_dir)
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)

        def write_csv(frame: pd.DataFrame, name: str) -> None:
            path = out_dir / name
            frame.to_csv(path, index=False, float_format="%.6f")
            written.append(path)

        write_csv(_metrics_table(reports), "metrics.csv")
        write_csv(_curves_table(reports), "curves.csv")

        distilled = [r for r in reports if r.distill_history]
        if distilled:
            history = pd.DataFrame([{"name": r.name, "repeat_index": r.repeat_index, **h.model_dump()}
                                    for r in distilled for h in r.distill_history])
            write_csv(history, "distill_history.csv")

        baselines = [r for r in reports if r.name == "student-baseline" and r.curves]
        if baselines and distilled:
            frame, scale = distillation_comparison(baselines[0], distilled[0])
            write_csv(frame, "distill_comparison.csv")
            scale_path = out_dir / "distill_comparison.json"
            with open(scale_path, "w") as f:
                json.dump(scale, f, indent=2)
            written.append(scale_path)

        if vulnerability:
            table = reference_table(reports, vulnerability)
            if len(table):
                write_csv(table, "reference_comparison.csv")

        reports_path = out_dir / "reports.json"
        with open(reports_path, "w") as f:
            json.dump([r.model_dump(mode="json") for r in reports], f, indent=2)
        written.append(reports_path)
        update_manifest(out_dir, written, command)
    except OSError as e:
        raise ReportError(f"cannot write reports under {out_dir}: {e}") from e

    logger.info("✅ Wrote %d report file(s) to %s", len(written), out_dir)
    return written
