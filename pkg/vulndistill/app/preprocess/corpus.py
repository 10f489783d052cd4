import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError

from ..errors import PreprocessError
from ..schemas import ContractLabel, RawContract, TokenizedContract
from .annotate import VulnerabilityPattern, annotate_with_warnings, spans_to_token_ranges
from .normalize import strip_noise_with_warnings
from .tokenize import tokenize_with_offsets

logger = logging.getLogger(__name__)

LABEL_COLUMNS = {"filename", "class", "flag"}


def read_labels(labels_path: Union[str, Path]) -> pd.DataFrame:
    """Load ``labels.csv`` (filename, class, flag), dropping unusable rows."""
    labels_path = Path(labels_path)
    if not labels_path.is_file():
        raise PreprocessError(f"labels file not found: {labels_path}")
    df = pd.read_csv(labels_path, dtype=str)
    # Normalize column names
    df.columns = [c.strip().lower() for c in df.columns]
    if not LABEL_COLUMNS.issubset(df.columns):
        raise PreprocessError(f"{labels_path} must contain columns {sorted(LABEL_COLUMNS)}, got {list(df.columns)}")
    df = df[["filename", "class", "flag"]].dropna(how="any")
    for column in df.columns:
        df[column] = df[column].astype(str).str.strip()

    valid = df["flag"].isin(["0", "1"])
    for idx in df.index[~valid]:
        logger.warning("⚠️ Row %d of %s has flag %r. Skipping.", idx + 1, labels_path.name, df.at[idx, "flag"])
    df = df[valid].copy()
    df["flag"] = df["flag"].astype(int)
    repeated = df.duplicated(subset=["filename", "class"], keep="first")
    for idx in df.index[repeated]:
        logger.warning("⚠️ Row %d of %s repeats %s for class %s. Keeping the first.",
                       idx + 1, labels_path.name, df.at[idx, "filename"], df.at[idx, "class"])
    df = df[~repeated]
    return df.reset_index(drop=True)


def read_contract(path: Union[str, Path], vulnerability: str, flag: int) -> RawContract:
    path = Path(path)
    source = path.read_text(encoding="utf-8", errors="replace")
    try:
        return RawContract(path=path.name, source=source, label=ContractLabel(vulnerability=vulnerability, flag=flag))
    except ValidationError as e:
        raise PreprocessError(f"{path}: {e}") from e


def preprocess_contract(raw: RawContract, patterns: Sequence[VulnerabilityPattern],
                        span_only: bool = False) -> TokenizedContract:
    """Strip, annotate and tokenize one contract.

    With ``span_only`` the token stream keeps only annotated regions (spans
    are re-indexed into the shortened stream); otherwise spans are metadata.
    """
    stripped, warnings = strip_noise_with_warnings(raw.source, raw.path)
    char_spans, span_warnings = annotate_with_warnings(stripped, patterns, raw.path)
    tokens = tokenize_with_offsets(stripped)
    annotations = spans_to_token_ranges(char_spans, tokens)
    texts = [t.text for t in tokens]

    if span_only and annotations:
        keep = sorted({i for span in annotations for i in range(span.start, span.end + 1)})
        new_index = {old: new for new, old in enumerate(keep)}
        texts = [texts[i] for i in keep]
        annotations = [
            span.model_copy(update={"start": new_index[span.start], "end": new_index[span.end]})
            for span in annotations
        ]

    return TokenizedContract(
        path=raw.path,
        tokens=texts,
        annotations=annotations,
        label=raw.label,
        warnings=warnings + span_warnings,
    )


def preprocess_directory(contracts_dir: Union[str, Path], labels_path: Union[str, Path],
                         patterns: Sequence[VulnerabilityPattern], vulnerability: Optional[str] = None,
                         span_only: bool = False, n_jobs: int = 1) -> List[TokenizedContract]:
    contracts_dir = Path(contracts_dir)
    labels = read_labels(labels_path)
    if vulnerability:
        labels = labels[labels["class"] == vulnerability]

    raws = []
    for filename, vulnerability_class, flag in labels.itertuples(index=False, name=None):
        path = contracts_dir / filename
        if not path.is_file():
            logger.warning("⚠️ %s listed in labels but missing on disk. Skipping.", filename)
            continue
        try:
            raws.append(read_contract(path, vulnerability_class, flag))
        except ValueError as e:
            logger.warning("⚠️ %s rejected: %s", filename, e)
    if not raws:
        raise PreprocessError(f"no usable contracts found in {contracts_dir}")

    corpus = Parallel(n_jobs=n_jobs)(delayed(preprocess_contract)(raw, patterns, span_only) for raw in raws)
    logger.info("📄 Preprocessed %d contracts from %s", len(corpus), contracts_dir)
    return list(corpus)


def write_corpus(corpus: Iterable[TokenizedContract], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in corpus:
            f.write(json.dumps(record.model_dump(), sort_keys=True) + "\n")
    return path


def read_corpus(path: Union[str, Path]) -> List[TokenizedContract]:
    with open(path, "r", encoding="utf-8") as f:
        return [TokenizedContract.model_validate(json.loads(line)) for line in f if line.strip()]
