import logging
from pathlib import Path
from typing import Iterable, Tuple, Union

import numpy as np
from sklearn.model_selection import train_test_split

from ..errors import DatasetError
from ..preprocess import read_labels
from ..schemas import DatasetManifest, SampleRecord

logger = logging.getLogger(__name__)

MIN_SPLIT_SAMPLES = 5


def balance(samples: Iterable[SampleRecord], vulnerability: str, seed: int) -> DatasetManifest:
    """Undersample the majority class, uniformly at random, to the minority count."""
    samples = list(samples)
    positives = [s for s in samples if s.flag == 1]
    negatives = [s for s in samples if s.flag == 0]
    if not positives or not negatives:
        raise DatasetError(
            f"'{vulnerability}' needs both classes, got {len(positives)} vulnerable / {len(negatives)} clean"
        )
    rng = np.random.default_rng(seed)
    keep = min(len(positives), len(negatives))
    chosen = set()
    for group in (positives, negatives):
        picks = rng.choice(len(group), size=keep, replace=False)
        chosen.update(group[i].source_id for i in picks)
    kept = [s for s in samples if s.source_id in chosen]
    logger.info("✅ Balanced '%s': %d vulnerable / %d clean -> %d each",
                vulnerability, len(positives), len(negatives), keep)
    return DatasetManifest(vulnerability=vulnerability, samples=kept, split_seed=seed)


def load_and_balance(contracts_dir: Union[str, Path], labels_path: Union[str, Path],
                     vulnerability: str, seed: int) -> DatasetManifest:
    contracts_dir = Path(contracts_dir)
    labels = read_labels(labels_path)
    labels = labels[labels["class"] == vulnerability]
    samples = [
        SampleRecord(source_id=filename, flag=flag)
        for filename, flag in labels[["filename", "flag"]].itertuples(index=False, name=None)
        if (contracts_dir / filename).is_file()
    ]
    return balance(samples, vulnerability, seed)


def split(manifest: DatasetManifest, ratio: float = 0.8, seed: int = 0) -> Tuple[DatasetManifest, DatasetManifest]:
    """Seeded, stratified train/test partition."""
    samples = manifest.samples
    if len(samples) < MIN_SPLIT_SAMPLES:
        raise DatasetError(f"need at least {MIN_SPLIT_SAMPLES} samples to split, got {len(samples)}")
    try:
        train, test = train_test_split(
            samples, train_size=ratio, random_state=seed, shuffle=True,
            stratify=[s.flag for s in samples],
        )
    except ValueError as e:
        raise DatasetError(f"cannot split {len(samples)} samples at ratio {ratio}: {e}") from e

    def part(records):
        return DatasetManifest(vulnerability=manifest.vulnerability, samples=list(records), split_seed=seed)

    return part(train), part(test)
