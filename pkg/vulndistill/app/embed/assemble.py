import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Sequence, Union

import torch
from joblib import Parallel, delayed

from ..errors import ConfigError, DatasetError, ShapeError
from ..numcore import load_tensors, save_tensors
from ..preprocess import PAD_INDEX, Vocabulary
from ..schemas import TokenizedContract
from .cbow import EmbeddingMatrix

RepeatMode = Literal["tile", "element"]


def positional_encoding(length: int, channels: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Sinusoidal table: sin on even channels, cos on odd ones."""
    if channels % 2:
        raise ConfigError(f"positional encoding needs an even channel count, got {channels}")
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    frequency = torch.exp(torch.arange(0, channels, 2, dtype=torch.float64) * (-math.log(10000.0) / channels))
    table = torch.zeros(length, channels, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * frequency)
    table[:, 1::2] = torch.cos(position * frequency)
    return table.to(dtype)


def expand_repeat(x: torch.Tensor, k: int, mode: RepeatMode = "tile") -> torch.Tensor:
    """[B, N, C] -> [B, N*K, C].

    ``tile`` concatenates K whole copies of the sequence; ``element``
    repeats every position K times in place.
    """
    if k < 1:
        raise ConfigError(f"repeat factor must be >= 1, got {k}")
    if x.dim() != 3:
        raise ShapeError(f"expand_repeat expects [B, N, C], got {tuple(x.shape)}")
    if mode == "tile":
        return x.repeat(1, k, 1)
    if mode == "element":
        return x.repeat_interleave(k, dim=1)
    raise ConfigError(f"unknown repeat mode '{mode}'")


@dataclass
class EmbeddedSample:
    matrix: torch.Tensor  # [N*K, C]
    label: int
    source_id: str


def window_tokens(sample: TokenizedContract, length: int) -> List[str]:
    """First ``length`` tokens, starting at the first annotated span if any."""
    start = min(span.start for span in sample.annotations) if sample.annotations else 0
    return sample.tokens[start:start + length]


def assemble(
    sample: TokenizedContract,
    emb: EmbeddingMatrix,
    vocab: Vocabulary,
    n: int,
    k: int,
    repeat_mode: RepeatMode = "tile",
    pe_after_repeat: bool = False,
) -> EmbeddedSample:
    if n < 1:
        raise ConfigError(f"sequence length must be >= 1, got {n}")
    ids = vocab.encode(window_tokens(sample, n))
    ids = ids + [PAD_INDEX] * (n - len(ids))
    vectors = emb.vectors[torch.tensor(ids, dtype=torch.long)]
    channels = vectors.shape[1]

    if pe_after_repeat:
        expanded = expand_repeat(vectors.unsqueeze(0), k, repeat_mode)[0]
        matrix = expanded + positional_encoding(n * k, channels, vectors.dtype)
    else:
        with_position = vectors + positional_encoding(n, channels, vectors.dtype)
        matrix = expand_repeat(with_position.unsqueeze(0), k, repeat_mode)[0]
    return EmbeddedSample(matrix=matrix, label=sample.label.flag, source_id=sample.path)


# ---------------------------
# Assembled datasets
# ---------------------------
@dataclass
class AssembledDataset:
    inputs: torch.Tensor  # [M, N*K, C]
    labels: torch.Tensor  # [M]
    source_ids: List[str]
    vulnerability: str
    seq_len: int
    repeat: int

    def __len__(self) -> int:
        return len(self.source_ids)

    def subset(self, source_ids: Sequence[str]) -> "AssembledDataset":
        position = {sid: i for i, sid in enumerate(self.source_ids)}
        if len(position) != len(self.source_ids):
            raise DatasetError("dataset holds duplicate source ids; deduplicate the labels first")
        idx = torch.tensor([position[s] for s in source_ids], dtype=torch.long)
        return AssembledDataset(self.inputs[idx], self.labels[idx], list(source_ids),
                                self.vulnerability, self.seq_len, self.repeat)

    def save(self, path: Union[str, Path]) -> Path:
        count, length, channels = self.inputs.shape
        return save_tensors(path, {"inputs": self.inputs, "labels": self.labels}, {
            "count": count, "N": self.seq_len, "K": self.repeat, "C": channels,
            "class": self.vulnerability, "source_ids": self.source_ids,
        })

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AssembledDataset":
        tensors, meta = load_tensors(path)
        return cls(tensors["inputs"], tensors["labels"], list(meta["source_ids"]),
                   meta["class"], int(meta["N"]), int(meta["K"]))


def assemble_corpus(
    corpus: Sequence[TokenizedContract],
    emb: EmbeddingMatrix,
    vocab: Vocabulary,
    n: int,
    k: int,
    vulnerability: str,
    repeat_mode: RepeatMode = "tile",
    pe_after_repeat: bool = False,
    n_jobs: int = 1,
) -> AssembledDataset:
    samples = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(assemble)(c, emb, vocab, n, k, repeat_mode, pe_after_repeat) for c in corpus
    )
    return AssembledDataset(
        inputs=torch.stack([s.matrix for s in samples]),
        labels=torch.tensor([s.label for s in samples], dtype=torch.long),
        source_ids=[s.source_id for s in samples],
        vulnerability=vulnerability,
        seq_len=n,
        repeat=k,
    )
