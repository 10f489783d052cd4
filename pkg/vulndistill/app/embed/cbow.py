import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from ..errors import PreprocessError
from ..numcore import check_finite, load_tensors, make_generator, save_tensors
from ..preprocess import PAD_INDEX, Vocabulary
from ..schemas import TokenizedContract

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingMatrix:
    vectors: torch.Tensor  # [V, C]; row PAD_INDEX is all zeros
    vocab_fingerprint: str
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def save(self, path: Union[str, Path]) -> Path:
        vocab_size, dim = self.vectors.shape
        return save_tensors(path, {"vectors": self.vectors}, {
            "V": vocab_size, "C": dim, "vocab_hash": self.vocab_fingerprint, "training": self.meta,
        })

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EmbeddingMatrix":
        tensors, metadata = load_tensors(path)
        return cls(tensors["vectors"], metadata.get("vocab_hash", ""), metadata.get("training", {}))


class CBOW(nn.Module):
    """Averaged context -> center word, trained with negative sampling."""

    def __init__(self, vocab_size: int, dim: int):
        super().__init__()
        self.embedding_in = nn.Embedding(vocab_size, dim, padding_idx=PAD_INDEX)
        self.embedding_out = nn.Embedding(vocab_size, dim, padding_idx=PAD_INDEX)
        with torch.no_grad():
            self.embedding_in.weight.uniform_(-0.5 / dim, 0.5 / dim)
            self.embedding_in.weight[PAD_INDEX].zero_()
            self.embedding_out.weight.zero_()

    def forward(self, contexts: torch.Tensor, centers: torch.Tensor, negatives: torch.Tensor) -> torch.Tensor:
        mask = (contexts != PAD_INDEX).unsqueeze(-1).to(self.embedding_in.weight.dtype)
        summed = (self.embedding_in(contexts) * mask).sum(dim=1)
        hidden = summed / mask.sum(dim=1).clamp_min(1.0)  # [b, d]

        positive = (self.embedding_out(centers) * hidden).sum(-1)  # [b]
        negative = torch.bmm(self.embedding_out(negatives), hidden.unsqueeze(-1)).squeeze(-1)  # [b, k]
        loss = F.logsigmoid(positive) + F.logsigmoid(-negative).sum(-1)
        return -loss.mean()


def context_windows(corpus: Sequence[TokenizedContract], vocab: Vocabulary, window: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """(contexts [M, 2*window], centers [M]); out-of-range positions are PAD."""
    contexts: List[List[int]] = []
    centers: List[int] = []
    for contract in corpus:
        ids = vocab.encode(contract.tokens)
        for i, center in enumerate(ids):
            ctx = []
            for offset in range(-window, window + 1):
                if offset == 0:
                    continue
                j = i + offset
                ctx.append(ids[j] if 0 <= j < len(ids) else PAD_INDEX)
            contexts.append(ctx)
            centers.append(center)
    return torch.tensor(contexts, dtype=torch.long), torch.tensor(centers, dtype=torch.long)


def noise_distribution(vocab: Vocabulary) -> torch.Tensor:
    weights = torch.tensor(vocab.counts(), dtype=torch.float64).pow(0.75)
    weights[PAD_INDEX] = 0.0
    if float(weights.sum()) == 0.0:
        weights = torch.ones(len(vocab), dtype=torch.float64)
        weights[PAD_INDEX] = 0.0
    return weights / weights.sum()


def train_cbow(
    corpus: Sequence[TokenizedContract],
    vocab: Vocabulary,
    dim: int = 300,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
    batch_size: int = 256,
) -> EmbeddingMatrix:
    if window < 1 or negatives < 1:
        raise PreprocessError(f"window and negatives must be >= 1, got window={window} negatives={negatives}")
    total_tokens = sum(len(c.tokens) for c in corpus)
    if total_tokens < 2 * window + 1:
        raise PreprocessError(f"corpus has {total_tokens} tokens, CBOW needs at least {2 * window + 1} for window={window}")

    contexts, centers = context_windows(corpus, vocab, window)
    noise = noise_distribution(vocab)
    generator = make_generator(seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = CBOW(len(vocab), dim)

    optimizer = torch.optim.SGD(model.parameters(), lr=lr)
    n_examples = len(centers)
    batches_per_epoch = (n_examples + batch_size - 1) // batch_size
    total_batches = batches_per_epoch * epochs
    epoch_losses: List[float] = []
    step = 0
    for epoch in tqdm(range(epochs), desc="cbow", disable=None):
        order = torch.randperm(n_examples, generator=generator)
        running = 0.0
        for b in range(batches_per_epoch):
            idx = order[b * batch_size:(b + 1) * batch_size]
            negs = torch.multinomial(noise, len(idx) * negatives, replacement=True, generator=generator)
            for group in optimizer.param_groups:
                group["lr"] = max(lr * (1.0 - step / total_batches), lr * 1e-4)
            optimizer.zero_grad()
            loss = model(contexts[idx], centers[idx], negs.view(len(idx), negatives))
            # summed, so every example takes a full lr step as in sequential word2vec
            (loss * len(idx)).backward()
            optimizer.step()
            running += loss.item() * len(idx)
            step += 1
        epoch_losses.append(running / n_examples)
        logger.info("🔍 CBOW epoch %d/%d loss %.4f", epoch + 1, epochs, epoch_losses[-1])

    vectors = model.embedding_in.weight.detach().clone()
    vectors[PAD_INDEX].zero_()
    check_finite(vectors, "cbow embeddings")
    meta = {
        "window": window, "negatives": negatives, "epochs": epochs, "seed": seed,
        "lr": lr, "batch_size": batch_size, "epoch_losses": epoch_losses,
    }
    return EmbeddingMatrix(vectors, vocab.fingerprint(), meta)
