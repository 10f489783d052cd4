import hashlib
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from ..errors import PreprocessError
from ..schemas import TokenizedContract

PAD = "<PAD>"
UNK = "<UNK>"
PAD_INDEX = 0
UNK_INDEX = 1


class Vocabulary:
    """token -> (index, count); PAD is 0, UNK is 1, the rest by descending count."""

    def __init__(self, entries: Sequence[Tuple[str, int]], min_count: int):
        self.min_count = min_count
        self._tokens: List[str] = [PAD, UNK]
        self._counts: Dict[str, int] = {PAD: 0, UNK: 0}
        for token, count in entries:
            if token in self._counts:
                raise PreprocessError(f"duplicate vocabulary token {token!r}")
            self._tokens.append(token)
            self._counts[token] = count
        self._index = {token: i for i, token in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.items() == other.items() and self.min_count == other.min_count

    def items(self) -> List[Tuple[str, int, int]]:
        return [(token, i, self._counts[token]) for i, token in enumerate(self._tokens)]

    def index(self, token: str) -> int:
        return self._index.get(token, UNK_INDEX)

    def count(self, token: str) -> int:
        return self._counts.get(token, 0)

    def token(self, index: int) -> str:
        return self._tokens[index]

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.index(t) for t in tokens]

    def counts(self) -> List[int]:
        return [self._counts[t] for t in self._tokens]

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for token, index, count in self.items():
            digest.update(f"{token}\t{index}\t{count}\n".encode("utf-8"))
        return digest.hexdigest()[:16]

    # ---------------------------
    # File format
    # ---------------------------
    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# min_count={self.min_count}\n")
            for token, index, count in self.items():
                f.write(f"{token}\t{index}\t{count}\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        min_count = 1
        entries = []
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if line.startswith("# min_count="):
                    min_count = int(line.split("=", 1)[1])
                    continue
                if not line:
                    continue
                token, index, count = line.split("\t")
                if int(index) != len(entries):
                    raise PreprocessError(f"{path}:{line_no}: index {index} out of sequence")
                entries.append((token, int(count)))
        if entries[:2] != [(PAD, 0), (UNK, 0)]:
            raise PreprocessError(f"{path}: PAD/UNK must be the first two entries")
        return cls(entries[2:], min_count)


def build_vocab(corpus: Sequence[TokenizedContract], min_count: int = 2) -> Vocabulary:
    if not corpus:
        raise PreprocessError("cannot build a vocabulary from an empty corpus")
    if min_count < 1:
        raise PreprocessError(f"min_count must be positive, got {min_count}")
    counts = Counter()
    for contract in corpus:
        counts.update(contract.tokens)
    kept = [(token, count) for token, count in counts.items() if count >= min_count and token not in (PAD, UNK)]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocabulary(kept, min_count)
