from .assemble import (
    AssembledDataset,
    EmbeddedSample,
    assemble,
    assemble_corpus,
    expand_repeat,
    positional_encoding,
    window_tokens,
)
from .cbow import CBOW, EmbeddingMatrix, train_cbow
