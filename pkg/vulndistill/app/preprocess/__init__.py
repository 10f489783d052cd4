from .annotate import (
    CharSpan,
    VulnerabilityPattern,
    annotate,
    annotate_with_warnings,
    compile_patterns,
    load_patterns,
    spans_to_token_ranges,
)
from .corpus import preprocess_contract, preprocess_directory, read_contract, read_corpus, read_labels, write_corpus
from .normalize import strip_noise, strip_noise_with_warnings
from .tokenize import tokenize, tokenize_with_offsets
from .vocab import PAD, PAD_INDEX, UNK, UNK_INDEX, Vocabulary, build_vocab
