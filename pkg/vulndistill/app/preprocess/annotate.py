import logging
import re
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import yaml

from ..errors import PreprocessError
from ..schemas import AnnotationSpan, PreprocessWarning
from .normalize import _skip_string
from .tokenize import Token

logger = logging.getLogger(__name__)

DEFAULT_PATTERNS_FILE = Path(__file__).with_name("patterns.yaml")
FUNCTION_HEADER = re.compile(r"\b(function|constructor|modifier|fallback|receive)\b")
FALLBACK_CONTEXT_LINES = 2


class VulnerabilityPattern(NamedTuple):
    name: str
    regex: "re.Pattern"
    vulnerability: str = ""
    unless: Optional["re.Pattern"] = None


class CharSpan(NamedTuple):
    start: int
    end: int  # inclusive
    pattern: str


def compile_patterns(pairs: Sequence[Union[Tuple[str, str], dict]]) -> List[VulnerabilityPattern]:
    compiled = []
    for item in pairs:
        if isinstance(item, dict):
            name, regex = item["name"], item["regex"]
            vulnerability, unless = item.get("vulnerability", ""), item.get("unless")
        else:
            (name, regex), vulnerability, unless = item, "", None
        try:
            compiled.append(VulnerabilityPattern(
                name=name,
                regex=re.compile(regex),
                vulnerability=vulnerability,
                unless=re.compile(unless) if unless else None,
            ))
        except re.error as e:
            raise PreprocessError(f"pattern '{name}' does not compile: {e}") from e
    return compiled


def load_patterns(path: Optional[Union[str, Path]] = None, vulnerability: Optional[str] = None) -> List[VulnerabilityPattern]:
    """Read the editable (name, regex) table; optionally keep one class."""
    path = Path(path) if path else DEFAULT_PATTERNS_FILE
    with open(path, "r") as f:
        data = yaml.safe_load(f) or {}
    patterns = compile_patterns(data.get("patterns", []))
    if vulnerability:
        patterns = [p for p in patterns if p.vulnerability == vulnerability]
    return patterns


def brace_pairs(source: str) -> Tuple[List[Tuple[int, int]], bool]:
    """(open, close) offsets of every brace pair, and whether braces balance."""
    pairs = []
    stack = []
    balanced = True
    i = 0
    while i < len(source):
        ch = source[i]
        if ch in "\"'":
            i = _skip_string(source, i)
            continue
        if ch == "{":
            stack.append(i)
        elif ch == "}":
            if not stack:
                balanced = False
            else:
                pairs.append((stack.pop(), i))
        i += 1
    if stack:
        balanced = False
    return pairs, balanced


def _region_start(source: str, open_brace: int) -> Tuple[int, bool]:
    """Start of the declaration owning ``open_brace`` and whether it is function-like."""
    header_from = max(source.rfind(";", 0, open_brace), source.rfind("{", 0, open_brace),
                      source.rfind("}", 0, open_brace)) + 1
    match = FUNCTION_HEADER.search(source, header_from, open_brace)
    if match:
        return match.start(), True
    return open_brace, False


def _line_window(source: str, offset: int) -> Tuple[int, int]:
    line_starts = [0] + [m.end() for m in re.finditer("\n", source)]
    line_no = max(i for i, s in enumerate(line_starts) if s <= offset)
    first = max(0, line_no - FALLBACK_CONTEXT_LINES)
    last = min(len(line_starts) - 1, line_no + FALLBACK_CONTEXT_LINES)
    end = line_starts[last + 1] - 2 if last + 1 < len(line_starts) else len(source) - 1
    return line_starts[first], max(line_starts[first], end)


def annotate_with_warnings(source: str, patterns: Sequence[VulnerabilityPattern],
                           path: str = "") -> Tuple[List[CharSpan], List[PreprocessWarning]]:
    pairs, balanced = brace_pairs(source)
    warnings: List[PreprocessWarning] = []
    regions = []
    for open_brace, close_brace in pairs:
        start, function_like = _region_start(source, open_brace)
        regions.append((start, close_brace, function_like))

    spans: List[CharSpan] = []
    warned = False
    for pattern in patterns:
        if pattern.unless is not None and pattern.unless.search(source):
            continue
        for match in pattern.regex.finditer(source):
            pos = match.start()
            if not balanced:
                if not warned:
                    warnings.append(PreprocessWarning(
                        path=path, kind="unbalanced-braces",
                        message=f"braces do not balance; using +/-{FALLBACK_CONTEXT_LINES} line windows",
                    ))
                    logger.warning("⚠️ %s: unbalanced braces, falling back to line windows", path or "<source>")
                    warned = True
                start, end = _line_window(source, pos)
            else:
                enclosing = [r for r in regions if r[0] <= pos <= r[1]]
                functions = [r for r in enclosing if r[2]]
                candidates = functions or enclosing
                if candidates:
                    start, end, _ = max(candidates, key=lambda r: (r[0], -r[1]))
                else:
                    start, end = _line_window(source, pos)
            spans.append(CharSpan(start, end, pattern.name))

    spans.sort(key=lambda s: (s.start, s.end))
    return spans, warnings


def annotate(source: str, patterns: Sequence[VulnerabilityPattern]) -> List[CharSpan]:
    """One span per pattern match, covering the enclosing function."""
    return annotate_with_warnings(source, patterns)[0]


def spans_to_token_ranges(spans: Sequence[CharSpan], tokens: Sequence[Token]) -> List[AnnotationSpan]:
    result = []
    for span in spans:
        inside = [i for i, t in enumerate(tokens) if span.start <= t.start <= span.end]
        if inside:
            result.append(AnnotationSpan(start=inside[0], end=inside[-1], pattern=span.pattern))
    return result
