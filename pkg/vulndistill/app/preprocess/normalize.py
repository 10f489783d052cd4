import logging
import re
from typing import List, Tuple

from ..schemas import PreprocessWarning

logger = logging.getLogger(__name__)

IMPORT_LINE = re.compile(r"^\s*import\b")


def _skip_string(source: str, i: int) -> int:
    """Index just past the string literal opened at ``source[i]``.

    Literals never span lines, not even after a backslash; an unterminated
    one ends at the newline.
    """
    quote = source[i]
    j = i + 1
    while j < len(source):
        ch = source[j]
        if ch == "\n":
            return j
        if ch == quote:
            return j + 1
        j += 2 if ch == "\\" and source[j + 1:j + 2] != "\n" else 1
    return len(source)


def remove_comments(source: str, path: str = "") -> Tuple[str, List[PreprocessWarning]]:
    out = []
    warnings: List[PreprocessWarning] = []
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch in "\"'":
            end = _skip_string(source, i)
            out.append(source[i:end])
            i = end
        elif source.startswith("//", i):
            newline = source.find("\n", i)
            i = n if newline < 0 else newline
        elif source.startswith("/*", i):
            close = source.find("*/", i + 2)
            if close < 0:
                warnings.append(PreprocessWarning(
                    path=path, kind="unterminated-comment",
                    message=f"block comment opened at offset {i} never closes; stripped to end of file",
                ))
                logger.warning("⚠️ %s: unterminated block comment at offset %d", path or "<source>", i)
                i = n
            else:
                # block comments read as a single space
                out.append(" ")
                i = close + 2
        else:
            out.append(ch)
            i += 1
    return "".join(out), warnings


def strip_noise_with_warnings(source: str, path: str = "") -> Tuple[str, List[PreprocessWarning]]:
    """Drop comments, blank lines and ``import`` lines; keep everything else."""
    text, warnings = remove_comments(source, path)
    kept = []
    for line in text.splitlines():
        line = line.rstrip()
        if not line.strip() or IMPORT_LINE.match(line):
            continue
        kept.append(line)
    return "\n".join(kept), warnings


def strip_noise(source: str) -> str:
    return strip_noise_with_warnings(source)[0]
