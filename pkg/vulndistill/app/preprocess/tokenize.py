import re
from typing import List, NamedTuple

GLOBAL_ROOTS = ("msg", "block", "tx", "this", "address")

TOKEN_RE = re.compile(
    r"""
    (?P<str>"(?:\\.|[^"\\\n])*"?|'(?:\\.|[^'\\\n])*'?)
  | (?P<hex>0[xX][0-9a-fA-F_]*)
  | (?P<num>\d[\d_]*(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<chain>\b(?:%s)\.[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<ident>[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<op>==|!=|<=|>=|&&|\|\||\+\+|--|\+=|-=|\*=|/=|%%=|\*\*|<<|>>|=>|->|\|=|&=|\^=)
  | (?P<punct>\S)
    """ % "|".join(GLOBAL_ROOTS),
    re.VERBOSE,
)

NORMALIZED = {"str": "STR", "hex": "HEXNUM", "num": "NUM"}


class Token(NamedTuple):
    text: str
    start: int
    end: int


def tokenize_with_offsets(source: str) -> List[Token]:
    tokens = []
    for match in TOKEN_RE.finditer(source):
        kind = match.lastgroup
        text = NORMALIZED.get(kind, match.group())
        tokens.append(Token(text, match.start(), match.end()))
    return tokens


def tokenize(source: str) -> List[str]:
    """Split on whitespace and punctuation.

    ``msg.sender``-style chains on the global roots stay whole; numeric,
    hex and string literals collapse to ``NUM``, ``HEXNUM`` and ``STR``.
    """
    return [t.text for t in tokenize_with_offsets(source)]
