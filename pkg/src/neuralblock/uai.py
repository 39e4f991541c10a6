"""Reader and writer for the UAI 2008 model and evidence formats.

Layout: preamble (MARKOV or BAYES), variable count, cardinalities, factor
count, one scope line per factor (size then variable indices), then each
table as an entry count followed by that many reals. BAYES scopes list the
child last. Evidence files hold a count followed by (variable, state) pairs.
All tokens are whitespace-separated; parse errors report line and column.
"""

from __future__ import annotations

import io

import numpy as np

from .models import DiscreteModel, FactorTable


class UaiParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, int, int]] = []
        for ln, line in enumerate(text.splitlines(), start=1):
            col = 0
            for tok in line.split():
                col = line.index(tok, col)
                self.items.append((tok, ln, col + 1))
                col += len(tok)
        self.pos = 0

    def next(self, what: str) -> tuple[str, int, int]:
        if self.pos >= len(self.items):
            last = self.items[-1] if self.items else ("", 1, 1)
            raise UaiParseError(f"unexpected end of input, expected {what}", last[1], last[2])
        item = self.items[self.pos]
        self.pos += 1
        return item

    def next_int(self, what: str) -> int:
        tok, ln, col = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise UaiParseError(f"expected integer {what}, got {tok!r}", ln, col) from None

    def next_float(self, what: str) -> float:
        tok, ln, col = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise UaiParseError(f"expected real {what}, got {tok!r}", ln, col) from None


def parse_uai(text: str | bytes) -> DiscreteModel:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    toks = _Tokens(text)
    kind_tok, ln, col = toks.next("preamble")
    if kind_tok not in ("MARKOV", "BAYES"):
        raise UaiParseError(f"preamble must be MARKOV or BAYES, got {kind_tok!r}", ln, col)
    n = toks.next_int("variable count")
    if n <= 0:
        raise UaiParseError("variable count must be positive", ln, col)
    cards = tuple(toks.next_int(f"cardinality of variable {i}") for i in range(n))
    f_count = toks.next_int("factor count")
    scopes = []
    for i in range(f_count):
        size = toks.next_int(f"scope size of factor {i}")
        scope = tuple(toks.next_int(f"scope entry of factor {i}") for _ in range(size))
        for v in scope:
            if not 0 <= v < n:
                raise UaiParseError(f"factor {i} names unknown variable {v}", *toks.items[toks.pos - 1][1:])
        scopes.append(scope)
    factors = []
    for i, scope in enumerate(scopes):
        count = toks.next_int(f"entry count of table {i}")
        expect = int(np.prod([cards[v] for v in scope])) if scope else 1
        if count != expect:
            tok, ln, col = toks.items[toks.pos - 1]
            raise UaiParseError(
                f"table {i} declares {count} entries, scope implies {expect}", ln, col
            )
        vals = np.array(
            [toks.next_float(f"entry of table {i}") for _ in range(count)]
        ).reshape([cards[v] for v in scope])
        factors.append(FactorTable(scope=scope, values=vals))
    if toks.pos != len(toks.items):
        tok, ln, col = toks.items[toks.pos]
        raise UaiParseError(f"trailing content {tok!r}", ln, col)
    kind = "directed" if kind_tok == "BAYES" else "undirected"
    return DiscreteModel(cards=cards, factors=tuple(factors), kind=kind)


def parse_uai_evidence(text: str | bytes) -> dict[int, int]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    toks = _Tokens(text)
    if not toks.items:
        return {}
    k = toks.next_int("evidence count")
    out: dict[int, int] = {}
    for i in range(k):
        var = toks.next_int(f"evidence variable {i}")
        val = toks.next_int(f"evidence state {i}")
        out[var] = val
    if toks.pos != len(toks.items):
        tok, ln, col = toks.items[toks.pos]
        raise UaiParseError(f"trailing content {tok!r}", ln, col)
    return out


def serialize_uai(model: DiscreteModel) -> str:
    buf = io.StringIO()
    buf.write("BAYES\n" if model.kind == "directed" else "MARKOV\n")
    buf.write(f"{model.num_vars}\n")
    buf.write(" ".join(str(c) for c in model.cards) + "\n")
    buf.write(f"{len(model.factors)}\n")
    for f in model.factors:
        buf.write(" ".join([str(len(f.scope))] + [str(v) for v in f.scope]) + "\n")
    for f in model.factors:
        buf.write(f"\n{f.values.size}\n")
        flat = f.values.reshape(-1)
        buf.write(" ".join(f"{x:.17g}" for x in flat) + "\n")
    return buf.getvalue()


def serialize_uai_evidence(evidence: dict[int, int]) -> str:
    parts = [str(len(evidence))]
    for var in sorted(evidence):
        parts.append(f"{var} {evidence[var]}")
    return " ".join(parts) + "\n"
