"""Declarative regression specifications and their flat text format.

A spec file holds one ``key = value`` pair per line; ``#`` starts a comment.

    outcome    = loans_small_n
    regressors = tmax, tmax^2, lag(tmax, 1), lag(tmax^2, 1), size[small]*tmax
    absorb     = county, year, region*year
    trends     = county:2
    cluster    = county
    unit       = county
    time       = year

Terms in ``regressors`` are products (``*``) of factors.  A factor is a
column, a power ``col^k``, a level indicator ``col[level]`` or a within-unit
lag ``lag(factor, k)``.  ``absorb`` lists categorical effects, with ``*``
forming interactions.  ``trends`` is a degree (0, 1 or 2), optionally
prefixed by the column whose levels get their own polynomial in time.
``absorb = none`` and ``cluster = none`` are accepted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from ..errors import SpecSyntaxError

KEYS = ("outcome", "regressors", "absorb", "trends", "cluster", "unit", "time")


@dataclass(frozen=True)
class Factor:
    column: str
    power: int = 1
    lag: int = 0
    level: Optional[str] = None  # set for indicator factors

    @property
    def name(self) -> str:
        if self.level is not None:
            base = f"{self.column}[{self.level}]"
        else:
            base = self.column if self.power == 1 else f"{self.column}^{self.power}"
        return f"lag({base},{self.lag})" if self.lag else base


@dataclass(frozen=True)
class Term:
    factors: tuple[Factor, ...]

    @property
    def name(self) -> str:
        return "*".join(f.name for f in self.factors)

    @property
    def columns(self) -> set[str]:
        return {f.column for f in self.factors}

    @property
    def max_lag(self) -> int:
        return max(f.lag for f in self.factors)


def column(name: str, power: int = 1, lag: int = 0) -> Term:
    return Term((Factor(name, power, lag),))


def interact(col: str, level: str, term: Term | None = None) -> Term:
    """``col[level]`` times ``term`` (or the bare indicator)."""
    ind = Factor(col, level=str(level))
    return Term((ind,) + (term.factors if term is not None else ()))


@dataclass(frozen=True)
class RegressionSpec:
    outcome: str
    regressors: tuple[Term, ...]
    absorb: tuple[tuple[str, ...], ...] = ()
    trend_unit: Optional[str] = None
    trend_degree: int = 0
    cluster: Optional[str] = None  # None means "default"; "" means no clustering
    unit: str = "county"
    time: str = "year"
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if self.trend_degree not in (0, 1, 2):
            raise ValueError("trend degree must be 0, 1 or 2")
        if not self.regressors:
            raise ValueError("at least one regressor is required")

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.regressors]

    def columns(self) -> set[str]:
        cols = {self.outcome, self.unit, self.time}
        for t in self.regressors:
            cols |= t.columns
        for eff in self.absorb:
            cols |= set(eff)
        if self.trend_degree and self.trend_unit:
            cols.add(self.trend_unit)
        if self.cluster:
            cols.add(self.cluster)
        return cols

    def to_text(self) -> str:
        lines = [
            f"outcome = {self.outcome}",
            "regressors = " + ", ".join(self.names),
            "absorb = " + (", ".join("*".join(e) for e in self.absorb) if self.absorb else "none"),
        ]
        if self.trend_degree:
            lines.append(f"trends = {self.trend_unit or self.unit}:{self.trend_degree}")
        if self.cluster is not None:
            lines.append(f"cluster = {self.cluster or 'none'}")
        lines += [f"unit = {self.unit}", f"time = {self.time}"]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?![A-Za-z_]))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<level>\[[^\]]*\])
  | (?P<op>[(),*^:])
    """,
    re.VERBOSE,
)


class _Tokens:
    def __init__(self, text: str, line: int, col0: int):
        self.toks = []
        self.line = line
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line, col0 + pos)
            kind = m.lastgroup
            if kind != "ws":
                val = m.group()
                if kind == "op":
                    kind = val
                self.toks.append((kind, val, col0 + pos))
            pos = m.end()
        self.i = 0
        self.end_col = col0 + len(text)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("eof", "", self.end_col)

    def take(self, kind: str, what: str):
        tok = self.peek()
        if tok[0] != kind:
            found = "end of line" if tok[0] == "eof" else repr(tok[1])
            raise SpecSyntaxError(f"expected {what}, found {found}", self.line, tok[2])
        self.i += 1
        return tok

    def done(self):
        tok = self.peek()
        if tok[0] != "eof":
            raise SpecSyntaxError(f"unexpected {tok[1]!r}", self.line, tok[2])


def _parse_factor(tk: _Tokens) -> Factor:
    kind, val, col = tk.peek()
    if kind == "ident" and val == "lag" and tk.toks[tk.i + 1 : tk.i + 2] and tk.toks[tk.i + 1][0] == "(":
        tk.i += 1
        tk.take("(", "'('")
        inner = _parse_factor(tk)
        tk.take(",", "',' in lag(...)")
        k = int(tk.take("num", "a lag length")[1])
        tk.take(")", "')'")
        if k < 1:
            raise SpecSyntaxError("lag length must be at least 1", tk.line, col)
        return Factor(inner.column, inner.power, inner.lag + k, inner.level)
    name = tk.take("ident", "a column name")[1]
    level = None
    power = 1
    if tk.peek()[0] == "level":
        level = tk.take("level", "a level")[1][1:-1].strip()
        if not level:
            raise SpecSyntaxError("empty level in brackets", tk.line, col)
    if tk.peek()[0] == "^":
        caret = tk.take("^", "'^'")
        if level is not None:
            raise SpecSyntaxError("an indicator cannot be raised to a power", tk.line, caret[2])
        power = int(tk.take("num", "an integer power")[1])
        if power < 1:
            raise SpecSyntaxError("power must be at least 1", tk.line, caret[2])
    return Factor(name, power, 0, level)


def _parse_term(tk: _Tokens) -> Term:
    factors = [_parse_factor(tk)]
    while tk.peek()[0] == "*":
        tk.i += 1
        factors.append(_parse_factor(tk))
    return Term(tuple(factors))


def _parse_list(tk: _Tokens, item):
    out = [item(tk)]
    while tk.peek()[0] == ",":
        tk.i += 1
        out.append(item(tk))
    tk.done()
    return out


def _parse_effect(tk: _Tokens) -> tuple[str, ...]:
    cols = [tk.take("ident", "a column name")[1]]
    while tk.peek()[0] == "*":
        tk.i += 1
        cols.append(tk.take("ident", "a column name")[1])
    return tuple(cols)


def parse_spec(text: str) -> RegressionSpec:
    """Parse the flat ``key = value`` format; errors carry line and column."""
    values: dict[str, tuple[str, int, int]] = {}
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        last_line = lineno
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            col = len(line) - len(line.lstrip()) + 1
            raise SpecSyntaxError("expected 'key = value'", lineno, col)
        key_part, value = line.split("=", 1)
        key = key_part.strip()
        key_col = len(key_part) - len(key_part.lstrip()) + 1
        if key not in KEYS:
            raise SpecSyntaxError(f"unknown key {key!r} (expected one of {', '.join(KEYS)})", lineno, key_col)
        if key in values:
            raise SpecSyntaxError(f"duplicate key {key!r}", lineno, key_col)
        values[key] = (value, lineno, len(key_part) + 2)

    for required in ("outcome", "regressors"):
        if required not in values:
            raise SpecSyntaxError(f"missing required key {required!r}", last_line + 1, 1)

    def tokens(key):
        value, lineno, col = values[key]
        return _Tokens(value, lineno, col)

    tk = tokens("outcome")
    outcome = tk.take("ident", "a column name")[1]
    tk.done()

    tk = tokens("regressors")
    regressors: list[Term] = []
    while True:
        col = tk.peek()[2]
        term = _parse_term(tk)
        if term.name in {t.name for t in regressors}:
            raise SpecSyntaxError(f"duplicate regressor {term.name!r}", tk.line, col)
        regressors.append(term)
        if tk.peek()[0] != ",":
            break
        tk.i += 1
    tk.done()

    absorb: list[tuple[str, ...]] = []
    if "absorb" in values:
        tk = tokens("absorb")
        if tk.peek()[1] == "none":
            tk.i += 1
            tk.done()
        else:
            absorb = _parse_list(tk, _parse_effect)

    def single_ident(key, default):
        if key not in values:
            return default
        tk = tokens(key)
        name = tk.take("ident", "a column name")[1]
        tk.done()
        return name

    unit = single_ident("unit", "county")
    time = single_ident("time", "year")

    cluster = None
    if "cluster" in values:
        c = single_ident("cluster", None)
        cluster = "" if c == "none" else c

    trend_unit, degree = None, 0
    if "trends" in values:
        tk = tokens("trends")
        kind, val, col = tk.peek()
        if kind == "ident":
            trend_unit = tk.take("ident", "a column name")[1]
            tk.take(":", "':' before the trend degree")
            kind, val, col = tk.peek()
        degree = int(tk.take("num", "a trend degree")[1])
        tk.done()
        if degree not in (0, 1, 2):
            raise SpecSyntaxError(f"trend degree must be 0, 1 or 2, got {degree}", values["trends"][1], col)
        trend_unit = trend_unit or unit

    return RegressionSpec(
        outcome=outcome,
        regressors=tuple(regressors),
        absorb=tuple(absorb),
        trend_unit=trend_unit,
        trend_degree=degree,
        cluster=cluster,
        unit=unit,
        time=time,
        source=text,
    )
