"""Marginal effects of a quadratic temperature response and scenario tables.

All effects here are linear in the coefficients, so the delta-method
standard error is the exact standard error of the linear combination
``a' beta``: ``sqrt(a' V a)``.
"""

from __future__ import annotations

import csv
import enum
import io
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import NumericError, UserError
from .panel.fit import FitResult

Z95 = 1.96
C_TO_F = 9.0 / 5.0
# tabulated Fahrenheit values are rounded to two decimals; allow that much slack against 9/5 * C
F_ROUNDING = 0.025

REFERENCE_GROUP = "(reference)"


class Horizon(enum.Enum):
    NearTerm = "near"  # now to 2040
    MediumTerm = "medium"  # 2041 to 2060

    @classmethod
    def parse(cls, text: str) -> "Horizon":
        t = str(text).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        for h in cls:
            if t in (h.value, h.name.lower(), h.value + "term"):
                return h
        raise UserError(f"unknown horizon {text!r} (use near or medium)")


class Mode(enum.Enum):
    Contemporaneous = "now"
    CumulativeLag = "cumlag"


@dataclass(frozen=True)
class Scenario:
    label: str
    horizon: Horizon
    anomaly_c: float
    anomaly_f: float
    name: str = ""

    def __post_init__(self):
        if not (self.anomaly_c > 0 and self.anomaly_f > 0):
            raise UserError(f"scenario {self.label}: anomalies must be positive")
        if abs(self.anomaly_f - C_TO_F * self.anomaly_c) > F_ROUNDING:
            raise UserError(
                f"scenario {self.label}: {self.anomaly_f} F is not 9/5 of {self.anomaly_c} C"
            )

    @classmethod
    def from_celsius(cls, label: str, horizon: Horizon, anomaly_c: float, name: str = "") -> "Scenario":
        return cls(label, horizon, anomaly_c, C_TO_F * anomaly_c, name)


_DEFAULTS = [
    ("SSP1-2.6", Horizon.NearTerm, 1.5, 2.7, "net zero by 2075"),
    ("SSP2-4.5", Horizon.NearTerm, 1.5, 2.7, "net zero by 2100"),
    ("SSP3-7.0", Horizon.NearTerm, 1.4, 2.52, "2X CO2 by 2100"),
    ("SSP5-8.5", Horizon.NearTerm, 1.6, 2.88, "3X CO2 by 2100"),
    ("SSP1-2.6", Horizon.MediumTerm, 1.9, 3.4, "net zero by 2075"),
    ("SSP2-4.5", Horizon.MediumTerm, 2.2, 3.96, "net zero by 2100"),
    ("SSP3-7.0", Horizon.MediumTerm, 2.3, 4.14, "2X CO2 by 2100"),
    ("SSP5-8.5", Horizon.MediumTerm, 2.8, 5.04, "3X CO2 by 2100"),
]


class ScenarioTable:
    """Ordered collection of scenarios, loadable from CSV.

    CSV columns: ``label, horizon`` and at least one of ``anomaly_c`` /
    ``anomaly_f``; a missing one is derived with the factor 9/5.  An
    optional ``name`` column is kept.
    """

    def __init__(self, entries: Iterable[Scenario]):
        self.entries = list(entries)

    @classmethod
    def default(cls) -> "ScenarioTable":
        return cls(Scenario(*row) for row in _DEFAULTS)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def get(self, label: str, horizon: Horizon | str) -> Scenario:
        if not isinstance(horizon, Horizon):
            horizon = Horizon.parse(horizon)
        for s in self.entries:
            if s.label == label and s.horizon is horizon:
                return s
        raise KeyError((label, horizon))

    @classmethod
    def from_csv(cls, path) -> "ScenarioTable":
        try:
            df = pd.read_csv(path, dtype={"label": str, "horizon": str, "name": str})
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise UserError(f"cannot read scenario CSV {path}: {exc}") from None
        for col in ("label", "horizon"):
            if col not in df.columns:
                raise UserError(f"scenario CSV lacks column {col!r}")
        has_c, has_f = "anomaly_c" in df.columns, "anomaly_f" in df.columns
        if not (has_c or has_f):
            raise UserError("scenario CSV needs anomaly_c or anomaly_f")
        entries = []
        for i, row in df.iterrows():
            try:
                c = float(row["anomaly_c"]) if has_c and pd.notna(row["anomaly_c"]) else None
                f = float(row["anomaly_f"]) if has_f and pd.notna(row["anomaly_f"]) else None
            except ValueError:
                raise UserError(f"scenario CSV row {i + 2}: non-numeric anomaly") from None
            if c is None and f is None:
                raise UserError(f"scenario CSV row {i + 2}: no anomaly given")
            c = f / C_TO_F if c is None else c
            f = C_TO_F * c if f is None else f
            name = row["name"] if "name" in df.columns and pd.notna(row["name"]) else ""
            entries.append(Scenario(str(row["label"]), Horizon.parse(row["horizon"]), c, f, name))
        return cls(entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "horizon", "anomaly_c", "anomaly_f", "name"])
        for s in self.entries:
            w.writerow([s.label, s.horizon.value, repr(s.anomaly_c), repr(s.anomaly_f), s.name])
        return buf.getvalue()


@dataclass(frozen=True)
class MarginalEffect:
    point: float
    se: float
    ci95: tuple[float, float]
    evaluated_at: float


def _combination(fit: FitResult, weights: Mapping[str, float]) -> tuple[float, float]:
    """Point estimate and standard error of ``sum_k w_k beta_k``.

    A term dropped from the fit (absorbed or collinear) counts as a
    coefficient of zero with zero variance; a term the fit never had is an
    error.
    """
    idx, a = [], []
    for name, w in weights.items():
        if name in fit.names:
            idx.append(fit.index(name))
            a.append(w)
        elif not fit.is_dropped(name):
            raise UserError(f"term {name!r} is not in the fit (have: {', '.join(fit.names)})")
    if not idx:
        return 0.0, 0.0
    a = np.asarray(a, dtype=float)
    b = fit.coefficients[idx]
    V = fit.vcov[np.ix_(idx, idx)]
    # sequential sum so that e.g. b1 + 2 T* b2 is reproduced bit for bit
    point = 0.0
    for w, coef in zip(a, b):
        point += float(w) * float(coef)
    var = float(a @ V @ a)
    # rounding can leave a tiny negative on an exactly zero variance; anything
    # beyond that means the covariance is not positive semidefinite
    scale = float(np.abs(a) @ np.abs(V) @ np.abs(a))
    if var < 0:
        if var < -1e-12 * scale:
            raise NumericError(f"negative variance {var:.3g} for linear combination of {', '.join(weights)}")
        var = 0.0
    return point, float(np.sqrt(var))


def _effect(point: float, se: float, t_star: float) -> MarginalEffect:
    return MarginalEffect(point, se, (point - Z95 * se, point + Z95 * se), float(t_star))


def marginal_effect(fit: FitResult, linear_term: str, quad_term: str, t_star: float) -> MarginalEffect:
    """``d y / d T`` at ``T = t_star`` for ``y = b1 T + b2 T^2 + ...``."""
    point, se = _combination(fit, {linear_term: 1.0, quad_term: 2.0 * t_star})
    return _effect(point, se, t_star)


def cumulative_lag_effect(
    fit: FitResult, linear_lags: Sequence[str], quad_lags: Sequence[str], t_star: float
) -> MarginalEffect:
    """Sum over lags of the per-lag marginal effects, all evaluated at ``t_star``."""
    if not linear_lags or len(linear_lags) != len(quad_lags):
        raise UserError("need matching, non-empty lists of linear and squared lag terms")
    w: dict[str, float] = {}
    for lin, quad in zip(linear_lags, quad_lags):
        w[lin] = w.get(lin, 0.0) + 1.0
        w[quad] = w.get(quad, 0.0) + 2.0 * t_star
    point, se = _combination(fit, w)
    return _effect(point, se, t_star)


def group_margins(
    fit: FitResult,
    linear_term: str,
    quad_term: str,
    groups: Mapping[str, Optional[tuple[str, str]]],
    t_star: float,
) -> dict[str, MarginalEffect]:
    """Marginal effect for each group of a group-by-temperature interaction model.

    ``groups`` maps a group label to its ``(linear interaction, squared
    interaction)`` term names, or to None for the reference group.
    """
    out = {}
    for g, terms in groups.items():
        w = {linear_term: 1.0, quad_term: 2.0 * t_star}
        if terms is not None:
            lin_g, quad_g = terms
            for name in terms:
                if name not in fit.names and not fit.is_dropped(name):
                    raise UserError(f"group {g!r}: term {name!r} is not in the fit")
            w[lin_g] = w.get(lin_g, 0.0) + 1.0
            w[quad_g] = w.get(quad_g, 0.0) + 2.0 * t_star
        point, se = _combination(fit, w)
        out[g] = _effect(point, se, t_star)
    return out


def _known(fit: FitResult) -> list[str]:
    return list(fit.names) + [n for n, _ in fit.dropped]


def find_quadratic(fit: FitResult) -> tuple[str, str]:
    """First un-lagged plain term ``x`` whose square ``x^2`` is also in the fit."""
    names = _known(fit)
    for n in names:
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.]*", n) and f"{n}^2" in names:
            return n, f"{n}^2"
    raise UserError("fit has no pair of terms x and x^2; name them explicitly")


def lag_terms(fit: FitResult, linear_term: str, quad_term: str) -> tuple[list[str], list[str]]:
    """Contemporaneous plus consecutive lags ``lag(x,1) .. lag(x,L)`` present in the fit."""
    names = set(_known(fit))
    lin, quad = [linear_term], [quad_term]
    k = 1
    while f"lag({linear_term},{k})" in names and f"lag({quad_term},{k})" in names:
        lin.append(f"lag({linear_term},{k})")
        quad.append(f"lag({quad_term},{k})")
        k += 1
    return lin, quad


def find_groups(fit: FitResult, column: str, linear_term: str, quad_term: str) -> dict[str, Optional[tuple[str, str]]]:
    """Groups of ``column`` that carry both ``column[level]*x`` and ``column[level]*x^2``.

    The reference group is listed first under :data:`REFERENCE_GROUP`.
    """
    names = set(_known(fit))
    pat = re.compile(rf"{re.escape(column)}\[(.+)\]\*{re.escape(linear_term)}")
    groups: dict[str, Optional[tuple[str, str]]] = {REFERENCE_GROUP: None}
    for n in _known(fit):
        m = pat.fullmatch(n)
        if m:
            level = m.group(1)
            q = f"{column}[{level}]*{quad_term}"
            if q in names:
                groups[level] = (n, q)
    if len(groups) == 1:
        raise UserError(f"fit has no {column}[level]*{linear_term} interaction terms")
    return groups


@dataclass(frozen=True)
class ScenarioEffect:
    scenario: Scenario
    group: str
    effect: MarginalEffect


REPORT_COLUMNS = ["label", "horizon", "anomaly_f", "effect", "se", "ci_lo", "ci_hi", "group"]


def effects_at(
    fit: FitResult,
    t_star: float,
    mode: Mode | str = Mode.Contemporaneous,
    linear_term: Optional[str] = None,
    quad_term: Optional[str] = None,
    group_column: Optional[str] = None,
) -> list[tuple[str, MarginalEffect]]:
    """``(group, effect)`` pairs at one anomaly; the group is "" without ``group_column``.

    Term names default to the first ``x``/``x^2`` pair in the fit.
    """
    mode = Mode(mode) if not isinstance(mode, Mode) else mode
    if linear_term is None or quad_term is None:
        lin_d, quad_d = find_quadratic(fit)
        linear_term, quad_term = linear_term or lin_d, quad_term or quad_d
    if mode is Mode.CumulativeLag:
        if group_column:
            raise UserError("group margins are only available for the contemporaneous mode")
        lins, quads = lag_terms(fit, linear_term, quad_term)
        if len(lins) == 1:
            raise UserError(f"fit has no lag(...) terms for {linear_term}")
        return [("", cumulative_lag_effect(fit, lins, quads, t_star))]
    if group_column:
        groups = find_groups(fit, group_column, linear_term, quad_term)
        return list(group_margins(fit, linear_term, quad_term, groups, t_star).items())
    return [("", marginal_effect(fit, linear_term, quad_term, t_star))]


def scenario_report(
    fit: FitResult,
    scenarios: ScenarioTable,
    mode: Mode | str = Mode.Contemporaneous,
    linear_term: Optional[str] = None,
    quad_term: Optional[str] = None,
    group_column: Optional[str] = None,
) -> list[ScenarioEffect]:
    """Evaluate the chosen effect at every scenario's Fahrenheit anomaly."""
    rows = []
    for s in scenarios:
        for g, eff in effects_at(fit, s.anomaly_f, mode, linear_term, quad_term, group_column):
            rows.append(ScenarioEffect(s, g, eff))
    return rows


def report_frame(rows: Sequence[ScenarioEffect]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (
                r.scenario.label,
                r.scenario.horizon.value,
                r.scenario.anomaly_f,
                r.effect.point,
                r.effect.se,
                r.effect.ci95[0],
                r.effect.ci95[1],
                r.group,
            )
            for r in rows
        ],
        columns=REPORT_COLUMNS,
    )
