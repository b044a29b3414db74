"""Synthetic county-year lending panels with planted temperature responses.

Outcome ``o`` for county c in region r and year t is

    y = b1 T + b2 T^2 + sum_k (g_k T[t-k] + d_k T[t-k]^2)
        + (group interactions) + a_c + l_t + m_rt + s_c (t - tbar) + noise

with ``T`` an AR(1) anomaly within each county.  When target moments are
given, ``y`` is mapped affinely onto them and the truth record carries the
correspondingly scaled coefficients.  Every county draws from its own
stream keyed on ``(seed, county)``, so output does not depend on the number
of workers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .errors import UserError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TEMPERATURE = "tmax"
BANK_LEVELS = ("small", "medium", "large")
INCOME_LEVELS = ("low", "moderate", "middle", "upper")


@dataclass
class OutcomeSpec:
    beta: tuple[float, float]  # linear, squared
    noise_sd: float = 1.0
    lags_linear: tuple[float, ...] = ()
    lags_quad: tuple[float, ...] = ()
    # level -> coefficient on level*T (and level*T^2); the first level is the reference
    group_linear: dict[str, float] = field(default_factory=dict)
    group_quad: dict[str, float] = field(default_factory=dict)
    target: Optional[tuple[float, float]] = None  # (mean, sd)

    def __post_init__(self):
        self.beta = tuple(float(b) for b in self.beta)
        if len(self.beta) != 2:
            raise UserError("beta needs a linear and a squared coefficient")
        self.lags_linear = tuple(map(float, self.lags_linear))
        self.lags_quad = tuple(map(float, self.lags_quad))
        n = max(len(self.lags_linear), len(self.lags_quad))
        self.lags_linear += (0.0,) * (n - len(self.lags_linear))
        self.lags_quad += (0.0,) * (n - len(self.lags_quad))
        if not self.noise_sd >= 0:
            raise UserError("noise_sd must be non-negative")
        if self.target is not None:
            self.target = (float(self.target[0]), float(self.target[1]))
            if not self.target[1] > 0:
                raise UserError("target sd must be positive")

    @property
    def n_lags(self) -> int:
        return len(self.lags_linear)


def default_outcomes() -> dict[str, OutcomeSpec]:
    # targets: mean and sd of the four lending outcomes in the county panel
    return {
        "loans_large_n": OutcomeSpec((0.4, -0.05), 1.0, target=(17.07, 26.69)),
        "loans_large_amt": OutcomeSpec((0.3, -0.02), 1.0, target=(1080.59, 2226.96)),
        "loans_small_n": OutcomeSpec((-0.6, -0.08), 1.0, target=(52.87, 81.44)),
        "loans_small_amt": OutcomeSpec((-0.5, -0.06), 1.0, target=(2890.80, 4867.74)),
    }


@dataclass
class SynthConfig:
    n_counties: int = 200
    n_years: int = 24
    start_year: int = 1996
    n_regions: int = 4
    n_income_groups: int = 1
    n_banks: int = 1  # bank size classes; more than one adds a bank_size column
    interaction_column: str = "bank_size"
    ar1: float = 0.3
    anomaly_mean: float = 0.5
    anomaly_sd: float = 1.5
    fe_sd: dict[str, float] = field(
        default_factory=lambda: {"county": 2.0, "year": 0.5, "region_year": 0.3, "trend": 0.05}
    )
    outcomes: dict[str, OutcomeSpec] = field(default_factory=default_outcomes)
    seed: int = 0

    def __post_init__(self):
        for name in ("n_counties", "n_years", "n_regions", "n_income_groups", "n_banks"):
            if int(getattr(self, name)) < 1:
                raise UserError(f"{name} must be at least 1")
        if not -1 < self.ar1 < 1:
            raise UserError("ar1 must lie in (-1, 1)")
        if not self.anomaly_sd >= 0:
            raise UserError("anomaly_sd must be non-negative")
        for k, v in self.fe_sd.items():
            if k not in ("county", "year", "region_year", "trend"):
                raise UserError(f"unknown fe_sd entry {k!r}")
            if not v >= 0:
                raise UserError(f"fe_sd.{k} must be non-negative")
        if not self.outcomes:
            raise UserError("at least one outcome is required")
        levels = self.group_levels(self.interaction_column)
        for o, spec in self.outcomes.items():
            for lv in list(spec.group_linear) + list(spec.group_quad):
                if lv not in levels[1:]:
                    raise UserError(f"outcome {o}: {lv!r} is not a non-reference level of {self.interaction_column}")

    def group_levels(self, column: str) -> tuple[str, ...]:
        if column == "bank_size":
            return _levels(BANK_LEVELS, self.n_banks, "size")
        if column == "income":
            return _levels(INCOME_LEVELS, self.n_income_groups, "income")
        raise UserError(f"unknown group column {column!r}")

    @property
    def max_lag(self) -> int:
        return max(s.n_lags for s in self.outcomes.values())

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        anomaly = d.pop("anomaly", {})
        kw = {}
        for k in ("ar1", "mean", "sd"):
            if k in anomaly:
                kw["ar1" if k == "ar1" else f"anomaly_{k}"] = float(anomaly[k])
        if "outcomes" in d:
            outs = {}
            for name, o in d.pop("outcomes").items():
                o = dict(o)
                try:
                    outs[name] = OutcomeSpec(
                        beta=tuple(o.pop("beta")),
                        noise_sd=float(o.pop("noise_sd", 1.0)),
                        lags_linear=tuple(o.pop("lags_linear", ())),
                        lags_quad=tuple(o.pop("lags_quad", ())),
                        group_linear={k: float(v) for k, v in o.pop("group_linear", {}).items()},
                        group_quad={k: float(v) for k, v in o.pop("group_quad", {}).items()},
                        target=tuple(o.pop("target")) if "target" in o else None,
                    )
                except KeyError:
                    raise UserError(f"outcome {name}: beta is required") from None
                if o:
                    raise UserError(f"outcome {name}: unknown keys {', '.join(sorted(o))}")
            kw["outcomes"] = outs
        if "fe_sd" in d:
            fe = cls().fe_sd
            fe.update({k: float(v) for k, v in d.pop("fe_sd").items()})
            kw["fe_sd"] = fe
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UserError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw.update(d)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise UserError(f"bad synth config: {exc}") from None

    @classmethod
    def from_toml(cls, path) -> "SynthConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise UserError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise UserError(f"config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for o in d["outcomes"].values():
            o["beta"] = list(o["beta"])
            o["lags_linear"] = list(o["lags_linear"])
            o["lags_quad"] = list(o["lags_quad"])
            if o["target"] is not None:
                o["target"] = list(o["target"])
        return d


def _levels(names: tuple[str, ...], n: int, prefix: str) -> tuple[str, ...]:
    if n <= len(names):
        return names[:n]
    return tuple(f"{prefix}{k + 1}" for k in range(n))


@dataclass
class SynthResult:
    frame: pd.DataFrame
    truth: dict

    def to_csv(self) -> str:
        return self.frame.to_csv(index=False, lineterminator="\n")


def _county_draws(cfg: SynthConfig, c: int, n_total: int):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, c]))
    rho, sd = cfg.ar1, cfg.anomaly_sd
    u = rng.standard_normal(n_total)
    x = np.empty(n_total)
    x[0] = u[0]  # stationary start
    innov = np.sqrt(1.0 - rho * rho)
    for t in range(1, n_total):
        x[t] = rho * x[t - 1] + innov * u[t]
    T = cfg.anomaly_mean + sd * x
    region = int(rng.integers(cfg.n_regions))
    bank = int(rng.integers(cfg.n_banks))
    income = int(rng.integers(cfg.n_income_groups))
    per_outcome = {}
    for o in cfg.outcomes:
        a = rng.standard_normal() * cfg.fe_sd.get("county", 0.0)
        s = rng.standard_normal() * cfg.fe_sd.get("trend", 0.0)
        e = rng.standard_normal(cfg.n_years)
        per_outcome[o] = (a, s, e)
    return T, region, bank, income, per_outcome


def generate(cfg: SynthConfig, workers: int = 1) -> SynthResult:
    """Draw the panel and its truth record."""
    L = cfg.max_lag
    n_total = cfg.n_years + L
    C, Y = cfg.n_counties, cfg.n_years
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            draws = list(ex.map(lambda c: _county_draws(cfg, c, n_total), range(C)))
    else:
        draws = [_county_draws(cfg, c, n_total) for c in range(C)]

    grng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    year_fe = {o: grng.standard_normal(Y) * cfg.fe_sd.get("year", 0.0) for o in cfg.outcomes}
    ry_fe = {o: grng.standard_normal((cfg.n_regions, Y)) * cfg.fe_sd.get("region_year", 0.0) for o in cfg.outcomes}

    years = cfg.start_year + np.arange(Y)
    tc = np.arange(Y) - (Y - 1) / 2.0
    Tall = np.stack([d[0] for d in draws])  # C x (Y + L)
    T = Tall[:, L:]
    region = np.array([d[1] for d in draws])
    bank = np.array([d[2] for d in draws])
    income = np.array([d[3] for d in draws])
    group_idx = bank if cfg.interaction_column == "bank_size" else income
    group_levels = cfg.group_levels(cfg.interaction_column)

    frame = {
        "county": np.repeat(np.arange(1, C + 1), Y),
        "year": np.tile(years, C),
        "region": np.repeat(region + 1, Y),
    }
    if cfg.n_banks > 1:
        frame["bank_size"] = np.repeat(np.array(cfg.group_levels("bank_size"))[bank], Y)
    if cfg.n_income_groups > 1:
        frame["income"] = np.repeat(np.array(cfg.group_levels("income"))[income], Y)
    frame[TEMPERATURE] = T.ravel()

    truth = {"seed": cfg.seed, "temperature": TEMPERATURE, "outcomes": {}}
    for o, spec in cfg.outcomes.items():
        b1, b2 = spec.beta
        y = b1 * T + b2 * T**2
        raw = {TEMPERATURE: b1, f"{TEMPERATURE}^2": b2}
        for k in range(1, spec.n_lags + 1):
            Tk = Tall[:, L - k : L - k + Y]
            y += spec.lags_linear[k - 1] * Tk + spec.lags_quad[k - 1] * Tk**2
            raw[f"lag({TEMPERATURE},{k})"] = spec.lags_linear[k - 1]
            raw[f"lag({TEMPERATURE}^2,{k})"] = spec.lags_quad[k - 1]
        col = cfg.interaction_column
        for lv in group_levels[1:]:
            gl, gq = spec.group_linear.get(lv, 0.0), spec.group_quad.get(lv, 0.0)
            if gl or gq or spec.group_linear or spec.group_quad:
                ind = (group_idx == group_levels.index(lv)).astype(float)[:, None]
                y += ind * (gl * T + gq * T**2)
                raw[f"{col}[{lv}]*{TEMPERATURE}"] = gl
                raw[f"{col}[{lv}]*{TEMPERATURE}^2"] = gq
        a = np.array([d[4][o][0] for d in draws])[:, None]
        s = np.array([d[4][o][1] for d in draws])[:, None]
        e = np.stack([d[4][o][2] for d in draws])
        y += a + year_fe[o][None, :] + ry_fe[o][region] + s * tc[None, :] + spec.noise_sd * e

        shift, scale = 0.0, 1.0
        if spec.target is not None:
            m, sd = float(y.mean()), float(y.std(ddof=1))
            if sd == 0:
                raise UserError(f"outcome {o} has no variation to rescale")
            scale = spec.target[1] / sd
            shift = spec.target[0] - scale * m
            y = shift + scale * y
        frame[o] = y.ravel()
        truth["outcomes"][o] = {
            "coefficients": {k: scale * v for k, v in raw.items()},
            "planted": raw,
            "scale": scale,
            "shift": shift,
            "noise_sd": scale * spec.noise_sd,
        }
    return SynthResult(pd.DataFrame(frame), truth)


def config_digest(cfg: SynthConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()
