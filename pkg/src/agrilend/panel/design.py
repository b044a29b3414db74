"""Panel datasets and construction of design matrices from a spec."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from ..errors import UserError
from .spec import Factor, RegressionSpec


class PanelDataset:
    """Long-format observations keyed by ``(unit, time)``.

    The frame is copied on construction and sorted by ``(unit, time)``;
    downstream results therefore do not depend on the input row order.
    """

    def __init__(self, frame: pd.DataFrame, unit: str = "county", time: str = "year"):
        for col in (unit, time):
            if col not in frame.columns:
                raise UserError(f"panel has no column {col!r}")
        if frame[time].isna().any():
            raise UserError(f"time column {time!r} has missing values")
        if frame.duplicated([unit, time]).any():
            dup = frame.loc[frame.duplicated([unit, time]), [unit, time]].iloc[0].tolist()
            raise UserError(f"duplicate (unit, time) key {tuple(dup)}")
        self.unit = unit
        self.time = time
        self._frame = frame.sort_values([unit, time], kind="mergesort").reset_index(drop=True)

    @classmethod
    def from_csv(cls, path, unit: str = "county", time: str = "year") -> "PanelDataset":
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError) as exc:
            raise UserError(f"cannot read panel CSV {path}: {exc}") from None
        return cls(frame, unit, time)

    @property
    def frame(self) -> pd.DataFrame:
        """A copy; the dataset itself never changes."""
        return self._frame.copy()

    def __len__(self):
        return len(self._frame)

    @property
    def columns(self):
        return list(self._frame.columns)


@dataclass
class Design:
    """Outcome, regressors and absorbed-effect inputs for the complete rows."""

    y: np.ndarray
    X: np.ndarray
    names: list[str]
    clusters: Optional[np.ndarray]
    rows: pd.DataFrame  # (unit, time) of every kept row, in design order
    effects: list[tuple[str, np.ndarray]] = field(default_factory=list)
    trend_codes: Optional[np.ndarray] = None
    trend_time: Optional[np.ndarray] = None
    trend_degree: int = 0
    trend_name: str = ""
    n_dropped: int = 0

    @property
    def n(self) -> int:
        return len(self.y)


def _codes(frame: pd.DataFrame, cols) -> np.ndarray:
    return frame.groupby(list(cols), sort=True, dropna=False).ngroup().to_numpy(np.intp)


def _base_values(frame: pd.DataFrame, f: Factor) -> pd.Series:
    col = frame[f.column]
    if f.level is not None:
        out = (col.astype(str) == f.level).astype(float)
        out[col.isna()] = np.nan
        return out
    if not pd.api.types.is_numeric_dtype(col):
        raise UserError(f"column {f.column!r} is not numeric; use {f.column}[level] for indicators")
    return col.astype(float) ** f.power


def _factor_values(frame: pd.DataFrame, f: Factor, unit: str, time: str) -> np.ndarray:
    base = _base_values(frame, f)
    if not f.lag:
        return base.to_numpy(float)
    keyed = pd.Series(base.to_numpy(float), index=pd.MultiIndex.from_arrays([frame[unit], frame[time]]))
    want = pd.MultiIndex.from_arrays([frame[unit], frame[time] - f.lag])
    return keyed.reindex(want).to_numpy(float)


def build_design(data: PanelDataset, spec: RegressionSpec) -> Design:
    """Materialise the spec on ``data`` and drop incomplete rows listwise.

    Lags look up ``time - k`` within the same unit, so a gap in a unit's
    record makes the lagged value missing and drops the row.
    """
    frame = data._frame
    unit, time = spec.unit, spec.time
    if (unit, time) != (data.unit, data.time):
        if frame.duplicated([unit, time]).any():
            raise UserError(f"({unit}, {time}) does not identify rows uniquely")
        frame = frame.sort_values([unit, time], kind="mergesort").reset_index(drop=True)
    missing = sorted(c for c in spec.columns() if c not in frame.columns)
    if missing:
        raise UserError(f"unknown column(s) in spec: {', '.join(missing)}")
    if not pd.api.types.is_numeric_dtype(frame[time]):
        raise UserError(f"time column {time!r} must be numeric")
    span = float(frame[time].max() - frame[time].min())
    for term in spec.regressors:
        if term.max_lag > span:
            raise UserError(f"lag depth {term.max_lag} in {term.name!r} exceeds the panel span {span:g}")

    y = frame[spec.outcome]
    if not pd.api.types.is_numeric_dtype(y):
        raise UserError(f"outcome {spec.outcome!r} is not numeric")
    cols = []
    for term in spec.regressors:
        v = np.ones(len(frame))
        for f in term.factors:
            v = v * _factor_values(frame, f, unit, time)
        cols.append(v)
    X = np.column_stack(cols) if cols else np.empty((len(frame), 0))
    yv = y.to_numpy(float)

    ok = np.isfinite(yv) & np.all(np.isfinite(X), axis=1)
    key_cols = set()
    for eff in spec.absorb:
        key_cols |= set(eff)
    if spec.trend_degree:
        key_cols.add(spec.trend_unit)
    if spec.cluster:
        key_cols.add(spec.cluster)
    for c in sorted(key_cols):
        ok &= frame[c].notna().to_numpy()

    kept = frame.loc[ok].reset_index(drop=True)
    design = Design(
        y=yv[ok],
        X=np.ascontiguousarray(X[ok]),
        names=spec.names,
        clusters=_codes(kept, [spec.cluster]) if spec.cluster else None,
        rows=kept[[unit, time]].copy(),
        n_dropped=int((~ok).sum()),
    )
    for eff in spec.absorb:
        design.effects.append(("*".join(eff), _codes(kept, eff)))
    if spec.trend_degree:
        design.trend_codes = _codes(kept, [spec.trend_unit])
        design.trend_time = kept[time].to_numpy(float)
        design.trend_degree = spec.trend_degree
        design.trend_name = spec.trend_unit
    return design
