"""Least squares on the absorbed system with cluster-robust (CR1) covariance."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from ..errors import UserError
from .absorb import DEFAULT_MAX_SWEEPS, DEFAULT_TOL, Absorber, Convergence
from .design import Design, PanelDataset, build_design
from .spec import RegressionSpec

PIVOT_TOL = 1e-10
# a regressor keeping less than this share of its norm after absorption is
# treated as spanned by the fixed effects
ABSORBED_TOL = 1e-6


@dataclass
class AbsorbedSystem:
    y: np.ndarray
    X: np.ndarray  # kept columns only
    residuals: np.ndarray
    absorber: Optional[Absorber]
    design: Design


@dataclass
class FitResult:
    names: list[str]
    coefficients: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_clusters: int
    dof_absorbed: int
    dof_exact: bool
    within_r2: float
    convergence: tuple[int, float]
    dropped: list[tuple[str, str]] = field(default_factory=list)
    n_dropped_rows: int = 0
    outcome: str = ""
    cluster: str = ""
    spec_text: str = ""
    system: Optional[AbsorbedSystem] = field(default=None, repr=False, compare=False)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.index(name)])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def is_dropped(self, name: str) -> bool:
        return any(n == name for n, _ in self.dropped)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": dict(zip(self.names, map(float, self.coefficients))),
            "vcov": [float(v) for v in self.vcov.ravel()],
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "dof_absorbed": self.dof_absorbed,
            "dof_absorbed_exact": self.dof_exact,
            "within_r2": self.within_r2,
            "convergence": {"iterations": self.convergence[0], "final_change": self.convergence[1]},
            "dropped": [{"name": n, "reason": r} for n, r in self.dropped],
            "n_dropped_rows": self.n_dropped_rows,
            "outcome": self.outcome,
            "cluster": self.cluster,
            "spec": self.spec_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        try:
            names = list(d["names"])
            k = len(names)
            coefs = np.array([d["coefficients"][n] for n in names], dtype=float)
            vcov = np.array(d["vcov"], dtype=float).reshape(k, k)
            conv = d.get("convergence", {})
            return cls(
                names=names,
                coefficients=coefs,
                vcov=vcov,
                n_obs=int(d["n_obs"]),
                n_clusters=int(d["n_clusters"]),
                dof_absorbed=int(d.get("dof_absorbed", 0)),
                dof_exact=bool(d.get("dof_absorbed_exact", False)),
                within_r2=float(d.get("within_r2", float("nan"))),
                convergence=(int(conv.get("iterations", 0)), float(conv.get("final_change", 0.0))),
                dropped=[(x["name"], x["reason"]) for x in d.get("dropped", [])],
                n_dropped_rows=int(d.get("n_dropped_rows", 0)),
                outcome=d.get("outcome", ""),
                cluster=d.get("cluster", ""),
                spec_text=d.get("spec", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise UserError(f"malformed fit record: {exc}") from None

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2)


def _ordered_rank_reveal(X: np.ndarray, tol: float = PIVOT_TOL) -> np.ndarray:
    """Keep-mask that drops columns, in order, spanned by earlier ones.

    Columns are scaled to unit norm; column j is dropped when the diagonal
    of the unpivoted QR factor falls below ``tol`` times the largest one.
    """
    norms = np.linalg.norm(X, axis=0)
    keep = norms > 0
    if not keep.any():
        return keep
    Xs = X[:, keep] / norms[keep]
    r = np.abs(np.diag(scipy.linalg.qr(Xs, mode="r")[0]))
    sub = r > tol * r.max()
    keep[np.flatnonzero(keep)] = sub
    return keep


def _default_cluster(data: PanelDataset, spec: RegressionSpec) -> str:
    if spec.cluster is not None:
        return spec.cluster
    return "county" if "county" in data.columns else spec.unit


def fit(
    data: PanelDataset,
    spec: RegressionSpec,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    kernels=None,
) -> FitResult:
    """Estimate ``spec`` on ``data``.

    Without absorbed effects or trends an intercept ``_cons`` is added.
    Raises :class:`~agrilend.errors.ConvergenceError` when absorption hits
    ``max_sweeps``.
    """
    cluster = _default_cluster(data, spec)
    if cluster != spec.cluster:
        spec = dataclasses.replace(spec, cluster=cluster)
    design = build_design(data, spec)
    n = design.n
    if n == 0:
        raise UserError("no usable rows after dropping incomplete observations")

    names = list(design.names)
    X0 = design.X
    absorber = None
    trend = None
    if design.trend_degree:
        trend = (design.trend_name, design.trend_codes, design.trend_time, design.trend_degree)
    if design.effects or trend is not None:
        absorber = Absorber(n, design.effects, trend)
        M, conv = absorber.residualize(np.column_stack([design.y, X0]), tol, max_sweeps, kernels)
        y, X = M[:, 0], M[:, 1:]
        dof_abs, dof_exact = absorber.dof()
        tss = float(y @ y)
    else:
        X0 = np.column_stack([X0, np.ones(n)])
        names.append("_cons")
        y, X = design.y.copy(), X0.copy()
        conv = Convergence(0, 0.0, True)
        dof_abs, dof_exact = 0, True
        tss = float(np.sum((y - y.mean()) ** 2))

    dropped = []
    before = np.linalg.norm(X0, axis=0)
    after = np.linalg.norm(X, axis=0)
    spanned = after <= ABSORBED_TOL * before
    for j in np.flatnonzero(spanned):
        dropped.append((names[j], "empty" if before[j] == 0 else "absorbed by fixed effects"))
    keep = ~spanned
    sub = _ordered_rank_reveal(X[:, keep])
    for j in np.flatnonzero(keep)[~sub]:
        dropped.append((names[j], "collinear"))
    keep[np.flatnonzero(keep)] = sub
    if not keep.any():
        raise UserError("all regressors are collinear with the fixed effects or each other")
    dropped.sort(key=lambda d: names.index(d[0]))

    Xk = X[:, keep]
    kept_names = [nm for nm, k in zip(names, keep) if k]
    Q, R = scipy.linalg.qr(Xk, mode="economic")
    beta = scipy.linalg.solve_triangular(R, Q.T @ y)
    e = y - Xk @ beta
    Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    bread = Rinv @ Rinv.T

    if cluster:
        cl = design.clusters
        G = int(cl.max()) + 1
    else:
        cl = np.arange(n)
        G = n
    if G < 2:
        raise UserError(f"need at least 2 clusters, found {G}")
    scores = Xk * e[:, None]
    S = np.zeros((G, Xk.shape[1]))
    np.add.at(S, cl, scores)
    meat = S.T @ S
    k_eff = Xk.shape[1] + dof_abs
    if n - k_eff <= 0:
        raise UserError(f"not enough observations ({n}) for {k_eff} parameters")
    c = (G / (G - 1)) * ((n - 1) / (n - k_eff))
    V = c * bread @ meat @ bread
    V = 0.5 * (V + V.T)

    rss = float(e @ e)
    result = FitResult(
        names=kept_names,
        coefficients=beta,
        vcov=V,
        n_obs=n,
        n_clusters=G,
        dof_absorbed=dof_abs,
        dof_exact=dof_exact,
        within_r2=1.0 - rss / tss if tss > 0 else float("nan"),
        convergence=(conv.iterations, conv.final_change),
        dropped=dropped,
        n_dropped_rows=design.n_dropped,
        outcome=spec.outcome,
        cluster=cluster or "",
        spec_text=spec.to_text(),
    )
    result.system = AbsorbedSystem(y=y, X=Xk, residuals=e, absorber=absorber, design=design)
    return result


@dataclass
class Diagnostics:
    block_violation: dict[str, float]
    max_violation: float
    max_abs_xte: float
    xte_relative: float

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation < tol


def residual_diagnostics(fit_result: FitResult, system: Optional[AbsorbedSystem] = None) -> Diagnostics:
    """Orthogonality of the residuals to each absorbed block and to the regressors.

    A block's violation is the norm of the residuals' component inside the
    block relative to the residual norm.
    """
    system = system or fit_result.system
    if system is None:
        raise UserError("diagnostics need the absorbed system; refit in this session")
    e = system.residuals
    enorm = float(np.linalg.norm(e)) or 1.0
    viol = {}
    if system.absorber is not None:
        for b, name in enumerate(system.absorber.names):
            viol[name] = float(np.linalg.norm(system.absorber.project_block(e, b))) / enorm
    xte = system.X.T @ e
    max_xte = float(np.max(np.abs(xte))) if xte.size else 0.0
    xnorm = float(np.linalg.norm(system.X))
    return Diagnostics(
        block_violation=viol,
        max_violation=max(viol.values(), default=0.0),
        max_abs_xte=max_xte,
        xte_relative=max_xte / (xnorm * enorm) if xnorm > 0 else 0.0,
    )
