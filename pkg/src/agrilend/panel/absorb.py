"""Fixed-effect absorption by the method of alternating projections.

Each absorbed block is reduced to group codes and a per-row orthonormal
basis.  A categorical effect has the single basis column ``1/sqrt(n_g)``;
unit-specific polynomial trends of degree d have up to d+1 columns per
unit, orthonormalised within the unit.  One sweep applies the residual
maker of every block in turn; sweeps repeat until the largest entry change,
relative to the column's starting max-abs, falls below ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import ConvergenceError, UserError
from . import backend

DEFAULT_TOL = 1e-8
DEFAULT_MAX_SWEEPS = 10_000
# a trend basis column is dropped inside a unit when Gram-Schmidt leaves less
# than this fraction of sqrt(n_g)
_BASIS_DROP = 1e-8
# below these sizes the absorbed rank is computed exactly by pivoted QR
EXACT_RANK_COLUMNS = 2000
EXACT_RANK_CELLS = 20_000_000
_RANK_TOL = 1e-10


@dataclass
class Convergence:
    iterations: int
    final_change: float
    converged: bool
    per_column: list[tuple[int, float]] = field(default_factory=list)
    history: Optional[list[np.ndarray]] = None


def _group_orthonormal(codes: np.ndarray, n_groups: int, B: np.ndarray):
    """Orthonormalise the columns of ``B`` within each group (twice-applied MGS).

    Returns the basis (zero columns where a group is rank deficient) and the
    rank of every group.
    """
    n, p = B.shape
    Q = np.zeros((n, p))
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    floor = _BASIS_DROP * np.sqrt(counts)
    rank = np.zeros(n_groups, dtype=int)
    for j in range(p):
        v = B[:, j].astype(float).copy()
        for _ in range(2):
            for k in range(j):
                coef = np.bincount(codes, weights=Q[:, k] * v, minlength=n_groups)
                v -= Q[:, k] * coef[codes]
        norm = np.sqrt(np.bincount(codes, weights=v * v, minlength=n_groups))
        keep = norm > floor
        safe = np.where(keep, norm, 1.0)
        Q[:, j] = np.where(keep[codes], v / safe[codes], 0.0)
        rank += keep
    return Q, rank


def _component_labels(a: np.ndarray, b: np.ndarray) -> tuple[int, np.ndarray]:
    """Connected components of the bipartite graph linking levels of two effects.

    Returns the count and the component of every level of ``a``.
    """
    na, nb = int(a.max()) + 1, int(b.max()) + 1
    g = coo_matrix((np.ones(len(a)), (a, b + na)), shape=(na + nb, na + nb))
    n, labels = connected_components(g, directed=False)
    return int(n), labels[:na]


def _components(a: np.ndarray, b: np.ndarray) -> int:
    return _component_labels(a, b)[0]


def _nests(coarse: np.ndarray, fine: np.ndarray) -> bool:
    """True when every level of ``fine`` lies inside a single level of ``coarse``."""
    nf = int(fine.max()) + 1
    first = np.full(nf, -1, dtype=np.intp)
    first[fine[::-1]] = coarse[::-1]
    return bool(np.all(first[fine] == coarse))


def _drop_spanned(codes: list[np.ndarray]) -> list[np.ndarray]:
    """Remove effects spanned by a finer one (keeping one copy of duplicates)."""
    keep = []
    for i, c in enumerate(codes):
        spanned = False
        for j, d in enumerate(codes):
            if i == j or not _nests(c, d):
                continue
            # equal partitions nest both ways; keep the first
            if _nests(d, c) and j > i:
                continue
            spanned = True
            break
        if not spanned:
            keep.append(c)
    return keep


class Absorber:
    """Residual maker for a set of categorical effects and unit trends.

    ``effects`` is a list of ``(name, codes)``.  ``trend`` is
    ``(name, codes, time, degree)`` or None.
    """

    def __init__(
        self,
        n: int,
        effects: Sequence[tuple[str, np.ndarray]] = (),
        trend: Optional[tuple[str, np.ndarray, np.ndarray, int]] = None,
    ):
        blocks_codes, blocks_Q, groups, names = [], [], [], []
        for name, codes in effects:
            codes = np.asarray(codes, dtype=np.intp)
            m = int(codes.max()) + 1 if n else 0
            cnt = np.bincount(codes, minlength=m).astype(float)
            blocks_codes.append(codes)
            blocks_Q.append((1.0 / np.sqrt(cnt))[codes][:, None])
            groups.append(m)
            names.append(name)
        self.trend_rank = None
        if trend is not None and trend[3] > 0:
            name, codes, t, degree = trend
            codes = np.asarray(codes, dtype=np.intp)
            m = int(codes.max()) + 1 if n else 0
            t = np.asarray(t, dtype=float)
            # centre and scale time within the unit; the spanned space is unchanged
            cnt = np.bincount(codes, minlength=m)
            mean = np.bincount(codes, weights=t, minlength=m) / np.maximum(cnt, 1)
            tc = t - mean[codes]
            half = np.zeros(m)
            np.maximum.at(half, codes, np.abs(tc))
            half[half == 0] = 1.0
            tc = tc / half[codes]
            B = np.column_stack([tc**d for d in range(degree + 1)])
            Q, rank = _group_orthonormal(codes, m, B)
            blocks_codes.append(codes)
            blocks_Q.append(Q)
            groups.append(m)
            names.append(f"{name} trend^{degree}")
            self.trend_rank = rank
            self._trend_codes = codes
        if not blocks_codes:
            raise UserError("nothing to absorb: give at least one effect or a unit trend")
        self.n = n
        self.names = names
        self.codes = np.ascontiguousarray(np.vstack(blocks_codes), dtype=np.intp)
        widths = [q.shape[1] for q in blocks_Q]
        self.offsets = np.concatenate([[0], np.cumsum(widths)]).astype(np.intp)
        self.Q = np.ascontiguousarray(np.hstack(blocks_Q))
        self.n_groups = np.asarray(groups, dtype=np.intp)
        self._effect_codes = [np.asarray(c, dtype=np.intp) for _, c in effects]
        self._trend_meta = trend

    @property
    def n_blocks(self) -> int:
        return len(self.names)

    def dof(self) -> tuple[int, bool]:
        """Parameters absorbed, and whether the count is exact.

        Small problems get the exact numerical rank of the absorbed basis;
        larger ones the combinatorial count of :meth:`dof_bound`.
        """
        n_cols = int(sum(g * (self.offsets[b + 1] - self.offsets[b]) for b, g in enumerate(self.n_groups)))
        if n_cols <= EXACT_RANK_COLUMNS and n_cols * self.n <= EXACT_RANK_CELLS:
            return self._dense_rank(n_cols), True
        return self.dof_bound()

    def dof_bound(self) -> tuple[int, bool]:
        """Combinatorial count of absorbed parameters; never below the true rank.

        An effect that is coarser than another (each level of the finer one
        falls inside a single level of it) is spanned by it and adds nothing.
        The remaining categorical effects contribute their levels minus
        redundancies with earlier effects, taken as the largest pairwise
        connected-component count; exact for up to two such effects.  Trends
        add ``rank - 1`` per unit, plus one per unit if the unit is not
        itself absorbed, minus the overlap with effects that determine time
        (see :meth:`_trend_overlap`).
        """
        codes = list(self._effect_codes)
        if self.trend_rank is not None:
            codes.append(self._trend_codes)
        codes = _drop_spanned(codes)
        total = 0
        for i, c in enumerate(codes):
            total += int(c.max()) + 1
            if i:
                total -= max(_components(prev, c) for prev in codes[:i])
        exact = len(codes) <= 2
        if self.trend_rank is not None:
            total += int(np.sum(np.maximum(self.trend_rank - 1, 0))) - self._trend_overlap(codes)
            # only the trend unit's own partition is left: blocks are per unit
            exact = len(codes) == 1 and _nests(self._trend_codes, codes[0])
        return total, exact

    def _dense_rank(self, n_cols: int) -> int:
        # rank of the explicit basis via its Gram matrix, which is small and
        # cheap to factor; the tolerance applies to squared singular values
        rows, cols, vals = [], [], []
        col0 = 0
        for b, groups in enumerate(self.n_groups):
            lo, hi = self.offsets[b], self.offsets[b + 1]
            for j in range(hi - lo):
                rows.append(np.arange(self.n))
                cols.append(col0 + self.codes[b] * (hi - lo) + j)
                vals.append(self.Q[:, lo + j])
            col0 += groups * (hi - lo)
        B = coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, n_cols)
        )
        B = B.tocsr()
        G = (B.T @ B).toarray()
        r = np.abs(np.diag(scipy.linalg.qr(G, mode="r", pivoting=True)[0]))
        return int(np.sum(r > _RANK_TOL * r[0])) if r.size else 0

    def _trend_overlap(self, codes: list[np.ndarray]) -> int:
        """Dimensions shared by the unit trends and a time-determining effect.

        If effect E fixes the time period, then for any set S of units that
        is a union of components of the unit-E graph, ``t^d 1_S`` lies in
        both spans.  Each such component whose units all carry a degree-d
        trend gives one shared dimension per degree; the best single E is
        used.
        """
        _, t, degree = self._trend_meta[1:]
        tcodes = np.unique(np.asarray(t, dtype=float), return_inverse=True)[1].astype(np.intp)
        unit = self._trend_codes
        best = 0
        for e in codes:
            if e is unit or not _nests(tcodes, e):
                continue
            _, labels = _component_labels(unit, e)
            shared = 0
            for d in range(1, degree + 1):
                ok = np.ones(labels.max() + 1, dtype=bool)
                np.logical_and.at(ok, labels, self.trend_rank > d)
                shared += int(ok.sum())
            best = max(best, shared)
        return best

    def residualize(
        self,
        M: np.ndarray,
        tol: float = DEFAULT_TOL,
        max_sweeps: int = DEFAULT_MAX_SWEEPS,
        kernels=None,
        record_history: bool = False,
        raise_on_failure: bool = True,
    ) -> tuple[np.ndarray, Convergence]:
        """Residuals of every column of ``M`` (n x k) after absorption.

        Columns are iterated independently, each until its own change is
        below ``tol``, so the result does not depend on how columns are
        batched.
        """
        kern = kernels or backend.kernels
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[:, None]
        out = np.ascontiguousarray(M.T).copy()
        per_col = []
        hist = [] if record_history else None
        for c in range(out.shape[0]):
            h = np.zeros(max_sweeps if record_history else 0)
            sweeps, change = kern.map_column(
                out[c], self.codes, self.Q, self.offsets, self.n_groups, tol, max_sweeps, h
            )
            per_col.append((int(sweeps), float(change)))
            if record_history:
                hist.append(h[:sweeps].copy())
        iterations = max((s for s, _ in per_col), default=0)
        final = max((ch for _, ch in per_col), default=0.0)
        conv = Convergence(iterations, final, final < tol, per_col, hist)
        if raise_on_failure and not conv.converged:
            raise ConvergenceError(
                "fixed-effect absorption did not converge", iterations=iterations, last_change=final
            )
        return out.T.copy(), conv

    def project_block(self, x: np.ndarray, block: int, kernels=None) -> np.ndarray:
        """Component of ``x`` inside one absorbed block (exact, one pass)."""
        kern = kernels or backend.kernels
        r = np.ascontiguousarray(x, dtype=float).copy()
        kern.project_out(r, self.codes, self.Q, self.offsets, self.n_groups, block)
        return np.asarray(x, dtype=float) - r


def absorb(M, effects=(), trend=None, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS, kernels=None):
    """Convenience wrapper: build an :class:`Absorber` and residualise ``M``."""
    M = np.asarray(M, dtype=float)
    return Absorber(M.shape[0], effects, trend).residualize(M, tol, max_sweeps, kernels)
