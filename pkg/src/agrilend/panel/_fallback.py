"""Pure-NumPy versions of the kernels in ``_kernels.pyx`` (same signatures)."""

import numpy as np


def project_out(x, codes, Q, offsets, n_groups, block):
    lo, hi = offsets[block], offsets[block + 1]
    g = codes[block]
    m = n_groups[block]
    Qb = Q[:, lo:hi]
    coef = np.empty((m, hi - lo))
    for j in range(hi - lo):
        coef[:, j] = np.bincount(g, weights=Qb[:, j] * x, minlength=m)
    x -= np.einsum("ij,ij->i", Qb, coef[g])


def map_column(x, codes, Q, offsets, n_groups, tol, max_sweeps, history):
    n = x.shape[0]
    n_blocks = codes.shape[0]
    if n == 0 or n_blocks == 0:
        return 0, 0.0
    scale = float(np.max(np.abs(x))) or 1.0
    sweep = 0
    change = 0.0
    while sweep < max_sweeps:
        prev = x.copy()
        for b in range(n_blocks):
            project_out(x, codes, Q, offsets, n_groups, b)
        change = float(np.max(np.abs(x - prev))) / scale
        if sweep < history.shape[0]:
            history[sweep] = float(x @ x)
        sweep += 1
        if change < tol:
            break
    return sweep, change
