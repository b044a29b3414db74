"""Time the compiled and NumPy absorption kernels on synthetic county-year panels.

    python3 benchmarks/bench_absorb.py --counties 200 1000 3000 --years 24 --repeat 3
"""

import argparse
import time

import numpy as np

from agrilend.panel import Absorber, backend
from agrilend.panel import _fallback


def make_absorber(rng, n_counties, n_years, n_regions, frac, trend_degree):
    county = np.repeat(np.arange(n_counties), n_years)
    year = np.tile(np.arange(n_years), n_counties)
    keep = rng.random(county.size) < frac
    county, year = county[keep], year[keep]
    region = rng.integers(0, n_regions, n_counties)[county]
    ry = region * n_years + year
    _, ry = np.unique(ry, return_inverse=True)
    _, yr = np.unique(year, return_inverse=True)
    effects = [("county", county), ("year", yr), ("region*year", ry)]
    trend = ("county", county, year.astype(float), trend_degree) if trend_degree else None
    return Absorber(county.size, effects, trend)


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--counties", type=int, nargs="+", default=[200, 1000, 3000])
    ap.add_argument("--years", type=int, default=24)
    ap.add_argument("--regions", type=int, default=9)
    ap.add_argument("--frac", type=float, default=0.9, help="share of county-years observed")
    ap.add_argument("--trend", type=int, default=1, choices=[0, 1, 2])
    ap.add_argument("--columns", type=int, default=3, help="columns to residualise")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if backend.compiled is None:
        print("compiled kernels not built; only the NumPy fallback is timed")
    print(f"{'counties':>8} {'rows':>8} {'sweeps':>7} {'numpy s':>9} {'cython s':>9} {'speedup':>8} {'max |diff|':>11}")
    rng = np.random.default_rng(args.seed)
    for n in args.counties:
        ab = make_absorber(rng, n, args.years, args.regions, args.frac, args.trend)
        M = rng.normal(size=(ab.n, args.columns))
        t_np, (r_np, conv) = best_of(lambda: ab.residualize(M, kernels=_fallback), args.repeat)
        sweeps = max(it for it, _ in conv.per_column)
        if backend.compiled is not None:
            t_cy, (r_cy, _) = best_of(lambda: ab.residualize(M, kernels=backend.compiled), args.repeat)
            diff = float(np.max(np.abs(r_np - r_cy)))
            print(f"{n:>8} {ab.n:>8} {sweeps:>7} {t_np:>9.3f} {t_cy:>9.3f} {t_np / t_cy:>7.1f}x {diff:>11.1e}")
        else:
            print(f"{n:>8} {ab.n:>8} {sweeps:>7} {t_np:>9.3f} {'-':>9} {'-':>8} {'-':>11}")


if __name__ == "__main__":
    main()
