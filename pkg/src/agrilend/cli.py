"""Command-line entry point: ``agrilend {anomaly,fit,margins,model,synth}``.

Exit status is 0 on success, 1 for bad input and 2 when a numerical method
fails to converge.  Every file written gets a sidecar
``<file>.manifest.json`` recording the command, input hashes, seed and
timestamps; JSON outputs also name their manifest.  The outputs themselves
carry no timestamps, so identical invocations write identical files.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from . import __version__
from .errors import AgrilendError, NumericError, SpecSyntaxError, UserError

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; here that status means non-convergence
    def error(self, message):
        raise UserError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    tool_version: str
    seed: Optional[int]
    inputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    outputs: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.name + ".manifest.json")


class _Run:
    def __init__(self, args, argv):
        self.args = args
        self.manifest = RunManifest(
            command=args.command,
            argv=list(argv),
            tool_version=__version__,
            seed=args.seed,
            started=_now(),
        )

    def read(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise UserError(f"input file not found: {path}")
        self.manifest.inputs[str(p)] = _sha256(p)
        return p

    def write_text(self, path, text: str) -> None:
        p = Path(path)
        try:
            p.write_text(text, encoding="utf-8", newline="")
        except OSError as exc:
            raise UserError(f"cannot write {path}: {exc}") from None
        self.manifest.outputs[str(p)] = hashlib.sha256(text.encode("utf-8")).hexdigest()

    def write_json(self, path, obj: dict) -> None:
        obj = dict(obj)
        obj["manifest"] = manifest_path(path).name
        self.write_text(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")

    def finish(self) -> None:
        self.manifest.finished = _now()
        for out in list(self.manifest.outputs):
            manifest_path(out).write_text(json.dumps(asdict(self.manifest), indent=2) + "\n")

    def info(self, msg: str) -> None:
        if not self.args.quiet:
            print(msg, file=sys.stderr)


def _emit(run: _Run, text: str, out: Optional[str]) -> None:
    if out:
        run.write_text(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_anomaly(run: _Run) -> int:
    from .anomaly import AnomalyConfig, Variable, anomaly_frame, parse_season, parse_window, series_from_frame

    a = run.args
    path = run.read(a.input)
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise UserError(f"cannot read climate CSV {path}: {exc}") from None
    cfg = AnomalyConfig(parse_window(a.window), parse_season(a.season))
    try:
        var = Variable(a.variable)
    except ValueError:
        raise UserError(f"unknown variable {a.variable!r} (TMax, TMin or Precip)") from None
    run.manifest.config = {"window": cfg.baseline_window.value, "season": cfg.season.value, "variable": var.value}
    out = anomaly_frame(series_from_frame(df, var), cfg)
    _emit(run, out.to_csv(index=False, lineterminator="\n"), a.out)
    run.info(f"{len(out)} county-years, {int(out['anomaly'].isna().sum())} flagged missing")
    return EXIT_OK


def _print_fit(res, file=sys.stdout) -> None:
    w = max(len(n) for n in res.names)
    print(f"{'term':<{w}}  {'coef':>12}  {'se':>12}  {'t':>8}", file=file)
    for n, b, s in zip(res.names, res.coefficients, res.se):
        t = b / s if s > 0 else float("nan")
        print(f"{n:<{w}}  {b:12.6g}  {s:12.6g}  {t:8.3f}", file=file)
    print(
        f"n={res.n_obs} clusters={res.n_clusters} dof_absorbed={res.dof_absorbed}"
        f"{'' if res.dof_exact else ' (approx)'} within_r2={res.within_r2:.4f}"
        f" sweeps={res.convergence[0]}",
        file=file,
    )
    for n, why in res.dropped:
        print(f"dropped {n}: {why}", file=file)


def cmd_fit(run: _Run) -> int:
    from .panel import PanelDataset, backend, fit, parse_spec

    a = run.args
    spec_path = run.read(a.spec)
    spec = parse_spec(spec_path.read_text(encoding="utf-8"))
    if a.cluster is not None:
        import dataclasses

        spec = dataclasses.replace(spec, cluster="" if a.cluster == "none" else a.cluster)
    data = PanelDataset.from_csv(run.read(a.data), spec.unit, spec.time)
    kern = backend.get(a.backend)
    res = fit(data, spec, tol=a.tol, max_sweeps=a.max_sweeps, kernels=kern)
    run.manifest.config = {"spec": spec.to_text(), "tol": a.tol, "max_sweeps": a.max_sweeps}
    record = res.to_dict()
    if a.out:
        run.write_json(a.out, record)
    if a.json:
        print(json.dumps(record, indent=2))
    elif not a.quiet or not a.out:
        _print_fit(res)
    return EXIT_OK


def cmd_margins(run: _Run) -> int:
    from .effects import REPORT_COLUMNS, Mode, ScenarioTable, effects_at, report_frame, scenario_report
    from .panel import FitResult

    a = run.args
    try:
        record = json.loads(run.read(a.fit).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UserError(f"{a.fit} is not valid JSON: {exc}") from None
    res = FitResult.from_dict(record)
    mode = {"now": Mode.Contemporaneous, "cumlag": Mode.CumulativeLag}[a.mode]
    if a.t_star is not None:
        effects = effects_at(res, a.t_star, mode, a.linear, a.quad, a.groups)
        frame = pd.DataFrame(
            [("custom", "", a.t_star, e.point, e.se, e.ci95[0], e.ci95[1], g) for g, e in effects],
            columns=REPORT_COLUMNS,
        )
    else:
        table = ScenarioTable.from_csv(run.read(a.scenarios)) if a.scenarios else ScenarioTable.default()
        frame = report_frame(scenario_report(res, table, mode, a.linear, a.quad, a.groups))
    run.manifest.config = {"mode": a.mode, "groups": a.groups, "linear": a.linear, "quad": a.quad}
    if a.json and not a.out:
        print(frame.to_json(orient="records", indent=2, double_precision=15))
    else:
        _emit(run, frame.to_csv(index=False, lineterminator="\n"), a.out)
    return EXIT_OK


def cmd_model(run: _Run) -> int:
    from .contract import (
        FarmParams,
        ShockModel,
        approval_probability,
        commitment_credit_line,
        region_grid,
        simulate_approval_rate,
        thresholds,
    )

    a = run.args
    p = FarmParams(z=a.z, theta=a.theta, e=a.e, q=a.q, xi=a.xi)
    run.manifest.config = {"z": a.z, "theta": a.theta, "e": a.e, "q": a.q, "xi": a.xi}
    if a.action == "region-grid":
        lo = a.rho_min if a.rho_min is not None else p.theta * (p.z - p.e) - 1.0
        hi = a.rho_max if a.rho_max is not None else p.theta * (p.z + p.e) + 1.0
        if not hi > lo:
            raise UserError("--rho-max must exceed --rho-min")
        if a.n < 2:
            raise UserError("--n must be at least 2")
        grid = pd.DataFrame(region_grid(p, lo, hi, a.n), columns=["rho", "epsilon", "decision"])
        _emit(run, grid.to_csv(index=False, lineterminator="\n"), a.out)
        return EXIT_OK

    s = ShockModel(mu=a.mu, sigma=a.sigma)
    run.manifest.config.update({"mu": a.mu, "sigma": a.sigma, "draws": a.draws})
    t = thresholds(p)
    try:
        line = commitment_credit_line(p, s)
    except UserError:
        line = None
    seed = a.seed if a.seed is not None else 0
    summary = {
        "rho_low": t.rho_low,
        "rho_high": t.rho_high,
        "band_empty": t.band_is_empty,
        "commitment_credit_line": line,
        "approval_probability": approval_probability(p, s),
        "simulated_approval_rate": simulate_approval_rate(p, s, a.draws, seed, workers=a.threads),
        "draws": a.draws,
        "seed": seed,
    }
    if a.out:
        run.write_json(a.out, summary)
    if a.json or not a.out:
        if a.json:
            print(json.dumps(summary, indent=2))
        else:
            for k, v in summary.items():
                print(f"{k:<26} {v}")
    return EXIT_OK


def cmd_synth(run: _Run) -> int:
    import dataclasses

    from .synth import SynthConfig, generate

    a = run.args
    cfg = SynthConfig.from_toml(run.read(a.config)) if a.config else SynthConfig()
    if a.seed is not None:
        cfg = dataclasses.replace(cfg, seed=a.seed)
    run.manifest.seed = cfg.seed
    run.manifest.config = cfg.to_dict()
    result = generate(cfg, workers=a.threads)
    _emit(run, result.to_csv(), a.out)
    if a.truth:
        run.write_json(a.truth, result.truth)
    run.info(f"{len(result.frame)} rows, {cfg.n_counties} counties x {cfg.n_years} years, seed {cfg.seed}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for all randomness")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="maximum worker threads")
    g.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress progress messages")

    parser = _Parser(prog="agrilend", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"agrilend {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("anomaly", parents=[common], help="monthly climate CSV -> anomaly panel CSV")
    p.add_argument("--input", required=True, help="CSV with county_id,variable,year,month,value")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.add_argument("--window", default="30", choices=["30", "50", "70", "100", "all"])
    p.add_argument("--season", default="annual", choices=["annual", "grow", "nogrow"])
    p.add_argument("--variable", default="TMax", help="TMax, TMin or Precip")

    p = sub.add_parser("fit", parents=[common], help="estimate a fixed-effects panel regression")
    p.add_argument("--data", required=True, help="panel CSV")
    p.add_argument("--spec", required=True, help="regression spec file")
    p.add_argument("--out", help="fit JSON")
    p.add_argument("--max-sweeps", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--cluster", help="override the spec's cluster column ('none' for HC1)")
    p.add_argument("--backend", choices=["cython", "numpy"], help="absorption kernels (default: fastest available)")

    p = sub.add_parser("margins", parents=[common], help="marginal effects at scenario anomalies")
    p.add_argument("--fit", required=True, help="fit JSON written by 'fit'")
    p.add_argument("--scenarios", help="scenario CSV (default: built-in SSP table)")
    p.add_argument("--t-star", type=float, help="evaluate at this anomaly (F) instead of scenarios")
    p.add_argument("--mode", choices=["now", "cumlag"], default="now")
    p.add_argument("--groups", help="column whose [level]*T interactions give per-group margins")
    p.add_argument("--linear", help="linear temperature term (default: detected)")
    p.add_argument("--quad", help="squared temperature term (default: detected)")
    p.add_argument("--out", help="output CSV (default stdout)")

    p = sub.add_parser("model", parents=[common], help="lending model: summary or region grid")
    p.add_argument("action", nargs="?", choices=["summary", "region-grid"], default="summary")
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--e", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--rho-min", type=float)
    p.add_argument("--rho-max", type=float)
    p.add_argument("--n", type=int, default=200, help="rho grid points")
    p.add_argument("--out", help="output file (JSON for summary, CSV for region-grid)")

    p = sub.add_parser("synth", parents=[common], help="synthetic panel with planted coefficients")
    p.add_argument("--config", help="TOML config (default: built-in)")
    p.add_argument("--out", help="panel CSV (default stdout)")
    p.add_argument("--truth", help="truth JSON")
    return parser


_COMMANDS = {
    "anomaly": cmd_anomaly,
    "fit": cmd_fit,
    "margins": cmd_margins,
    "model": cmd_model,
    "synth": cmd_synth,
}


def _error_json(exc: Exception, code: int) -> dict:
    err = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, SpecSyntaxError):
        err.update(line=exc.line, column=exc.column)
    if isinstance(exc, NumericError):
        err.update(iterations=exc.iterations, last_change=exc.last_change)
    return {"error": err}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    want_json = "--json" in argv
    try:
        args = build_parser().parse_args(argv)
        for k, v in (("seed", None), ("threads", 1), ("json", False), ("quiet", False)):
            if not hasattr(args, k):
                setattr(args, k, v)
        if args.threads < 1:
            raise UserError("--threads must be at least 1")
        run = _Run(args, argv)
        code = _COMMANDS[args.command](run)
        run.finish()
        return code
    except AgrilendError as exc:
        code = EXIT_NUMERIC if isinstance(exc, NumericError) else EXIT_USER
        print(f"agrilend: error: {exc}", file=sys.stderr)
        if want_json:
            print(json.dumps(_error_json(exc, code)))
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
