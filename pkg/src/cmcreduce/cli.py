"""Command-line entry point.

Every subcommand writes one report (JSON object, or CSV header plus rows) to
``--output`` or stdout and exits with 0 on success, 1 when a verification
fails its tolerance and 2 on usage or configuration errors.  ``--dry-run``
prints the resolved parameters and stops.

CSV columns
-----------
verify-identities : name, computed, closed_form, rel_error, passed
solve, expand      : one row of scalar fields
radial-identity    : seed, xi_norm, lambda, fd, rhs, abs_diff, tolerance, passed
fit-coefficient    : xi, lambda, deficit, residual
thm13, thm17, scan : t, deficit, derivative, derivative_error, predicted_derivative
cor16              : r, convexity
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from cmcreduce import experiments as exp
from cmcreduce import metrics as met
from cmcreduce import reduction as red
from cmcreduce.quadrature import verify_moment_identities

SCHEMA_VERSION = 1
BUILTIN_METRICS = ("flat", "schwarzschild", "thm13", "thm17", "power-tail")

log = logging.getLogger("cmcreduce")


class ConfigError(ValueError):
    """Invalid configuration or metric description."""


@dataclass
class RunConfig:
    """Resolved run parameters.  All fields have documented defaults."""

    metric: str = "schwarzschild"
    L: int = 24
    degree: int = 48
    tol_H_scale: float = 1e-10
    tol_V: float = 1e-10
    max_iter: int = 60
    n_radial: int = 24
    fd_rel_step: float = 1e-3
    format: str = "json"
    output: str = "-"
    seed: int = 0
    threads: int = 0

    def solver_options(self) -> red.SolverOptions:
        return red.SolverOptions(L=self.L, tol_H_scale=self.tol_H_scale, tol_V=self.tol_V,
                                 max_iter=self.max_iter, n_radial=self.n_radial)

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["run"] = {f.name: str(getattr(self, f.name)) for f in fields(self)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if "run" not in cp:
            return cls()
        return cls.from_mapping(dict(cp["run"]))

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        names = {n.lower(): n for n in types}
        for key, raw in values.items():
            if key.lower() not in names:
                raise ConfigError(f"unknown config key {key!r}")
            key = names[key.lower()]
            t = types[key]
            try:
                kw[key] = int(raw) if t in ("int", int) else float(raw) if t in ("float", float) else str(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if self.L < 2 or self.degree < 8 or self.max_iter < 1:
            raise ConfigError("L >= 2, degree >= 8 and max_iter >= 1 required")


# ---------------------------------------------------------------------------
# metric resolution


def metric_from_ini(text: str) -> met.MetricSpec:
    """Metric description from a ``[metric]`` section.

    Keys: ``name`` (a builtin) or ``kind`` (``schwarzschild``, ``flat``,
    ``pulse13``, ``pulse17``, ``power_tail``), ``mass``, ``A``, ``k_max``,
    ``p``, ``r0``.
    """
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "metric" not in cp:
        raise ConfigError("config file has no [metric] section")
    sec = cp["metric"]
    kind = sec.get("kind", sec.get("name", "schwarzschild")).replace("-", "_")
    try:
        mass = float(sec.get("mass", "2"))
        k_max = int(sec.get("k_max", "24"))
        if kind == "flat":
            return met.flat()
        if kind == "schwarzschild":
            return met.schwarzschild(mass)
        if kind in ("thm13", "pulse13"):
            return met.radial_conformal(met.pulse_S_thm13(float(sec.get("A", "1")), k_max), mass,
                                        name="thm13")
        if kind in ("thm17", "pulse17"):
            return met.radial_conformal(met.pulse_S_thm17(k_max), mass, name="thm17")
        if kind == "power_tail":
            prof = met.power_tail_profile(float(sec.get("p", "5")), float(sec.get("r0", "1")))
            return met.radial_conformal(prof, mass, name="power-tail")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown metric kind {kind!r}")


def resolve_metric(name: str, A: Optional[float] = None) -> met.MetricSpec:
    if name == "flat":
        return met.flat()
    if name == "schwarzschild":
        return met.schwarzschild()
    if name == "thm13":
        return met.thm13_metric(1.0 if A is None else A)
    if name == "thm17":
        return met.thm17_metric()
    if name == "power-tail":
        return met.radial_conformal(met.power_tail_profile(), name="power-tail")
    if os.path.isfile(name):
        with open(name, encoding="utf-8") as fh:
            return metric_from_ini(fh.read())
    raise ConfigError(f"unknown metric {name!r}: use one of {BUILTIN_METRICS} or a config file")


def _vector(text: str) -> np.ndarray:
    try:
        v = np.array([float(p) for p in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text!r}") from exc
    if v.shape != (3,):
        raise argparse.ArgumentTypeError("vector needs three components")
    return v


def _floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list: {text!r}") from exc


# ---------------------------------------------------------------------------
# report output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit(report: dict, rows: list[dict], cfg: RunConfig) -> None:
    if cfg.format == "json":
        text = json.dumps(_jsonable({"schema_version": SCHEMA_VERSION, **report}), indent=2) + "\n"
    else:
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _jsonable(v) for k, v in r.items()})
        text = buf.getvalue()
    if cfg.output in ("-", ""):
        sys.stdout.write(text)
    else:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text)


def write_plot(path: str, ts, ds, title: str) -> None:
    """Derivative against ``t``: gnuplot data for ``.dat`` paths, otherwise a PNG."""
    if path.endswith(".dat"):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {title}\n# t dD/dt\n")
            for t, d in zip(ts, ds):
                fh.write(f"{t:.10g} {d:.10g}\n")
        return
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ts, ds, ".-")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("t")
    ax.set_ylabel("dD/dt")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify_identities(args, cfg) -> int:
    rep = verify_moment_identities(degree=args.degree or cfg.degree, seed=cfg.seed)
    emit({"command": "verify-identities", "degree": args.degree or cfg.degree, "seed": cfg.seed,
          "max_rel_error": rep.max_rel_error, "tolerance": rep.tolerance, "passed": rep.passed,
          "n_checks": len(rep.checks), "checks": rep.rows()}, rep.rows(), cfg)
    return 0 if rep.passed else 1


def _solution_report(spec, sol: red.LSSolution) -> dict:
    s = sol.summary()
    s.update({"metric": spec.name, "converged": True,
              "relative_area_error_vs_4pi_lambda2": sol.area_deficit / (4 * math.pi * sol.lam**2)})
    return s


def cmd_solve(args, cfg) -> int:
    spec = resolve_metric(cfg.metric, getattr(args, "A", None))
    try:
        sol = red.solve_graph(spec, args.xi, args.lam, cfg.solver_options())
    except red.ConvergenceError as exc:
        emit({"command": "solve", "converged": False, "error": str(exc)}, [], cfg)
        return 1
    rep = _solution_report(spec, sol)
    emit({"command": "solve", **rep}, [rep], cfg)
    return 0


def cmd_expand(args, cfg) -> int:
    spec = resolve_metric(cfg.metric, getattr(args, "A", None))
    rep = red.predict_lsreduction(spec, args.xi, args.lam, solve=True, options=cfg.solver_options())
    d = rep.as_dict()
    d["radial_derivative_prediction"] = red.predict_lsradial_terms(spec, args.xi, args.lam)
    row = {"measured_deficit": d["measured_deficit"], "predicted_deficit": d["predicted_deficit"],
           "residual": d["residual"], **d["terms"]}
    emit({"command": "expand", "metric": spec.name, **d}, [row], cfg)
    return 0


def cmd_radial_identity(args, cfg) -> int:
    rows = []
    seeds = range(cfg.seed, cfg.seed + args.n_fields)
    for xi_norm, lam in ((2.0, 20.0), (3.0, 50.0)) if args.lam is None else ((args.xi_norm, args.lam),):
        for seed in seeds:
            rng = np.random.default_rng(seed)
            d = rng.standard_normal(3)
            xi = xi_norm * d / np.linalg.norm(d)
            spec = met.MetricSpec(sigma=met.random_bump_sigma(seed, lam * xi, lam), name="bump-sigma")
            fd = red.F_sigma_radial_fd(spec, xi, lam)
            rhs = red.radial_variation_rhs(spec, xi, lam)
            tol = args.tolerance * max(1.0, abs(fd))
            rows.append({"seed": seed, "xi_norm": xi_norm, "lambda": lam, "fd": fd, "rhs": rhs,
                         "abs_diff": abs(fd - rhs), "tolerance": tol, "passed": abs(fd - rhs) <= tol})
    ok = all(r["passed"] for r in rows)
    emit({"command": "radial-identity", "passed": ok, "rows": rows}, rows, cfg)
    return 0 if ok else 1


def cmd_fit(args, cfg) -> int:
    spec = resolve_metric(cfg.metric)
    res = red.fit_BE_coefficient(spec, args.xis, args.lambdas, cfg.solver_options())
    d = res.as_dict()
    rows = []
    for name, per in res.per_xi.items():
        for lam, D in per["deficits"].items():
            rows.append({"xi": name, "lambda": lam, "deficit": D, "residual": res.residuals[name][lam]})
    stable = d["ratio_spread"] <= 0.10
    monotone = all(np.all(np.diff(list(r.values())) < 0) for r in res.residuals.values())
    d.update({"c_F0_stable_5pct": stable, "residuals_monotone": monotone})
    emit({"command": "fit-coefficient", "metric": spec.name, **d}, rows, cfg)
    return 0 if stable and monotone else 1


def _scan_report(res: exp.ScanResult, args, title: str) -> dict:
    if getattr(args, "plot", None):
        write_plot(args.plot, [p.t for p in res.points], [p.derivative for p in res.points], title)
    return res.as_dict()


def cmd_thm13(args, cfg) -> int:
    res = exp.run_thm13(args.j, args.A, per_unit=args.per_unit, options=cfg.solver_options(),
                        workers=cfg.resolved_threads())
    emit({"command": "thm13", **_scan_report(res, args, "first pulsed metric")}, res.rows(), cfg)
    return 0 if res.passed else 1


def cmd_thm17(args, cfg) -> int:
    res = exp.run_thm17(args.k, per_unit=args.per_unit, options=cfg.solver_options(),
                        workers=cfg.resolved_threads())
    emit({"command": "thm17", **_scan_report(res, args, "second pulsed metric")}, res.rows(), cfg)
    return 0 if res.passed else 1


def cmd_scan(args, cfg) -> int:
    spec = resolve_metric(cfg.metric, getattr(args, "A", None))
    res = exp.scan_radial(spec, args.lam, (args.t_min, args.t_max), n_points=args.n_points,
                          per_unit=args.per_unit, xi_scale=args.xi_scale,
                          options=cfg.solver_options(), rel_step=cfg.fd_rel_step,
                          workers=cfg.resolved_threads())
    emit({"command": "scan", "metric": spec.name, **_scan_report(res, args, spec.name)},
         res.rows(), cfg)
    return 0


def cmd_cor16(args, cfg) -> int:
    spec = resolve_metric(cfg.metric, getattr(args, "A", None))
    d = exp.corollary16_diagnostics(spec, args.xi, args.lam)
    emit({"command": "cor16", "metric": spec.name, **d}, [{k: v for k, v in d.items()
                                                          if not isinstance(v, list)}], cfg)
    return 0


COMMANDS = {
    "verify-identities": cmd_verify_identities, "solve": cmd_solve, "expand": cmd_expand,
    "radial-identity": cmd_radial_identity, "fit-coefficient": cmd_fit, "thm13": cmd_thm13,
    "thm17": cmd_thm17, "scan": cmd_scan, "cor16": cmd_cor16,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [run] section (and optionally [metric])")
    common.add_argument("--metric", help=f"builtin {BUILTIN_METRICS} or a metric INI file")
    common.add_argument("--L", type=int, help="harmonic degree cap (default 24)")
    common.add_argument("--tol-H", dest="tol_H_scale", type=float,
                        help="mean-curvature tolerance times lambda (default 1e-10)")
    common.add_argument("--tol-V", dest="tol_V", type=float, help="relative volume tolerance")
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--output", "-o", help="report path ('-' for stdout)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (default: all cores; 1 = serial)")
    common.add_argument("--dry-run", action="store_true", help="print resolved parameters and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cmcreduce", description=__doc__.split("\n\n")[0],
                                epilog=__doc__.split("CSV columns")[1],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify-identities", parents=[common], help="moment identity suite")
    s.add_argument("--degree", type=int, help="rule exactness degree (default 48)")

    for name, helptext in (("solve", "solve one graph"), ("expand", "reduced area vs expansion")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--xi", type=_vector, required=True, help="x,y,z")
        s.add_argument("--lambda", dest="lam", type=float, required=True)
        s.add_argument("--A", type=float, help="pulse amplitude for thm13")

    s = sub.add_parser("radial-identity", parents=[common], help="exact radial-variation identity")
    s.add_argument("--n-fields", type=int, default=5)
    s.add_argument("--xi-norm", type=float, default=2.0)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--tolerance", type=float, default=1e-8)

    s = sub.add_parser("fit-coefficient", parents=[common], help="fit the F0 coefficient")
    s.add_argument("--xis", type=_floats, default=[2.0, 3.0, 5.0])
    s.add_argument("--lambdas", type=_floats, default=[20.0, 40.0, 80.0, 160.0])

    s = sub.add_parser("thm13", parents=[common], help="first pulsed construction")
    s.add_argument("--j", type=int, default=1)
    s.add_argument("--A", type=float, default=None, help="amplitude (default: doubling search)")
    s.add_argument("--per-unit", type=float, default=25.0)
    s.add_argument("--plot")

    s = sub.add_parser("thm17", parents=[common], help="second pulsed construction")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--per-unit", type=float, default=25.0)
    s.add_argument("--plot")

    s = sub.add_parser("scan", parents=[common], help="radial scan of the reduced functional")
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--t-min", type=float, required=True)
    s.add_argument("--t-max", type=float, required=True)
    s.add_argument("--n-points", type=int, default=None)
    s.add_argument("--per-unit", type=float, default=25.0)
    s.add_argument("--xi-scale", type=float, default=1.0, help="xi = xi_scale * t * e3")
    s.add_argument("--A", type=float)
    s.add_argument("--plot")

    s = sub.add_parser("cor16", parents=[common], help="radial convexity diagnostics")
    s.add_argument("--xi", type=_vector, default=None)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--A", type=float)
    return p


def resolve_config(args) -> RunConfig:
    base = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        base = asdict(RunConfig.from_ini(text))
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if "metric" in cp and args.metric is None:
            base["metric"] = args.config
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    cfg = RunConfig(**base)
    cfg.validate()
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command not in ("verify-identities", "radial-identity"):
            resolve_metric(cfg.metric, getattr(args, "A", None))
    except (ConfigError, configparser.Error) as exc:
        print(f"cmcreduce: error: {exc}", file=sys.stderr)
        return 2
    if args.dry_run:
        params = {k: v for k, v in vars(args).items() if k not in ("dry_run", "verbose")}
        print(json.dumps(_jsonable({"schema_version": SCHEMA_VERSION, "config": asdict(cfg),
                                    "arguments": params}), indent=2))
        return 0
    try:
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, met.ChartDomainError, ValueError) as exc:
        print(f"cmcreduce: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
