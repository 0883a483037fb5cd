"""Batch commands over declarative system definitions.

Systems are described in a JSON config (expressions as strings under the
chart), and four subcommands emit machine-readable reports:

* ``classify``      -- Hamiltonian verdict as JSON (exit 0 / 10)
* ``evolve-metric`` -- metric evolution on a time grid as CSV
* ``audit``         -- invariance / Jacobi / volume-law residuals as JSON
* ``bracket``       -- bracket values, Jacobi residual, Leibniz defect

Exit codes: 0 success, 10 non-Hamiltonian verdict, 20 audit failure,
64 usage errors, 65 config or expression errors, 70 runtime failures.
Set METRICFLOW_THREADS to evaluate sample points concurrently; outputs are
ordered deterministically either way.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .brackets import Observable, bracket_jacobi_residual, leibniz_defect, poisson_bracket
from .dynamics import IntegrationError, IntegratorOptions, VectorFieldSpec, compressibility_integral, integrate_flow
from .evolution import (
    FiniteDifferenceMetric,
    SeriesMetric,
    SplittingConfig,
    invariance_residual,
    pullback_metric,
    split_propagate,
)
from .exprlang import CoordinateChart, ExprError, free_vars
from .friction import ApplicabilityError, FrictionSystem, analytic_metric, applicability_check
from .helmholtz import classify
from .phasespace import (
    ExprMetric,
    MetricField,
    PhasePoint,
    TransportedMetric,
    canonical_metric,
    jacobi_residual,
    metric_determinant,
)

EXIT_OK = 0
EXIT_NON_HAMILTONIAN = 10
EXIT_AUDIT_FAILED = 20
EXIT_USAGE = 64
EXIT_CONFIG = 65
EXIT_RUNTIME = 70


class ConfigError(Exception):
    """Invalid configuration file."""


@dataclass
class SystemConfig:
    n: int
    names: tuple[str, ...] | None
    hamiltonian: str | None
    friction: object
    components: list[str] | None
    metric: object  # "canonical" | "friction-analytic" | matrix of strings
    integrator: IntegratorOptions
    series_order: int
    series_mode: str
    splitting_steps: int
    samples_count: int
    samples_seed: int
    samples_box: float
    queries: list[dict]
    t_grid: list[float]
    t_max: float
    methods: list[str] | None

    @property
    def chart(self) -> CoordinateChart:
        return CoordinateChart(self.n, self.names or ())


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def load_config(data: dict) -> SystemConfig:
    _require(isinstance(data, dict), "config must be a JSON object")
    known = {
        "n", "names", "hamiltonian", "friction", "components", "metric",
        "integrator", "series", "splitting", "samples", "queries", "t_grid",
        "t_max", "methods",
    }
    unknown = set(data) - known
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    _require("n" in data, "config needs 'n' (degrees of freedom)")
    n = data["n"]
    _require(isinstance(n, int) and n >= 1, "'n' must be a positive integer")
    names = data.get("names")
    if names is not None:
        _require(
            isinstance(names, list) and all(isinstance(s, str) for s in names),
            "'names' must be a list of strings",
        )
        names = tuple(names)
    has_h = "hamiltonian" in data
    has_c = "components" in data
    _require(has_h != has_c, "config needs exactly one of 'hamiltonian' or 'components'")
    hamiltonian = data.get("hamiltonian")
    if has_h:
        _require(isinstance(hamiltonian, str), "'hamiltonian' must be a string expression")
    components = data.get("components")
    if has_c:
        _require(
            isinstance(components, list)
            and len(components) == 2 * n
            and all(isinstance(s, str) for s in components),
            f"'components' must be a list of {2 * n} string expressions",
        )
        _require("friction" not in data, "'friction' requires the 'hamiltonian' form")
    integ = data.get("integrator", {})
    _require(isinstance(integ, dict), "'integrator' must be an object")
    try:
        integrator = IntegratorOptions(
            abs_tol=float(integ.get("abs_tol", 1e-10)),
            rel_tol=float(integ.get("rel_tol", 1e-10)),
            max_steps=int(integ.get("max_steps", 1_000_000)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid integrator options: {exc}") from None
    series = data.get("series", {})
    _require(isinstance(series, dict), "'series' must be an object")
    series_order = int(series.get("order", 20))
    _require(series_order >= 1, "series order must be >= 1")
    series_mode = series.get("mode", "auto")
    _require(series_mode in ("auto", "linear", "generic"), "series mode must be auto|linear|generic")
    splitting = data.get("splitting", {})
    _require(isinstance(splitting, dict), "'splitting' must be an object")
    splitting_steps = int(splitting.get("steps", 100))
    _require(splitting_steps >= 1, "splitting steps must be >= 1")
    samples = data.get("samples", {})
    _require(isinstance(samples, dict), "'samples' must be an object")
    samples_count = int(samples.get("count", 50))
    samples_seed = int(samples.get("seed", 0))
    samples_box = float(samples.get("box", 1.0))
    _require(samples_count >= 1, "samples count must be >= 1")
    queries = data.get("queries", [])
    _require(isinstance(queries, list), "'queries' must be a list")
    for q in queries:
        _require(
            isinstance(q, dict) and "point" in q and isinstance(q["point"], list),
            "each query needs a 'point' list",
        )
        _require(len(q["point"]) == 2 * n, f"query points need {2 * n} coordinates")
    t_grid = [float(t) for t in data.get("t_grid", [1.0])]
    t_max = float(data.get("t_max", max([3.0] + t_grid)))
    methods = data.get("methods")
    if methods is not None:
        _require(
            isinstance(methods, list)
            and all(m in ("analytic", "series", "split", "pullback") for m in methods),
            "methods must be drawn from analytic|series|split|pullback",
        )
    return SystemConfig(
        n=n,
        names=names,
        hamiltonian=hamiltonian,
        friction=data.get("friction"),
        components=components,
        metric=data.get("metric", "canonical"),
        integrator=integrator,
        series_order=series_order,
        series_mode=series_mode,
        splitting_steps=splitting_steps,
        samples_count=samples_count,
        samples_seed=samples_seed,
        samples_box=samples_box,
        queries=queries,
        t_grid=t_grid,
        t_max=t_max,
        methods=methods,
    )


def _build_system(cfg: SystemConfig):
    """Returns (vector field or None, friction system or None)."""
    chart = cfg.chart
    try:
        if cfg.components is not None:
            return VectorFieldSpec.from_components(chart, cfg.components), None
        fsys = FrictionSystem.build(chart, cfg.hamiltonian, cfg.friction)
        V = fsys.vector_field if fsys.k_matrix is not None else None
        return V, fsys
    except (ExprError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _build_metric(cfg: SystemConfig, fsys: FrictionSystem | None) -> MetricField:
    chart = cfg.chart
    spec = cfg.metric
    if spec == "canonical":
        return canonical_metric(chart)
    if spec == "friction-analytic":
        _require(fsys is not None, "'friction-analytic' metric needs the hamiltonian form")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return analytic_metric(fsys, allow_inapplicable=True)
    if isinstance(spec, list):
        try:
            return ExprMetric(chart, spec)
        except Exception as exc:
            raise ConfigError(f"invalid metric entries: {exc}") from None
    raise ConfigError("metric must be 'canonical', 'friction-analytic' or a matrix of strings")


def _worker_count() -> int:
    raw = os.environ.get("METRICFLOW_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map(fn, items):
    workers = _worker_count()
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _query_points(cfg: SystemConfig) -> list[PhasePoint]:
    return [PhasePoint(q["point"], float(q.get("time", 0.0))) for q in cfg.queries]


def _eval_point(cfg: SystemConfig) -> np.ndarray:
    pts = _query_points(cfg)
    if pts:
        return pts[0].coords
    return np.zeros(cfg.chart.dim)


# ---------------------------------------------------------------------------
# Subcommands.  Each returns (payload, exit_code); payload is a dict for the
# JSON commands and a CSV string for evolve-metric.


def cmd_classify(cfg: SystemConfig, tol: float = 1e-8, seed: int | None = None):
    V, fsys = _build_system(cfg)
    if V is None:
        raise ConfigError("classification needs an autonomous vector field (constant friction)")
    M = _build_metric(cfg, fsys)
    report = classify(
        V,
        M,
        tol=tol,
        count=cfg.samples_count,
        seed=cfg.samples_seed if seed is None else seed,
        box=cfg.samples_box,
    )
    payload = {
        "verdict": report.verdict,
        "max_abs": report.max_abs,
        "tolerance": report.tol,
        "per_point": [
            {"point": [float(v) for v in x.coords], "time": x.time, "max_abs": m}
            for x, m in zip(report.points, report.per_point_max)
        ],
    }
    if report.canonical_blocks is not None:
        R1, R2, R3 = report.canonical_blocks
        payload["canonical_blocks"] = {
            "positions_antisymmetry": R3.tolist(),
            "cross_symmetry": R2.tolist(),
            "momenta_antisymmetry": R1.tolist(),
        }
    code = EXIT_OK if report.verdict == "hamiltonian" else EXIT_NON_HAMILTONIAN
    return payload, code


def _evolve_methods(cfg: SystemConfig, V, fsys) -> list[str]:
    if cfg.methods is not None:
        methods = list(cfg.methods)
        if "analytic" in methods and fsys is None:
            raise ConfigError("the analytic route needs the hamiltonian+friction form")
        if ("series" in methods or "split" in methods or "pullback" in methods) and V is None:
            raise ConfigError("series/split/pullback need a constant friction matrix")
        if "split" in methods and (V is None or V.part1 is None):
            raise ConfigError("the split route needs a declared Hamiltonian/friction split")
        return methods
    methods = []
    if fsys is not None:
        methods.append("analytic")
    if V is not None:
        methods.append("series")
        if V.part1 is not None:
            methods.append("split")
        methods.append("pullback")
    if not methods:
        raise ConfigError("no evolution route is applicable to this configuration")
    return methods


def _initial_matrix(cfg: SystemConfig, M0: MetricField) -> np.ndarray:
    entries = M0.entry_exprs()
    if entries is not None:
        for row in entries:
            for e in row:
                if free_vars(e):
                    raise ConfigError("metric evolution needs a constant initial metric")
        return M0.value(np.zeros(cfg.chart.dim), 0.0)
    # friction-analytic starts from its own t0 value
    return M0.value(np.zeros(cfg.chart.dim), 0.0)


def cmd_evolve_metric(cfg: SystemConfig, t_grid: list[float] | None = None):
    V, fsys = _build_system(cfg)
    methods = _evolve_methods(cfg, V, fsys)
    chart = cfg.chart
    d = chart.dim
    M0 = _build_metric(cfg, fsys)
    W0 = _initial_matrix(cfg, M0)
    x_eval = _eval_point(cfg)
    grid = cfg.t_grid if t_grid is None else [float(t) for t in t_grid]

    warning_text = ""
    analytic_field = None
    if fsys is not None:
        check = applicability_check(fsys)
        if not check.ok:
            warning_text = check.detail
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            analytic_field = analytic_metric(fsys, allow_inapplicable=True)
    series_field = SeriesMetric(V, W0, order=cfg.series_order, mode=cfg.series_mode) if V else None
    transported = TransportedMetric(M0, V, opts=cfg.integrator) if V else None

    pairs = [(k, l) for k in range(d) for l in range(k + 1, d)]
    header = ["t", "method"] + [f"w{k + 1}_{l + 1}" for k, l in pairs] + [
        "sqrt_g",
        "jacobi_residual",
        "invariance_residual",
        "warning",
    ]
    rows = [header]
    for t in grid:
        x = PhasePoint(x_eval, t)
        for method in methods:
            warn_cell = ""
            if method == "analytic":
                W = analytic_field.value(x_eval, t)
                fieldM = analytic_field
                warn_cell = warning_text
            elif method == "series":
                W = series_field.value(x_eval, t)
                fieldM = series_field
            elif method == "split":
                cfg_split = SplittingConfig(total_time=t, steps=cfg.splitting_steps)
                if t == 0.0:
                    W = W0
                else:
                    W = split_propagate(V, W0, cfg_split, x=x, order=cfg.series_order)

                def split_value(coords, time, _V=V, _W0=W0):
                    if time == 0.0:
                        return _W0
                    c = SplittingConfig(total_time=time, steps=cfg.splitting_steps)
                    return split_propagate(_V, _W0, c, x=PhasePoint(coords, time))

                fieldM = FiniteDifferenceMetric(chart, split_value)
            elif method == "pullback":
                W = pullback_metric(V, M0, x, opts=cfg.integrator)
                fieldM = transported
            sqrt_g = float(np.sqrt(abs(np.linalg.det(W))))
            jac = jacobi_residual(fieldM, x)
            inv = float(np.max(np.abs(invariance_residual(V, fieldM, x)))) if V else float("nan")
            row = [f"{t:.17g}", method]
            row += [f"{W[k, l]:.17g}" for k, l in pairs]
            row += [f"{sqrt_g:.17g}", f"{jac:.17g}", f"{inv:.17g}", warn_cell]
            rows.append(row)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue(), EXIT_OK


def cmd_audit(cfg: SystemConfig, tol: float = 1e-8, det_tol: float = 1e-6, seed: int | None = None):
    V, fsys = _build_system(cfg)
    if V is None:
        raise ConfigError("audit needs an autonomous vector field (constant friction)")
    M = _build_metric(cfg, fsys)
    chart = cfg.chart
    rng = np.random.default_rng(cfg.samples_seed if seed is None else seed)
    count = cfg.samples_count

    # rng draws must stay ordered for determinism; draw first, then map
    draws = []
    for _ in range(count):
        x = rng.uniform(-cfg.samples_box, cfg.samples_box, chart.dim)
        t = rng.uniform(0.0, cfg.t_max)
        draws.append(PhasePoint(x, t))

    def one(pt: PhasePoint):
        inv = float(np.max(np.abs(invariance_residual(V, M, pt))))
        jac = jacobi_residual(M, pt)
        return inv, jac

    results = _map(one, draws)
    max_inv = max(r[0] for r in results)
    max_jac = max(r[1] for r in results)

    # volume law along trajectories: |ln sqrt_g + integral kappa| at endpoints
    n_traj = min(20, count)
    gaps = []
    for _ in range(n_traj):
        x0 = PhasePoint(rng.uniform(-cfg.samples_box, cfg.samples_box, chart.dim), 0.0)
        t = rng.uniform(0.2, cfg.t_max)
        seg = integrate_flow(V, x0, t, cfg.integrator)
        kap = compressibility_integral(V, x0, t, cfg.integrator)
        det = metric_determinant(M, seg.end)
        if det.sqrt_g <= 0:
            gaps.append(float("inf"))
            continue
        gaps.append(abs(float(np.log(det.sqrt_g)) + kap))
    max_gap = max(gaps)

    ok = max_inv < tol and max_jac < tol and max_gap < det_tol
    payload = {
        "max_invariance_residual": max_inv,
        "max_jacobi_residual": max_jac,
        "max_volume_law_gap": max_gap,
        "tolerances": {"residual": tol, "volume_law": det_tol},
        "samples": {"count": count, "trajectories": n_traj, "t_max": cfg.t_max},
        "pass": bool(ok),
    }
    return payload, (EXIT_OK if ok else EXIT_AUDIT_FAILED)


def cmd_bracket(cfg: SystemConfig, a_text: str, b_text: str, c_text: str | None = None):
    V, fsys = _build_system(cfg)
    M = _build_metric(cfg, fsys)
    chart = cfg.chart
    try:
        A = Observable.parse(a_text, chart)
        B = Observable.parse(b_text, chart)
        C = Observable.parse(c_text, chart) if c_text else None
    except ExprError as exc:
        raise ConfigError(str(exc)) from None
    points = _query_points(cfg) or [PhasePoint(np.zeros(chart.dim))]

    def one(x: PhasePoint):
        entry = {
            "point": [float(v) for v in x.coords],
            "time": x.time,
            "bracket": poisson_bracket(A, B, M, x),
        }
        if C is not None:
            entry["jacobi_residual"] = bracket_jacobi_residual(A, B, C, M, x)
        if V is not None:
            defect = leibniz_defect(A, B, V, M, x, opts=cfg.integrator)
            entry["leibniz"] = {"formula": defect.formula, "numerical": defect.numerical}
        return entry

    payload = {"queries": _map(one, points)}
    return payload, EXIT_OK


# ---------------------------------------------------------------------------
# Entry point.


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write_output(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = _Parser(prog="metricflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("classify", "evolve-metric", "audit", "bracket"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON system definition")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--tol", type=float, default=1e-8, help="verdict tolerance")
        p.add_argument("--seed", type=int, default=None, help="override the sampling seed")
        if name == "bracket":
            p.add_argument("--A", required=True, help="first observable")
            p.add_argument("--B", required=True, help="second observable")
            p.add_argument("--C", default=None, help="third observable (Jacobi test)")
    args = parser.parse_args(argv)

    def emit_error(code: int, kind: str, message: str) -> int:
        text = json.dumps({"error": {"kind": kind, "message": message}}, indent=2, sort_keys=True)
        _write_output(text + "\n", args.out)
        return code

    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        return emit_error(EXIT_CONFIG, "io", f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        return emit_error(EXIT_CONFIG, "json", f"config is not valid JSON: {exc}")

    try:
        cfg = load_config(raw)
        if args.command == "classify":
            payload, code = cmd_classify(cfg, tol=args.tol, seed=args.seed)
        elif args.command == "evolve-metric":
            text, code = cmd_evolve_metric(cfg)
            _write_output(text, args.out)
            return code
        elif args.command == "audit":
            payload, code = cmd_audit(cfg, tol=args.tol, seed=args.seed)
        else:
            payload, code = cmd_bracket(cfg, args.A, args.B, args.C)
    except (ConfigError, ExprError) as exc:
        return emit_error(EXIT_CONFIG, "config", str(exc))
    except ApplicabilityError as exc:
        return emit_error(EXIT_CONFIG, "applicability", str(exc))
    except IntegrationError as exc:
        return emit_error(EXIT_RUNTIME, "integration", str(exc))
    _write_output(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
