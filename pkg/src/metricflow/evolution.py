"""Metric evolution: keep the 2-form an integral of motion.

Three independent routes evolve an initial metric so that its total time
derivative along the flow vanishes:

* an exponential series built from repeated applications of the generating
  operator (exact on the skew-matrix space for linear fields),
* Strang splitting of that exponential over the Hamiltonian/friction parts,
* pullback transport: evaluate the time-t metric as M^T w0 M with M the
  Jacobian of the backward flow (invariant by construction; this route is
  the reference oracle).

The invariance residual dw_kl/dt - d_k(w_lm X^m) + d_l(w_km X^m) measures
how far a given field is from being conserved.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .dynamics import (
    IntegratorOptions,
    VectorFieldSpec,
    integrate_flow,
    variational_samples,
)
from .exprlang import (
    Expr,
    Num,
    count_nodes,
    differentiate,
    evaluate,
    free_vars,
    is_zero,
    simplify,
)
from .helmholtz import helmholtz_residual
from .phasespace import MetricField, PhasePoint, SKEW_TOL, _check_point, metric_eval

MAX_EXPR_NODES = 1_000_000
SERIES_STOP_NORM = 1e-14
DEFAULT_SERIES_ORDER = 20


class EvolutionError(Exception):
    """Metric evolution failed."""


class ExpressionSizeError(EvolutionError):
    """Symbolic series outgrew the node budget."""


class SeriesDivergenceWarning(UserWarning):
    """Truncated series shows no sign of converging at the final order."""


@dataclass(frozen=True)
class SplittingConfig:
    total_time: float
    steps: int
    scheme: str = "strang"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.scheme != "strang":
            raise ValueError(f"unsupported splitting scheme '{self.scheme}'")


@dataclass(frozen=True)
class SeriesInfo:
    path: str  # "linear-exact" | "series"
    terms: int
    last_term_norm: float
    diverging: bool


def _components(V: VectorFieldSpec, split: str):
    if split == "all":
        return V.components
    if split == "part1":
        if V.part1 is None:
            raise EvolutionError("vector field has no declared split")
        return V.part1
    if split == "part2":
        if V.part2 is None:
            raise EvolutionError("vector field has no declared split")
        return V.part2
    raise ValueError(f"split must be all|part1|part2, got '{split}'")


def _entries_of(W, chart) -> list[list[Expr]]:
    if isinstance(W, MetricField):
        entries = W.entry_exprs()
        if entries is None:
            raise EvolutionError("metric representation has no expression entries")
        return entries
    if isinstance(W, np.ndarray) or (
        isinstance(W, (list, tuple)) and W and not isinstance(W[0][0], Expr)
    ):
        arr = np.array(W, dtype=float)
        return [[Num(float(v)) for v in row] for row in arr]
    return [list(row) for row in W]


def _zip_sum(terms: list[Expr]) -> Expr:
    acc: Expr = Num(0.0)
    for term in terms:
        acc = acc + term
    return simplify(acc)


def apply_J(V: VectorFieldSpec, W, split: str = "all", check: bool = True) -> list[list[Expr]]:
    """One application of the metric evolution operator, symbolically.

    Returns the matrix d_k(w_lm X^m) - d_l(w_km X^m).  The equivalent
    symmetrized operator form (which does not presuppose which triangle of
    w carries the data) is evaluated alongside and agreement is asserted at
    probe points whenever ``check`` is set; the two coincide exactly when w
    is skew-symmetric.
    """
    comps = _components(V, split)
    chart = V.chart
    d = chart.dim
    entries = _entries_of(W, chart)
    names = chart.names
    # P[l] = sum_m w_lm X^m  (w's first index fixed)
    P = [
        _zip_sum([entries[l][m] * comps[m] for m in range(d) if not is_zero(entries[l][m])])
        for l in range(d)
    ]
    out: list[list[Expr]] = [[Num(0.0)] * d for _ in range(d)]
    dP = [[differentiate(P[l], names[k]) for k in range(d)] for l in range(d)]
    for k in range(d):
        for l in range(k + 1, d):
            u = simplify(dP[l][k] - dP[k][l])
            out[k][l] = u
            out[l][k] = simplify(-u)
    if check:
        # R[l] = sum_m X^m w_ml (w's second index fixed); the symmetrized
        # operator is half the difference of the two assemblies.
        R = [
            _zip_sum([comps[m] * entries[m][l] for m in range(d) if not is_zero(entries[m][l])])
            for l in range(d)
        ]
        dR = [[differentiate(R[l], names[k]) for k in range(d)] for l in range(d)]
        rng = np.random.default_rng(2718)
        for _ in range(5):
            xs = rng.uniform(-1.0, 1.0, d)
            env = chart.env(xs, rng.uniform(0.0, 1.0))
            for k in range(d):
                for l in range(k + 1, d):
                    u = evaluate(out[k][l], env)
                    s = 0.5 * (
                        (evaluate(dP[l][k], env) - evaluate(dP[k][l], env))
                        - (evaluate(dR[l][k], env) - evaluate(dR[k][l], env))
                    )
                    if abs(u - s) > 1e-10 * max(1.0, abs(u)):
                        raise EvolutionError(
                            "symmetrized and unsymmetrized operator forms disagree; "
                            "the input matrix is not skew-symmetric"
                        )
    return out


def _affine_jacobian(V: VectorFieldSpec, comps) -> np.ndarray | None:
    """Constant Jacobian A[m, k] = d X^m / d x^k, or None if not affine."""
    chart = V.chart
    d = chart.dim
    A = np.empty((d, d))
    for m in range(d):
        for k in range(d):
            der = differentiate(comps[m], chart.names[k])
            if free_vars(der):
                return None
            A[m, k] = evaluate(der, {})
    return A


def _skew_pairs(d: int):
    return [(a, b) for a in range(d) for b in range(a + 1, d)]


def _mat_to_vec(W: np.ndarray, pairs) -> np.ndarray:
    return np.array([W[a, b] for a, b in pairs])


def _vec_to_mat(v: np.ndarray, pairs, d: int) -> np.ndarray:
    W = np.zeros((d, d))
    for value, (a, b) in zip(v, pairs):
        W[a, b] = value
        W[b, a] = -value
    return W


def _operator_matrix(A: np.ndarray) -> np.ndarray:
    """The evolution operator W -> -(A^T W + W A) on the skew-matrix space."""
    d = A.shape[0]
    pairs = _skew_pairs(d)
    L = np.empty((len(pairs), len(pairs)))
    for j, (a, b) in enumerate(pairs):
        E = np.zeros((d, d))
        E[a, b] = 1.0
        E[b, a] = -1.0
        img = -(A.T @ E + E @ A)
        L[:, j] = _mat_to_vec(img, pairs)
    return L


def _check_constant_skew(W0) -> np.ndarray:
    W = np.array(W0, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("initial metric must be a square matrix")
    if np.max(np.abs(W + W.T)) > SKEW_TOL:
        raise ValueError("initial metric must be skew-symmetric")
    return W


class SeriesPropagator:
    """Exponential-series propagator for one (field, initial metric) pair.

    Symbolic operator powers are computed once and shared across point
    evaluations; linear fields get routed to an exact matrix exponential on
    the skew-matrix space.
    """

    def __init__(self, V: VectorFieldSpec, W0, split: str = "all"):
        self.V = V
        self.split = split
        self.W0 = _check_constant_skew(W0)
        if self.W0.shape[0] != V.chart.dim:
            raise ValueError("initial metric does not match the chart dimension")
        self.comps = _components(V, split)
        self.affine_jacobian = _affine_jacobian(V, self.comps)
        self._powers: list[list[list[Expr]]] = [_entries_of(self.W0, V.chart)]

    def _power(self, j: int) -> list[list[Expr]]:
        while len(self._powers) <= j:
            prev = self._powers[-1]
            nxt = apply_J(self.V, prev, split=self.split, check=len(self._powers) == 1)
            nodes = sum(count_nodes(e) for row in nxt for e in row)
            if nodes > MAX_EXPR_NODES:
                raise ExpressionSizeError(
                    f"series power {len(self._powers)} has {nodes} nodes "
                    f"(cap {MAX_EXPR_NODES})"
                )
            self._powers.append(nxt)
        return self._powers[j]

    def _eval_power(self, j: int, env) -> np.ndarray:
        entries = self._power(j)
        d = self.V.chart.dim
        return np.array([[evaluate(entries[k][l], env) for l in range(d)] for k in range(d)])

    def propagate(
        self,
        t: float,
        x: PhasePoint | None = None,
        order: int = DEFAULT_SERIES_ORDER,
        mode: str = "auto",
        stop_norm: float = SERIES_STOP_NORM,
    ) -> tuple[np.ndarray, SeriesInfo]:
        if order < 1:
            raise ValueError("order must be >= 1")
        if mode not in ("auto", "linear", "generic"):
            raise ValueError(f"mode must be auto|linear|generic, got '{mode}'")
        if mode == "linear" and self.affine_jacobian is None:
            raise EvolutionError("vector field is not linear; cannot force the linear path")
        if mode in ("auto", "linear") and self.affine_jacobian is not None:
            d = self.V.chart.dim
            pairs = _skew_pairs(d)
            L = _operator_matrix(self.affine_jacobian)
            v = expm(t * L) @ _mat_to_vec(self.W0, pairs)
            return _vec_to_mat(v, pairs, d), SeriesInfo("linear-exact", 0, 0.0, False)
        if x is None:
            raise ValueError("the generic series path needs an evaluation point")
        env = self.V.chart.env(x.coords, x.time)
        total = self._eval_power(0, env)
        coeff = 1.0
        last_norm = 0.0
        terms = 0
        for j in range(1, order + 1):
            coeff *= t / j
            term = coeff * self._eval_power(j, env)
            total = total + term
            terms = j
            last_norm = float(np.max(np.abs(term)))
            if last_norm < stop_norm * max(1.0, float(np.max(np.abs(total)))):
                break
        diverging = last_norm > max(1.0, float(np.max(np.abs(total))))
        if diverging:
            warnings.warn(
                f"series term {terms} has norm {last_norm:.3e}, exceeding the running sum; "
                "the truncated series is not converging",
                SeriesDivergenceWarning,
            )
        return total, SeriesInfo("series", terms, last_norm, diverging)


def series_propagate(
    V: VectorFieldSpec,
    W0,
    t: float,
    order: int = DEFAULT_SERIES_ORDER,
    x: PhasePoint | None = None,
    mode: str = "auto",
) -> np.ndarray:
    """Evaluate exp(t J) applied to the constant initial metric ``W0``."""
    W, _ = SeriesPropagator(V, W0).propagate(t, x=x, order=order, mode=mode)
    return W


@dataclass(frozen=True)
class SplitInfo:
    path: str  # "linear-exact" | "series"
    substep_last_term_norms: tuple[float, ...]  # empty on the exact path


def split_propagate(
    V: VectorFieldSpec,
    W0,
    cfg: SplittingConfig,
    x: PhasePoint | None = None,
    order: int = DEFAULT_SERIES_ORDER,
) -> np.ndarray:
    """Strang splitting over the declared field split X = X1 + X2.

    Each step applies exp(dt/2 J2) exp(dt J1) exp(dt/2 J2); sub-exponentials
    are exact for affine parts and truncated series otherwise.
    """
    W, _ = split_propagate_info(V, W0, cfg, x=x, order=order)
    return W


def split_propagate_info(
    V: VectorFieldSpec,
    W0,
    cfg: SplittingConfig,
    x: PhasePoint | None = None,
    order: int = DEFAULT_SERIES_ORDER,
) -> tuple[np.ndarray, SplitInfo]:
    """As :func:`split_propagate`, also reporting per-substep truncation."""
    if V.part1 is None or V.part2 is None:
        raise EvolutionError("split propagation requires declared split parts")
    W = _check_constant_skew(W0)
    d = V.chart.dim
    dt = cfg.total_time / cfg.steps
    p1 = _components(V, "part1")
    p2 = _components(V, "part2")
    A1 = _affine_jacobian(V, p1)
    A2 = _affine_jacobian(V, p2)
    if A1 is not None and A2 is not None:
        pairs = _skew_pairs(d)
        E1 = expm(dt * _operator_matrix(A1))
        E2h = expm(0.5 * dt * _operator_matrix(A2))
        step = E2h @ E1 @ E2h
        v = _mat_to_vec(W, pairs)
        for _ in range(cfg.steps):
            v = step @ v
        return _vec_to_mat(v, pairs, d), SplitInfo("linear-exact", ())
    if x is None:
        raise ValueError("nonlinear split propagation needs an evaluation point")
    env = V.chart.env(x.coords, x.time)
    entries = _entries_of(W, V.chart)
    sub_order = min(order, 12)
    norms = []
    for _ in range(cfg.steps):
        for split, h in (("part2", 0.5 * dt), ("part1", dt), ("part2", 0.5 * dt)):
            entries, last = _series_exp_entries(V, split, entries, h, sub_order, env)
            norms.append(last)
    value = np.array(
        [[evaluate(entries[k][l], env) for l in range(d)] for k in range(d)]
    )
    return value, SplitInfo("series", tuple(norms))


def _series_exp_entries(V, split, entries, dt, order, env):
    """Symbolic exp(dt J_split) applied to an expression matrix.

    Returns the new matrix and the last term's max-norm at the probe env.
    """
    d = V.chart.dim
    total = [row[:] for row in entries]
    power = entries
    coeff = 1.0
    last_norm = 0.0
    for j in range(1, order + 1):
        power = apply_J(V, power, split=split, check=False)
        coeff *= dt / j
        total = [
            [simplify(total[k][l] + Num(coeff) * power[k][l]) for l in range(d)]
            for k in range(d)
        ]
        nodes = sum(count_nodes(e) for row in total for e in row)
        if nodes > MAX_EXPR_NODES:
            raise ExpressionSizeError(
                f"split substep outgrew the node budget at order {j} ({nodes} nodes)"
            )
        last_norm = max(
            abs(coeff * evaluate(power[k][l], env)) for k in range(d) for l in range(d)
        )
        if last_norm < SERIES_STOP_NORM:
            break
    return total, last_norm


def pullback_metric(
    V: VectorFieldSpec,
    M0: MetricField,
    x: PhasePoint,
    t: float | None = None,
    opts: IntegratorOptions | None = None,
) -> np.ndarray:
    """Transport the time-0 metric to ``x`` at time ``t`` along the flow.

    Computes the backward-flow preimage x0 and its Jacobian M, then returns
    M^T w(x0, 0) M.  Enforces conservation of the 2-form by construction.
    """
    _check_point(V.chart, x)
    time = x.time if t is None else float(t)
    if time == 0.0:
        return metric_eval(M0, PhasePoint(x.coords, 0.0))
    seg = integrate_flow(V.negated, PhasePoint(x.coords, 0.0), time, opts)
    x0 = seg.end.coords
    M = seg.tangent
    W0 = M0.value(x0, 0.0)
    R = M.T @ W0 @ M
    return 0.5 * (R - R.T)


def invariance_residual(V: VectorFieldSpec, M: MetricField, x: PhasePoint) -> np.ndarray:
    """Residual of the conservation law for the metric field at ``x``.

    Entries dw_kl/dt - d_k(w_lm X^m) + d_l(w_km X^m); the metric is an
    integral of motion at ``x`` exactly when this vanishes.
    """
    _check_point(V.chart, x)
    return M.d_dt(x.coords, x.time) - helmholtz_residual(V, M, x)


# ---------------------------------------------------------------------------
# Finite-difference derivatives for transported metrics.  The perturbed
# backward flows are integrated jointly (one step sequence) so difference
# quotients are not dominated by independent integration noise.


def _stacked_rhs(V: VectorFieldSpec, copies: int, sign: float):
    d = V.chart.dim
    block = d + d * d

    def f(tau, s):
        out = np.empty_like(s)
        for c in range(copies):
            seg = s[c * block : (c + 1) * block]
            xc = seg[:d]
            Mc = seg[d:].reshape(d, d)
            A = V.jacobian(xc)
            out[c * block : c * block + d] = sign * V.eval(xc)
            out[c * block + d : (c + 1) * block] = sign * (A @ Mc).reshape(-1)
        return out

    return f


def transported_d_dx(
    V: VectorFieldSpec,
    M0: MetricField,
    coords,
    time: float,
    opts: IntegratorOptions | None = None,
    h_scale: float = 1e-5,
) -> np.ndarray:
    """Spatial derivatives of the transported metric by central differences."""
    from .dynamics import _integrate

    coords = np.asarray(coords, dtype=float)
    d = V.chart.dim
    if time == 0.0:
        return M0.d_dx(coords, time)
    opts = opts or IntegratorOptions(abs_tol=1e-12, rel_tol=1e-12)
    hs = h_scale * np.maximum(1.0, np.abs(coords))
    starts = []
    for k in range(d):
        for sign in (+1.0, -1.0):
            xp = coords.copy()
            xp[k] += sign * hs[k]
            starts.append(xp)
    copies = len(starts)
    I = np.eye(d).reshape(-1)
    y0 = np.concatenate([np.concatenate([xp, I]) for xp in starts])
    back = V.negated if time > 0 else V
    y_end, _, _ = _integrate(_stacked_rhs(back, copies, 1.0), y0, abs(time), opts)
    block = d + d * d
    values = []
    for c in range(copies):
        seg = y_end[c * block : (c + 1) * block]
        x0 = seg[:d]
        M = seg[d:].reshape(d, d)
        W0 = M0.value(x0, 0.0)
        R = M.T @ W0 @ M
        values.append(0.5 * (R - R.T))
    D = np.empty((d, d, d))
    for k in range(d):
        D[k] = (values[2 * k] - values[2 * k + 1]) / (2.0 * hs[k])
    return D


def transported_d_dt(
    V: VectorFieldSpec,
    M0: MetricField,
    coords,
    time: float,
    opts: IntegratorOptions | None = None,
    h_scale: float = 1e-5,
) -> np.ndarray:
    """Time derivative of the transported metric by differences along one
    backward trajectory (dense samples share the step sequence)."""
    coords = np.asarray(coords, dtype=float)
    opts = opts or IntegratorOptions(abs_tol=1e-12, rel_tol=1e-12)
    sgn = -1.0 if time < 0 else 1.0
    s = abs(time)  # backward duration; W(t) below means the metric at sgn*s
    back = V.negated if sgn > 0 else V
    dt = h_scale * max(1.0, s)
    start = PhasePoint(coords, 0.0)

    def value_at(sample) -> np.ndarray:
        x0, M = sample
        W0 = M0.value(x0, 0.0)
        R = M.T @ W0 @ M
        return 0.5 * (R - R.T)

    if s > dt:
        taus = [s - dt, s + dt]
        samples = variational_samples(back, start, s + dt, taus, opts)
        Wm = value_at(samples[0][1:])
        Wp = value_at(samples[1][1:])
        return sgn * (Wp - Wm) / (2.0 * dt)
    # near t = 0 use a one-sided second-order stencil on [s, s+2dt]
    if s == 0.0:
        W0v = metric_eval(M0, PhasePoint(coords, 0.0))
        taus = [dt, 2.0 * dt]
        samples = variational_samples(back, start, 2.0 * dt, taus, opts)
        W1 = value_at(samples[0][1:])
        W2 = value_at(samples[1][1:])
        return sgn * (-3.0 * W0v + 4.0 * W1 - W2) / (2.0 * dt)
    taus = [s, s + dt, s + 2.0 * dt]
    samples = variational_samples(back, start, s + 2.0 * dt, taus, opts)
    W0v = value_at(samples[0][1:])
    W1 = value_at(samples[1][1:])
    W2 = value_at(samples[2][1:])
    return sgn * (-3.0 * W0v + 4.0 * W1 - W2) / (2.0 * dt)


# ---------------------------------------------------------------------------
# Metric-field wrappers around the evolution routes (used by audits and the
# command-line reports).


class SeriesMetric(MetricField):
    """The series-propagated metric as a field with exact derivatives."""

    def __init__(self, V: VectorFieldSpec, W0, order: int = DEFAULT_SERIES_ORDER, mode: str = "auto"):
        self.chart = V.chart
        self.V = V
        self.order = order
        self.mode = mode
        self.prop = SeriesPropagator(V, W0)

    def value(self, coords, time):
        W, _ = self.prop.propagate(time, x=PhasePoint(coords, time), order=self.order, mode=self.mode)
        return W

    def d_dt(self, coords, time):
        if self.prop.affine_jacobian is not None and self.mode in ("auto", "linear"):
            # dW/dt = J W(t), one exact operator application
            A = self.prop.affine_jacobian
            W = self.value(coords, time)
            return -(A.T @ W + W @ A)
        # termwise derivative of the truncated series: the index-shifted sum
        env = self.chart.env(coords, time)
        total = self.prop._eval_power(1, env)
        coeff = 1.0
        for j in range(2, self.order + 1):
            coeff *= time / (j - 1)
            term = coeff * self.prop._eval_power(j, env)
            total = total + term
            if float(np.max(np.abs(term))) < SERIES_STOP_NORM:
                break
        return total

    def d_dx(self, coords, time):
        d = self.chart.dim
        if self.prop.affine_jacobian is not None and self.mode in ("auto", "linear"):
            return np.zeros((d, d, d))
        # differentiate the truncated series termwise
        env = self.chart.env(coords, time)
        D = np.zeros((d, d, d))
        coeff = 1.0
        for j in range(0, self.order + 1):
            if j > 0:
                coeff *= time / j
            entries = self.prop._power(j)
            term = coeff * np.array(
                [
                    [
                        [
                            evaluate(differentiate(entries[l][m], self.chart.names[k]), env)
                            for m in range(d)
                        ]
                        for l in range(d)
                    ]
                    for k in range(d)
                ]
            )
            D = D + term
            if j > 0 and float(np.max(np.abs(term))) < SERIES_STOP_NORM:
                break
        return D


class FiniteDifferenceMetric(MetricField):
    """Wrap a value callable as a metric field with FD derivatives."""

    def __init__(self, chart, value_fn, h_scale: float = 1e-5):
        self.chart = chart
        self._fn = value_fn
        self.h = h_scale

    def value(self, coords, time):
        return self._fn(np.asarray(coords, dtype=float), float(time))

    def d_dx(self, coords, time):
        coords = np.asarray(coords, dtype=float)
        d = self.chart.dim
        D = np.empty((d, d, d))
        for k in range(d):
            h = self.h * max(1.0, abs(coords[k]))
            xp = coords.copy()
            xm = coords.copy()
            xp[k] += h
            xm[k] -= h
            D[k] = (self._fn(xp, time) - self._fn(xm, time)) / (2.0 * h)
        return D

    def d_dt(self, coords, time):
        coords = np.asarray(coords, dtype=float)
        h = self.h * max(1.0, abs(time))
        return (self._fn(coords, time + h) - self._fn(coords, time - h)) / (2.0 * h)
