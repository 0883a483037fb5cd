"""Dynamical systems dx/dt = X(x): fields, flows, tangent maps.

The vector field is autonomous (components may not reference ``t``); flows
are integrated with an embedded Dormand-Prince 5(4) pair with adaptive
steps, cubic Hermite dense output and jointly integrated variational
equations for the tangent map.  Backward flow reuses the forward code path
on the negated field.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .exprlang import (
    CoordinateChart,
    Expr,
    Num,
    TIME_NAME,
    Var,
    as_expr,
    compile_vector,
    differentiate,
    evaluate,
    free_vars,
    simplify,
)
from .phasespace import PhasePoint, _check_point


class IntegrationError(Exception):
    """Flow integration failed."""


class StepSizeUnderflowError(IntegrationError):
    """Step control collapsed (stiffness); carries the last good state."""

    def __init__(self, message: str, t_last: float, y_last: np.ndarray):
        super().__init__(message)
        self.t_last = t_last
        self.y_last = y_last


@dataclass(frozen=True)
class IntegratorOptions:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


DEFAULT_OPTIONS = IntegratorOptions()


@dataclass(frozen=True)
class IntegrationStats:
    n_steps: int
    n_rejected: int
    max_error_estimate: float


@dataclass(frozen=True)
class FlowSegment:
    """A numerically integrated trajectory with its tangent map."""

    start: PhasePoint
    end: PhasePoint
    samples: tuple[tuple[float, np.ndarray], ...]
    tangent: np.ndarray
    stats: IntegrationStats


@dataclass(frozen=True)
class VectorFieldSpec:
    """The dynamics X, optionally split into a Hamiltonian part and a
    friction part with X = X1 + X2."""

    chart: CoordinateChart
    components: tuple[Expr, ...]
    part1: tuple[Expr, ...] | None = None
    part2: tuple[Expr, ...] | None = None

    def __post_init__(self):
        d = self.chart.dim
        if len(self.components) != d:
            raise ValueError(f"expected {d} components, got {len(self.components)}")
        for c in self.components:
            if TIME_NAME in free_vars(c):
                raise ValueError("vector field components must be time independent")
        if (self.part1 is None) != (self.part2 is None):
            raise ValueError("either both split parts or neither")
        if self.part1 is not None:
            if len(self.part1) != d or len(self.part2) != d:
                raise ValueError("split parts must have the full component count")
            rng = np.random.default_rng(1729)
            for _ in range(5):
                x = rng.uniform(-1.0, 1.0, d)
                env = self.chart.env(x, 0.0)
                for c, c1, c2 in zip(self.components, self.part1, self.part2):
                    total = evaluate(c, env)
                    parts = evaluate(c1, env) + evaluate(c2, env)
                    if abs(total - parts) > 1e-9 * max(1.0, abs(total)):
                        raise ValueError("split parts do not sum to the field")

    @classmethod
    def from_components(cls, chart: CoordinateChart, components) -> "VectorFieldSpec":
        comps = tuple(as_expr(c, chart) for c in components)
        return cls(chart, comps)

    @classmethod
    def from_hamiltonian(cls, chart: CoordinateChart, hamiltonian, friction=None) -> "VectorFieldSpec":
        """Build dq_i/dt = dH/dp_i, dp_i/dt = -dH/dq_i - sum_j K_ij p_j.

        ``friction`` is an n x n constant matrix (or None for K = 0); the
        split parts are the Hamiltonian field and the -K p friction term.
        """
        H = as_expr(hamiltonian, chart)
        n = chart.n
        K = np.zeros((n, n)) if friction is None else np.array(friction, dtype=float)
        if K.shape != (n, n):
            raise ValueError(f"friction matrix must be {n}x{n}, got {K.shape}")
        part1 = []
        for name in chart.momentum_names:
            part1.append(differentiate(H, name))
        for name in chart.position_names:
            part1.append(simplify(-differentiate(H, name)))
        part2: list[Expr] = [Num(0.0)] * n
        for i in range(n):
            acc: Expr = Num(0.0)
            for j in range(n):
                if K[i, j] != 0.0:
                    acc = acc + Num(K[i, j]) * Var(chart.momentum_names[j])
            part2.append(simplify(-acc))
        components = tuple(simplify(a + b) for a, b in zip(part1, part2))
        return cls(chart, components, tuple(part1), tuple(part2))

    @cached_property
    def negated(self) -> "VectorFieldSpec":
        neg = tuple(simplify(-c) for c in self.components)
        return VectorFieldSpec(self.chart, neg)

    @cached_property
    def jacobian_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        return tuple(
            tuple(differentiate(c, name) for name in self.chart.names)
            for c in self.components
        )

    @cached_property
    def divergence_expr(self) -> Expr:
        acc: Expr = Num(0.0)
        for k, name in enumerate(self.chart.names):
            acc = acc + differentiate(self.components[k], name)
        return simplify(acc)

    @cached_property
    def _field_fn(self):
        return compile_vector(self.components, self.chart)

    @cached_property
    def _jac_fn(self):
        flat = [e for row in self.jacobian_exprs for e in row]
        return compile_vector(flat, self.chart)

    @cached_property
    def _div_fn(self):
        return compile_vector([self.divergence_expr], self.chart)

    def eval(self, coords, time: float = 0.0) -> np.ndarray:
        return np.array(self._field_fn(coords, time))

    def jacobian(self, coords, time: float = 0.0) -> np.ndarray:
        d = self.chart.dim
        return np.array(self._jac_fn(coords, time)).reshape(d, d)

    def divergence(self, coords, time: float = 0.0) -> float:
        return self._div_fn(coords, time)[0]


def eval_field(V: VectorFieldSpec, x: PhasePoint) -> np.ndarray:
    _check_point(V.chart, x)
    return V.eval(x.coords, x.time)


def compressibility(V: VectorFieldSpec, x: PhasePoint) -> float:
    """Phase-space compressibility kappa = sum_k d X^k / d x^k."""
    _check_point(V.chart, x)
    return V.divergence(x.coords, x.time)


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) with FSAL and cubic Hermite dense output.

_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_E = _DP_B5 - _DP_B4

_EPS = np.finfo(float).eps


def _hermite(tau, t0, y0, f0, t1, y1, f1):
    h = t1 - t0
    s = (tau - t0) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def _initial_step(f, y0, f0, duration, atol, rtol):
    sc = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, duration)
    try:
        y1 = y0 + h0 * f0
        f1 = f(h0, y1)
        d2 = np.sqrt(np.mean(((f1 - f0) / sc) ** 2)) / h0
    except (OverflowError, ValueError, ZeroDivisionError):
        return min(h0 * 1e-3, duration)
    dmax = max(d1, d2)
    h1 = (0.01 / dmax) ** 0.2 if dmax > 1e-15 else max(1e-6, h0 * 1e-3)
    return min(100 * h0, h1, duration)


def _integrate(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    duration: float,
    opts: IntegratorOptions,
    sample_times: Sequence[float] = (),
):
    """Integrate y' = f(tau, y) over [0, duration], duration > 0.

    Returns (y_end, samples, stats) where samples holds interpolated states
    at the requested interior times (cubic Hermite on the accepted steps).
    """
    atol, rtol = opts.abs_tol, opts.rel_tol
    t = 0.0
    y = np.array(y0, dtype=float)
    try:
        fy = np.asarray(f(t, y), dtype=float)
    except (OverflowError, ValueError, ZeroDivisionError) as exc:
        raise IntegrationError(f"cannot evaluate the field at the start state: {exc}") from exc
    h = _initial_step(f, y, fy, duration, atol, rtol)
    pending = sorted(tau for tau in sample_times if 0.0 < tau < duration)
    samples: list[tuple[float, np.ndarray]] = []
    n_accept = n_reject = 0
    max_err = 0.0
    K = [fy] + [np.empty_like(y) for _ in range(6)]
    while t < duration:
        h = min(h, duration - t)
        if h <= 16 * _EPS * max(abs(t), 1.0):
            raise StepSizeUnderflowError(
                f"step size underflow at t={t:.6g}", t, y.copy()
            )
        try:
            K[0] = fy
            for i in range(1, 6):
                yi = y + h * sum(a * K[j] for j, a in enumerate(_DP_A[i]))
                K[i] = np.asarray(f(t + _DP_C[i] * h, yi), dtype=float)
            y5 = y + h * sum(b * K[i] for i, b in enumerate(_DP_B5[:6]))
            K[6] = np.asarray(f(t + h, y5), dtype=float)
        except (OverflowError, ValueError, ZeroDivisionError):
            # stage left the field's domain; retry with a smaller step
            n_reject += 1
            h *= 0.2
            if n_accept + n_reject > opts.max_steps:
                raise IntegrationError(f"exceeded {opts.max_steps} steps") from None
            continue
        err_vec = h * sum(e * K[i] for i, e in enumerate(_DP_E))
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        with np.errstate(invalid="ignore", over="ignore"):
            err = float(np.sqrt(np.mean((err_vec / sc) ** 2)))
        if not np.isfinite(err):
            err = 2.0  # force rejection on overflow/NaN
        if err <= 1.0:
            t_new = t + h
            while pending and pending[0] <= t_new:
                tau = pending.pop(0)
                samples.append((tau, _hermite(tau, t, y, K[0], t_new, y5, K[6])))
            t, y, fy = t_new, y5, K[6]
            n_accept += 1
            max_err = max(max_err, float(np.max(np.abs(err_vec))))
            factor = 5.0 if err == 0.0 else 0.9 * err**-0.2
        else:
            n_reject += 1
            factor = max(0.2, 0.9 * err**-0.2)
        h *= min(5.0, max(0.2, factor))
        if n_accept + n_reject > opts.max_steps:
            raise IntegrationError(f"exceeded {opts.max_steps} steps")
    stats = IntegrationStats(n_accept, n_reject, max_err)
    return y, samples, stats


def _joint_rhs(V: VectorFieldSpec, sign: float):
    d = V.chart.dim

    def f(tau, s):
        x = s[:d]
        M = s[d:].reshape(d, d)
        A = V.jacobian(x)
        return sign * np.concatenate([V.eval(x), (A @ M).reshape(-1)])

    return f


def integrate_flow(
    V: VectorFieldSpec,
    x0: PhasePoint,
    t1: float,
    opts: IntegratorOptions | None = None,
    sample_times: Sequence[float] | None = None,
) -> FlowSegment:
    """Integrate the flow (and tangent map) from ``x0`` to time ``t1``.

    ``t1`` may precede ``x0.time``; backward segments integrate the negated
    field forward.  Requested ``sample_times`` are filled by dense
    interpolation of the accepted steps.
    """
    _check_point(V.chart, x0)
    opts = opts or DEFAULT_OPTIONS
    d = V.chart.dim
    t0 = x0.time
    T = float(t1) - t0
    identity = np.eye(d)
    if T == 0.0:
        samples = ((t0, x0.coords),)
        return FlowSegment(x0, x0, samples, identity, IntegrationStats(0, 0, 0.0))
    direction = 1.0 if T > 0 else -1.0
    duration = abs(T)
    taus = []
    if sample_times is not None:
        for ts in sample_times:
            tau = (float(ts) - t0) * direction
            if not 0.0 <= tau <= duration:
                raise ValueError(f"sample time {ts} outside the segment")
            taus.append(tau)
    y0 = np.concatenate([x0.coords, identity.reshape(-1)])
    f = _joint_rhs(V, direction)
    y_end, raw_samples, stats = _integrate(f, y0, duration, opts, taus)
    end = PhasePoint(y_end[:d], t1)
    samples = [(t0, x0.coords)]
    samples += [(t0 + direction * tau, y[:d].copy()) for tau, y in raw_samples]
    samples.append((t1, end.coords))
    tangent = y_end[d:].reshape(d, d)
    return FlowSegment(x0, end, tuple(samples), tangent, stats)


def tangent_map(
    V: VectorFieldSpec, x0: PhasePoint, t1: float, opts: IntegratorOptions | None = None
) -> np.ndarray:
    """Jacobian of the time-t1 flow map with respect to ``x0``."""
    return integrate_flow(V, x0, t1, opts).tangent


def variational_samples(
    V: VectorFieldSpec,
    x0: PhasePoint,
    t1: float,
    sample_times: Sequence[float],
    opts: IntegratorOptions | None = None,
):
    """(t, x, tangent) at the requested times along one integration.

    All samples come from a single step sequence, so differences between
    nearby samples are smooth in the requested times.
    """
    _check_point(V.chart, x0)
    opts = opts or DEFAULT_OPTIONS
    d = V.chart.dim
    t0 = x0.time
    T = float(t1) - t0
    if T == 0.0:
        raise ValueError("degenerate segment")
    direction = 1.0 if T > 0 else -1.0
    duration = abs(T)
    y0 = np.concatenate([x0.coords, np.eye(d).reshape(-1)])
    f = _joint_rhs(V, direction)
    want = []
    out = {}
    for ts in sample_times:
        tau = (float(ts) - t0) * direction
        if not 0.0 <= tau <= duration:
            raise ValueError(f"sample time {ts} outside the segment")
        if tau == 0.0:
            out[float(ts)] = (x0.coords.copy(), np.eye(d))
        elif tau == duration:
            want.append((tau, float(ts), "end"))
        else:
            want.append((tau, float(ts), "mid"))
    taus = [tau for tau, _, kind in want if kind == "mid"]
    y_end, raw_samples, _ = _integrate(f, y0, duration, opts, taus)
    by_tau = {tau: y for tau, y in raw_samples}
    for tau, ts, kind in want:
        y = y_end if kind == "end" else by_tau[tau]
        out[ts] = (y[:d].copy(), y[d:].reshape(d, d).copy())
    return [(float(ts), *out[float(ts)]) for ts in sample_times]


def compressibility_integral(
    V: VectorFieldSpec, x0: PhasePoint, t1: float, opts: IntegratorOptions | None = None
) -> float:
    """Integral of the compressibility along the trajectory from x0 to t1."""
    _check_point(V.chart, x0)
    opts = opts or DEFAULT_OPTIONS
    d = V.chart.dim
    T = float(t1) - x0.time
    if T == 0.0:
        return 0.0
    direction = 1.0 if T > 0 else -1.0

    def f(tau, s):
        x = s[:d]
        return direction * np.append(V.eval(x), V.divergence(x))

    y0 = np.append(x0.coords, 0.0)
    y_end, _, _ = _integrate(f, y0, abs(T), opts)
    return float(y_end[-1])
