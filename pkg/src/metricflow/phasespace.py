"""Skew-symmetric phase-space metric fields and their structural tests.

A metric field assigns a skew-symmetric 2n x 2n matrix to every phase-space
point and time.  Four representations are supported: constant matrices,
matrices of symbolic expressions, the analytic linear-friction form (see
:mod:`metricflow.friction`) and flow-transported fields (values produced on
demand by pulling the initial metric back along the flow).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .exprlang import (
    CoordinateChart,
    Expr,
    Num,
    as_expr,
    compile_vector,
    differentiate,
    TIME_NAME,
)

SKEW_TOL = 1e-12
DEGENERACY_TOL = 1e-12


class MetricError(Exception):
    """Structural failure of a metric field (shape, skewness, ...)."""


class SingularMetricError(MetricError):
    """Metric is numerically degenerate where an inverse was required."""


class DegenerateMetricWarning(UserWarning):
    """Determinant magnitude fell below the degeneracy threshold."""


@dataclass(frozen=True)
class PhasePoint:
    """A position in 2n-dimensional phase space with a time stamp."""

    coords: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        arr = np.array(self.coords, dtype=float).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)
        object.__setattr__(self, "time", float(self.time))

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


def _check_point(chart: CoordinateChart, point: PhasePoint):
    if point.dim != chart.dim:
        raise ValueError(f"point has {point.dim} coordinates, chart needs {chart.dim}")


class MetricField:
    """Interface for skew matrix-valued fields omega_kl(x, t).

    Subclasses provide ``value`` and, where derivatives are available in
    closed form, ``d_dx`` / ``d_dt``; the transported representation falls
    back to finite differences.
    """

    chart: CoordinateChart

    def value(self, coords: Sequence[float], time: float) -> np.ndarray:
        raise NotImplementedError

    def d_dx(self, coords: Sequence[float], time: float) -> np.ndarray:
        """Array D with D[k, l, m] = d omega_lm / d x_k."""
        raise NotImplementedError

    def d_dt(self, coords: Sequence[float], time: float) -> np.ndarray:
        raise NotImplementedError

    def entry_exprs(self) -> list[list[Expr]] | None:
        """Entries as expressions in (x, t) when the representation has them."""
        return None


class ConstantMetric(MetricField):
    """Representation (a): a fixed skew matrix, independent of x and t."""

    def __init__(self, chart: CoordinateChart, matrix):
        self.chart = chart
        W = np.array(matrix, dtype=float)
        if W.shape != (chart.dim, chart.dim):
            raise MetricError(f"expected {chart.dim}x{chart.dim} matrix, got {W.shape}")
        if np.max(np.abs(W + W.T)) > SKEW_TOL:
            raise MetricError("constant metric is not skew-symmetric")
        W.setflags(write=False)
        self.matrix = W

    def value(self, coords, time):
        return self.matrix

    def d_dx(self, coords, time):
        d = self.chart.dim
        return np.zeros((d, d, d))

    def d_dt(self, coords, time):
        d = self.chart.dim
        return np.zeros((d, d))

    def entry_exprs(self):
        return [[Num(float(v)) for v in row] for row in self.matrix]


def canonical_metric(chart: CoordinateChart) -> ConstantMetric:
    """The constant block metric [[0, I], [-I, 0]] in (q, p) ordering."""
    n = chart.n
    I = np.eye(n)
    Z = np.zeros((n, n))
    return ConstantMetric(chart, np.block([[Z, I], [-I, Z]]))


class ExprMetric(MetricField):
    """Representation (b): a matrix of expressions in (x, t)."""

    def __init__(self, chart: CoordinateChart, entries):
        self.chart = chart
        d = chart.dim
        if len(entries) != d or any(len(row) != d for row in entries):
            raise MetricError(f"expected {d}x{d} entries")
        self.entries = [[as_expr(v, chart) for v in row] for row in entries]

    def entry_exprs(self):
        return [row[:] for row in self.entries]

    @cached_property
    def _value_fn(self):
        flat = [e for row in self.entries for e in row]
        return compile_vector(flat, self.chart)

    @cached_property
    def _d_dx_fns(self):
        fns = []
        for name in self.chart.names:
            flat = [differentiate(e, name) for row in self.entries for e in row]
            fns.append(compile_vector(flat, self.chart))
        return fns

    @cached_property
    def _d_dt_fn(self):
        flat = [differentiate(e, TIME_NAME) for row in self.entries for e in row]
        return compile_vector(flat, self.chart)

    def value(self, coords, time):
        d = self.chart.dim
        W = np.array(self._value_fn(coords, time)).reshape(d, d)
        if np.max(np.abs(W + W.T)) > SKEW_TOL:
            raise MetricError("metric entries are not skew-symmetric at the evaluated point")
        return W

    def d_dx(self, coords, time):
        d = self.chart.dim
        return np.array([np.array(fn(coords, time)).reshape(d, d) for fn in self._d_dx_fns])

    def d_dt(self, coords, time):
        d = self.chart.dim
        return np.array(self._d_dt_fn(coords, time)).reshape(d, d)


class TransportedMetric(MetricField):
    """Representation (d): an initial metric transported along a flow.

    Values are produced on demand by pulling the time-0 metric back along
    the trajectory through the queried point (an integration per query; the
    cost is the caller's).  Derivatives use central finite differences with
    jointly integrated perturbations so the difference quotients are not
    polluted by independent step-size sequences.
    """

    def __init__(self, initial: MetricField, field, opts=None):
        from .dynamics import IntegratorOptions

        self.chart = initial.chart
        self.initial = initial
        self.field = field
        self.opts = opts or IntegratorOptions(abs_tol=1e-12, rel_tol=1e-12)
        self._cache: dict[tuple[bytes, float], np.ndarray] = {}

    def value(self, coords, time):
        from .evolution import pullback_metric

        coords = np.asarray(coords, dtype=float)
        key = (coords.tobytes(), float(time))
        hit = self._cache.get(key)
        if hit is None:
            hit = pullback_metric(
                self.field, self.initial, PhasePoint(coords, time), opts=self.opts
            )
            self._cache[key] = hit
        return hit

    def d_dx(self, coords, time):
        from .evolution import transported_d_dx

        return transported_d_dx(self.field, self.initial, coords, time, self.opts)

    def d_dt(self, coords, time):
        from .evolution import transported_d_dt

        return transported_d_dt(self.field, self.initial, coords, time, self.opts)


class MetricDeterminant(NamedTuple):
    g: float
    sqrt_g: float
    degenerate: bool


def metric_eval(M: MetricField, x: PhasePoint) -> np.ndarray:
    """Evaluate the metric at ``x``; the result is skew-symmetric."""
    _check_point(M.chart, x)
    W = M.value(x.coords, x.time)
    if np.max(np.abs(W + W.T)) > SKEW_TOL:
        raise MetricError("metric evaluation lost skew-symmetry")
    return W


def jacobi_residual(M: MetricField, x: PhasePoint) -> float:
    """Max over index triples of |d_k w_lm + d_l w_mk + d_m w_kl|."""
    _check_point(M.chart, x)
    D = M.d_dx(x.coords, x.time)
    R = D + np.transpose(D, (1, 2, 0)) + np.transpose(D, (2, 0, 1))
    return float(np.max(np.abs(R)))


def metric_determinant(M: MetricField, x: PhasePoint) -> MetricDeterminant:
    """Determinant g and density sqrt(|g|), flagging near-degeneracy."""
    W = metric_eval(M, x)
    g = float(np.linalg.det(W))
    degenerate = abs(g) < DEGENERACY_TOL
    if degenerate:
        warnings.warn(
            f"metric determinant {g:.3e} below degeneracy threshold", DegenerateMetricWarning
        )
    return MetricDeterminant(g, float(np.sqrt(abs(g))), degenerate)


def inverse_metric(M: MetricField, x: PhasePoint) -> np.ndarray:
    """Matrix inverse of the metric; skew-symmetric, raises when singular."""
    W = metric_eval(M, x)
    g = float(np.linalg.det(W))
    if abs(g) < DEGENERACY_TOL:
        raise SingularMetricError(f"metric is singular at the query point (det={g:.3e})")
    inv = np.linalg.inv(W)
    I = np.eye(W.shape[0])
    # one Newton refinement step if conditioning ate into the residual
    for _ in range(2):
        if np.max(np.abs(W @ inv - I)) <= 1e-10:
            break
        inv = inv @ (2.0 * I - W @ inv)
    return 0.5 * (inv - inv.T)
