"""Closed-form invariant metrics for linear-friction systems.

For dq_i/dt = dH/dp_i, dp_i/dt = -dH/dq_i - K_ij p_j with H = T(p) + U(q),
the block metric [[0, G(t)], [-G(t)^T, 0]] with G solving dG/dt = G K is an
integral of motion, G(t0) = identity.  For constant K this is a plain
matrix exponential; for a diagonal time-dependent K the diagonal entries
are exp of the integrated coefficients.

The closed form silently assumes that unequal damping rates never couple
through the potential (or kinetic) Hessian; ``applicability_check`` guards
that gap and predicts the residual term when it is violated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

from .dynamics import VectorFieldSpec, compressibility
from .exprlang import (
    CoordinateChart,
    Expr,
    TIME_NAME,
    as_expr,
    differentiate,
    evaluate,
    free_vars,
    is_zero,
    to_string,
)
from .phasespace import MetricField, PhasePoint


class FrictionError(Exception):
    """Unsupported friction configuration."""


class ApplicabilityError(FrictionError):
    """Closed form requested for a system outside its proven scope."""


class ApplicabilityWarning(UserWarning):
    """Closed form constructed despite a failed applicability check."""


@dataclass(frozen=True)
class ApplicabilityResult:
    ok: bool
    detail: str | None = None
    pair: tuple[int, int] | None = None

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class FrictionSystem:
    """H = T(p) + U(q) with a linear friction term -K p.

    ``friction`` may be a constant n x n matrix or a sequence of n
    expressions in ``t`` (a diagonal time-dependent matrix).  Any other
    shape is rejected; a general time-dependent non-diagonal K(t) would
    need a time-ordered product where the closed form writes a plain
    exponential, so it is refused rather than silently substituted.
    """

    chart: CoordinateChart
    hamiltonian: Expr
    k_matrix: np.ndarray | None
    k_diagonal: tuple[Expr, ...] | None

    def __post_init__(self):
        n = self.chart.n
        H = self.hamiltonian
        for qname in self.chart.position_names:
            dq = differentiate(H, qname)
            for pname in self.chart.momentum_names:
                mixed = differentiate(dq, pname)
                if not is_zero(mixed):
                    raise FrictionError(
                        f"hamiltonian couples {qname} and {pname}: "
                        "expected the additive form T(p) + U(q)"
                    )
        if TIME_NAME in free_vars(H):
            raise FrictionError("hamiltonian must be time independent")
        if (self.k_matrix is None) == (self.k_diagonal is None):
            raise FrictionError("exactly one friction representation is required")
        if self.k_matrix is not None:
            if self.k_matrix.shape != (n, n):
                raise FrictionError(f"friction matrix must be {n}x{n}")
        else:
            if len(self.k_diagonal) != n:
                raise FrictionError(f"expected {n} diagonal friction entries")
            for e in self.k_diagonal:
                extra = free_vars(e) - {TIME_NAME}
                if extra:
                    raise FrictionError(
                        f"diagonal friction entries may depend on t only, found {sorted(extra)}"
                    )

    @classmethod
    def build(cls, chart: CoordinateChart, hamiltonian, friction) -> "FrictionSystem":
        H = as_expr(hamiltonian, chart)
        n = chart.n
        if friction is None:
            return cls(chart, H, np.zeros((n, n)), None)
        if np.isscalar(friction) and not isinstance(friction, str):
            return cls(chart, H, float(friction) * np.eye(n), None)
        friction = list(friction) if not isinstance(friction, np.ndarray) else friction
        if isinstance(friction, np.ndarray) or (
            friction and not isinstance(friction[0], (str, Expr))
        ):
            arr = np.array(friction, dtype=float)
            if arr.ndim == 1:
                arr = np.diag(arr)
            return cls(chart, H, arr, None)
        diag = tuple(as_expr(e, chart) for e in friction)
        return cls(chart, H, None, diag)

    @property
    def time_dependent(self) -> bool:
        return self.k_diagonal is not None and any(
            TIME_NAME in free_vars(e) for e in self.k_diagonal
        )

    def friction_at(self, time: float) -> np.ndarray:
        if self.k_matrix is not None:
            return self.k_matrix
        return np.diag([evaluate(e, {TIME_NAME: time}) for e in self.k_diagonal])

    @cached_property
    def vector_field(self) -> VectorFieldSpec:
        """The phase-space field; requires a constant friction matrix."""
        if self.k_matrix is None:
            raise FrictionError(
                "time-dependent friction has no autonomous vector field; "
                "only the analytic metric path supports it"
            )
        return VectorFieldSpec.from_hamiltonian(self.chart, self.hamiltonian, self.k_matrix)

    def friction_integral(self, t0: float, t: float) -> np.ndarray:
        """Matrix of integrated friction coefficients over [t0, t]."""
        if self.k_matrix is not None:
            return (t - t0) * self.k_matrix
        out = np.zeros((self.chart.n, self.chart.n))
        for j, e in enumerate(self.k_diagonal):
            if TIME_NAME not in free_vars(e):
                out[j, j] = (t - t0) * evaluate(e, {})
                continue
            val, err = quad(
                lambda tau: evaluate(e, {TIME_NAME: tau}), t0, t, epsabs=1e-12, epsrel=1e-12
            )
            if err > 1e-9 * max(1.0, abs(val)):
                raise FrictionError(
                    f"quadrature of friction entry {j + 1} did not converge (err={err:.2e})"
                )
            out[j, j] = val
        return out

    def growth_matrix(self, t0: float, t: float) -> np.ndarray:
        """G(t) with dG/dt = G K and G(t0) = identity."""
        if self.k_matrix is not None:
            return expm((t - t0) * self.k_matrix)
        return np.diag(np.exp(np.diag(self.friction_integral(t0, t))))


class FrictionAnalyticMetric(MetricField):
    """Representation (c): the invariant block metric [[0, G], [-G^T, 0]]."""

    def __init__(self, system: FrictionSystem, t0: float = 0.0):
        self.chart = system.chart
        self.system = system
        self.t0 = float(t0)

    def _blocks(self, G: np.ndarray) -> np.ndarray:
        Z = np.zeros_like(G)
        return np.block([[Z, G], [-G.T, Z]])

    def value(self, coords, time):
        return self._blocks(self.system.growth_matrix(self.t0, float(time)))

    def d_dx(self, coords, time):
        d = self.chart.dim
        return np.zeros((d, d, d))

    def d_dt(self, coords, time):
        G = self.system.growth_matrix(self.t0, float(time))
        K = self.system.friction_at(float(time))
        return self._blocks(G @ K)


def applicability_check(sys: FrictionSystem) -> ApplicabilityResult:
    """Guard for the closed form's unstated separability assumption.

    Passes when all damping rates coincide (scalar K), or when every pair
    of degrees of freedom with distinct rates is uncoupled in both the
    potential and the kinetic Hessians.  A non-diagonal K has no proven
    pair criterion and is reported conservatively.
    """
    n = sys.chart.n
    if sys.k_matrix is not None:
        K = sys.k_matrix
        off = np.abs(K - np.diag(np.diag(K)))
        if off.max() > 0.0:
            i, j = np.unravel_index(np.argmax(off), off.shape)
            return ApplicabilityResult(
                False,
                detail=(
                    f"friction matrix couples degrees of freedom ({i + 1},{j + 1}); "
                    "the closed form is only proven for diagonal damping - verify "
                    "with the invariance residual"
                ),
                pair=(int(i) + 1, int(j) + 1),
            )
        rates = np.diag(K)
        unequal = [
            (i, j) for i in range(n) for j in range(i + 1, n) if rates[i] != rates[j]
        ]
    else:
        unequal = []
        for i in range(n):
            for j in range(i + 1, n):
                if not _exprs_probably_equal(sys.k_diagonal[i], sys.k_diagonal[j]):
                    unequal.append((i, j))
    if not unequal:
        return ApplicabilityResult(True)
    H = sys.hamiltonian
    qn, pn = sys.chart.position_names, sys.chart.momentum_names
    for i, j in unequal:
        u_mixed = differentiate(differentiate(H, qn[i]), qn[j])
        t_mixed = differentiate(differentiate(H, pn[i]), pn[j])
        if not is_zero(u_mixed) or not is_zero(t_mixed):
            coupling = u_mixed if not is_zero(u_mixed) else t_mixed
            return ApplicabilityResult(
                False,
                detail=(
                    f"degrees of freedom ({i + 1},{j + 1}) have unequal damping but are "
                    f"coupled through '{to_string(coupling)}'; the metric picks up a "
                    f"residual proportional to (exp of rate {i + 1} integral - exp of "
                    f"rate {j + 1} integral) times that mixed derivative"
                ),
                pair=(i + 1, j + 1),
            )
    return ApplicabilityResult(True)


def _exprs_probably_equal(a: Expr, b: Expr) -> bool:
    if a == b:
        return True
    rng = np.random.default_rng(31)
    for _ in range(16):
        tval = rng.uniform(0.0, 3.0)
        if abs(evaluate(a, {TIME_NAME: tval}) - evaluate(b, {TIME_NAME: tval})) > 1e-12:
            return False
    return True


def analytic_metric(
    sys: FrictionSystem, t0: float = 0.0, *, allow_inapplicable: bool = False
) -> FrictionAnalyticMetric:
    """The invariant block metric anchored at G(t0) = identity.

    Refuses systems that fail the applicability check unless the caller
    acknowledges with ``allow_inapplicable=True`` (a warning is emitted and
    the returned metric will show a nonzero invariance residual).
    """
    result = applicability_check(sys)
    if not result.ok:
        if not allow_inapplicable:
            raise ApplicabilityError(result.detail)
        warnings.warn(result.detail, ApplicabilityWarning)
    return FrictionAnalyticMetric(sys, t0)


def determinant_factor(sys: FrictionSystem, t0: float, t: float) -> float:
    """The volume density sqrt(g)(t) = exp integral of trace K.

    Cross-checked against the determinant of the assembled metric and, for
    constant K, against the compressibility of the actual vector field.
    """
    trace_integral = float(np.trace(sys.friction_integral(t0, t)))
    value = float(np.exp(trace_integral))
    metric = FrictionAnalyticMetric(sys, t0)
    W = metric.value(np.zeros(sys.chart.dim), t)
    sqrt_g = float(np.sqrt(abs(np.linalg.det(W))))
    if abs(sqrt_g - value) > 1e-10 * max(1.0, abs(value)):
        raise FrictionError(
            f"determinant factor {value} disagrees with the metric determinant {sqrt_g}"
        )
    if sys.k_matrix is not None:
        kappa = compressibility(sys.vector_field, PhasePoint(np.zeros(sys.chart.dim)))
        via_kappa = float(np.exp(-kappa * (t - t0)))
        if abs(via_kappa - value) > 1e-8 * max(1.0, abs(value)):
            raise FrictionError(
                f"determinant factor {value} disagrees with exp(-kappa dt) = {via_kappa}"
            )
    return value
