"""Generalized Poisson brackets with the evolved metric.

With the raised (inverse) metric the bracket {A, B} remains a Lie bracket
exactly when the lower-index metric satisfies the closedness identity.  A
frozen metric on a dissipative system breaks the term-by-term time
differentiation rule d/dt{A,B} = {dA,B} + {A,dB}; the invariant metric
restores it.
"""

import numpy as np

from metricflow import (
    CoordinateChart,
    ExprMetric,
    PhasePoint,
    bracket_jacobi_residual,
    canonical_metric,
    leibniz_defect,
    poisson_bracket,
)
from metricflow.friction import FrictionSystem, analytic_metric

chart = CoordinateChart(1)
system = FrictionSystem.build(chart, "p1^2/2 + q1^2/2", 1.0)
V = system.vector_field
static = canonical_metric(chart)
invariant = analytic_metric(system)

print("=== Canonical relations ===")
x = PhasePoint([0.3, 0.7])
print(f"{{q1, p1}} = {poisson_bracket('q1', 'p1', static, x)}")
print(f"{{q1, q1}} = {poisson_bracket('q1', 'q1', static, x)}")
xt = PhasePoint([0.3, 0.7], 1.0)
print(f"with the invariant metric at t=1: {{q1, p1}} = "
      f"{poisson_bracket('q1', 'p1', invariant, xt):.6f} (= e^-1)")

print()
print("=== Bracket-level Jacobi identity ===")
r = bracket_jacobi_residual("q1", "p1", "q1*p1", invariant, PhasePoint([0.4, 0.9], 0.7))
print(f"invariant metric, triple (q1, p1, q1*p1): residual = {r:.3e}")

chart2 = CoordinateChart(2)
broken = ExprMetric(
    chart2,
    [
        ["0", "1+p1", "0", "0"],
        ["-(1+p1)", "0", "0", "0"],
        ["0", "0", "0", "1"],
        ["0", "0", "-1", "0"],
    ],
)
x2 = PhasePoint([0.2, -0.3, 0.1, 0.4])
r = bracket_jacobi_residual("q1", "q2", "p2", broken, x2)
print(f"a skew field violating the closedness identity: residual = {r:.6f}")
print("(nonzero: such brackets do not define a Lie algebra)")

print()
print("=== The time-differentiation defect ===")
x = PhasePoint([0.5, 0.8])
d = leibniz_defect("q1", "p1", V, static, x)
print(f"frozen canonical metric:  closed form {d.formula:+.6f}, "
      f"measured {d.numerical:+.6f}")
d = leibniz_defect("q1", "p1", V, invariant, PhasePoint([0.5, 0.8], 1.0))
print(f"invariant metric:         closed form {d.formula:+.6f}, "
      f"measured {d.numerical:+.3e}")
print("the invariant metric makes brackets of conserved quantities conserved")
