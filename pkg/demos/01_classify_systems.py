"""Classifying dynamics as Hamiltonian or not.

A system is Hamiltonian with respect to a phase-space metric exactly when
the 1-form obtained by contracting the metric with the vector field is
closed.  The residual matrix of that closedness condition is computable
pointwise; sampling it over phase space yields a verdict.
"""

import numpy as np

from metricflow import (
    CoordinateChart,
    PhasePoint,
    VectorFieldSpec,
    canonical_helmholtz,
    canonical_metric,
    classify,
    helmholtz_residual,
)

chart = CoordinateChart(1)
metric = canonical_metric(chart)

print("=== Harmonic oscillator: H = p^2/2 + q^2/2 ===")
harmonic = VectorFieldSpec.from_hamiltonian(chart, "p1^2/2 + q1^2/2")
report = classify(harmonic, metric, count=50, seed=0)
print(f"verdict: {report.verdict}   max residual: {report.max_abs:.3e}")

print()
print("=== Damped oscillator: the same H plus friction -p ===")
damped = VectorFieldSpec.from_hamiltonian(chart, "p1^2/2 + q1^2/2", [[1.0]])
report = classify(damped, metric, count=50, seed=0)
print(f"verdict: {report.verdict}   max residual: {report.max_abs:.3e}")

x = PhasePoint([0.7, -0.2])
J = helmholtz_residual(damped, metric, x)
print(f"residual matrix at {x.coords}:")
print(J)
print("the off-diagonal entry equals the friction coefficient at every point")

print()
print("=== The three canonical condition blocks ===")
# written as dq/dt = G(q,p), dp/dt = F(q,p)
R1, R2, R3 = canonical_helmholtz(["p1"], ["-q1 - p1"], chart, x)
print("momenta antisymmetry block:", R1.ravel())
print("cross symmetry block:      ", R2.ravel(), " <- friction shows up here")
print("positions antisymmetry:    ", R3.ravel())

print()
print("=== A coupled but still Hamiltonian field ===")
chart2 = CoordinateChart(2)
V = VectorFieldSpec.from_hamiltonian(chart2, "p1*p2 + q1^2*q2")
report = classify(V, canonical_metric(chart2), count=50, seed=0)
print(f"verdict: {report.verdict}   max residual: {report.max_abs:.3e}")
