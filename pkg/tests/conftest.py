import numpy as np
import pytest

from metricflow import CoordinateChart, FrictionSystem, VectorFieldSpec, canonical_metric


@pytest.fixture
def chart1():
    return CoordinateChart(1)


@pytest.fixture
def chart2():
    return CoordinateChart(2)


@pytest.fixture
def harmonic(chart1):
    """Undamped oscillator, H = p^2/2 + q^2/2."""
    return VectorFieldSpec.from_hamiltonian(chart1, "p1^2/2 + q1^2/2")


@pytest.fixture
def damped(chart1):
    """Damped oscillator with unit friction."""
    return VectorFieldSpec.from_hamiltonian(chart1, "p1^2/2 + q1^2/2", [[1.0]])


@pytest.fixture
def damped_system(chart1):
    return FrictionSystem.build(chart1, "p1^2/2 + q1^2/2", 1.0)


@pytest.fixture
def damped2_system(chart2):
    """Two degrees of freedom, K = diag(1, 2), separable quadratic H."""
    return FrictionSystem.build(chart2, "(p1^2+p2^2)/2 + (q1^2+q2^2)/2", [1.0, 2.0])


@pytest.fixture
def quartic_system(chart1):
    """Nonlinear separable system H = p^2/2 + q^4/4 with unit friction."""
    return FrictionSystem.build(chart1, "p1^2/2 + q1^4/4", 1.0)


@pytest.fixture
def canonical1(chart1):
    return canonical_metric(chart1)


@pytest.fixture
def canonical2(chart2):
    return canonical_metric(chart2)


def random_points(dim, count, seed, box=1.0, tmax=0.0):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(-box, box, (count, dim))
    times = rng.uniform(0.0, tmax, count) if tmax > 0 else np.zeros(count)
    return coords, times
