import numpy as np
import pytest
from scipy.linalg import expm

from metricflow import (
    IntegrationError,
    IntegratorOptions,
    PhasePoint,
    VectorFieldSpec,
    compressibility,
    compressibility_integral,
    eval_field,
    integrate_flow,
    tangent_map,
)
from metricflow.exprlang import evaluate_at, parse


def fd_divergence(V, x, h=1e-6):
    """Finite-difference divergence oracle."""
    total = 0.0
    for k in range(V.chart.dim):
        xp = np.array(x.coords, dtype=float)
        xm = xp.copy()
        xp[k] += h
        xm[k] -= h
        total += (V.eval(xp)[k] - V.eval(xm)[k]) / (2 * h)
    return total


class TestVectorFieldSpec:
    def test_damped_field_values(self, damped):
        assert np.allclose(eval_field(damped, PhasePoint([1.0, 0.0])), [0.0, -1.0])
        assert np.allclose(eval_field(damped, PhasePoint([0.0, 1.0])), [1.0, -1.0])

    def test_zero_field(self, chart1):
        V = VectorFieldSpec.from_components(chart1, ["0", "0"])
        assert np.allclose(eval_field(V, PhasePoint([0.3, 0.7])), [0.0, 0.0])

    def test_time_dependence_rejected(self, chart1):
        with pytest.raises(ValueError):
            VectorFieldSpec.from_components(chart1, ["p1", "-q1*t"])

    def test_split_must_sum(self, chart1):
        with pytest.raises(ValueError):
            VectorFieldSpec(
                chart1,
                (parse("p1", chart1), parse("-q1", chart1)),
                (parse("p1", chart1), parse("-q1", chart1)),
                (parse("0", chart1), parse("p1", chart1)),
            )

    def test_hamiltonian_split(self, damped):
        x = np.array([0.4, -0.3])
        total = damped.eval(x)
        p1 = np.array([evaluate_at(e, damped.chart, x) for e in damped.part1])
        p2 = np.array([evaluate_at(e, damped.chart, x) for e in damped.part2])
        assert np.allclose(total, p1 + p2, atol=1e-14)
        assert np.allclose(p2, [0.0, 0.3], atol=1e-14)


class TestCompressibility:
    def test_damped_constant(self, damped):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = PhasePoint(rng.uniform(-2, 2, 2))
            assert compressibility(damped, x) == pytest.approx(-1.0, abs=1e-14)

    def test_hamiltonian_fields_divergence_free(self, chart2):
        rng = np.random.default_rng(3)
        H = "(p1^2+p2^2)/2 + q1^2*q2 + sin(q1)*cos(q2) + q2^4/4"
        V = VectorFieldSpec.from_hamiltonian(chart2, H)
        for _ in range(10):
            x = PhasePoint(rng.uniform(-1.5, 1.5, 4))
            assert abs(compressibility(V, x)) < 1e-10

    def test_nonlinear_example(self, chart1):
        V = VectorFieldSpec.from_components(chart1, ["p1", "-q1 - q1^2*p1"])
        x = PhasePoint([2.0, 0.7])
        got = compressibility(V, x)
        assert got == pytest.approx(-4.0, abs=1e-12)
        assert got == pytest.approx(fd_divergence(V, x), abs=1e-6)


class TestIntegrateFlow:
    def test_harmonic_half_turn(self, harmonic):
        seg = integrate_flow(harmonic, PhasePoint([1.0, 0.0]), np.pi)
        assert np.max(np.abs(seg.end.coords - [-1.0, 0.0])) < 1e-8

    def test_identity_segment(self, damped):
        x0 = PhasePoint([0.3, 0.4], 1.5)
        seg = integrate_flow(damped, x0, 1.5)
        assert seg.end is x0 or np.array_equal(seg.end.coords, x0.coords)
        assert np.array_equal(seg.tangent, np.eye(2))

    def test_energy_monotone_under_friction(self, damped, chart1):
        # dH/dt = -K p^2 <= 0 along trajectories
        H = parse("p1^2/2 + q1^2/2", chart1)
        times = np.linspace(0.0, 4.0, 41)[1:]
        seg = integrate_flow(damped, PhasePoint([1.0, 0.5]), 4.0, sample_times=times)
        energies = [evaluate_at(H, chart1, x) for _, x in seg.samples]
        diffs = np.diff(energies)
        assert np.all(diffs <= 1e-10)

    def test_backward_round_trip(self, damped):
        x0 = PhasePoint([0.8, -0.2])
        fwd = integrate_flow(damped, x0, 2.0)
        back = integrate_flow(damped, fwd.end, 0.0)
        assert np.max(np.abs(back.end.coords - x0.coords)) < 1e-8

    def test_dense_samples_match_direct(self, damped):
        x0 = PhasePoint([1.0, 0.0])
        times = [0.31, 0.97, 1.55]
        seg = integrate_flow(damped, x0, 2.0, sample_times=times)
        sampled = {t: x for t, x in seg.samples}
        for t in times:
            direct = integrate_flow(damped, x0, t).end.coords
            assert np.max(np.abs(sampled[t] - direct)) < 1e-8

    def test_blowup_reported(self, chart1):
        V = VectorFieldSpec.from_components(chart1, ["1 + q1^2", "0"])
        with pytest.raises(IntegrationError):
            integrate_flow(V, PhasePoint([0.0, 0.0]), 2.0)

    def test_overflowing_field_reported(self, chart1):
        # dx/dt = e^x from x=1 blows up at t = 1/e; exp overflow inside the
        # stages must surface as an integration error, not a raw exception
        V = VectorFieldSpec.from_components(chart1, ["exp(q1)", "0"])
        with pytest.raises(IntegrationError) as exc:
            integrate_flow(V, PhasePoint([1.0, 0.0]), 1.0)
        assert getattr(exc.value, "t_last", np.exp(-1.0)) == pytest.approx(
            np.exp(-1.0), abs=1e-3
        )

    def test_bad_start_state_reported(self, chart1):
        V = VectorFieldSpec.from_components(chart1, ["log(q1)", "0"])
        with pytest.raises(IntegrationError):
            integrate_flow(V, PhasePoint([-1.0, 0.0]), 1.0)

    def test_stats_populated(self, harmonic):
        seg = integrate_flow(harmonic, PhasePoint([1.0, 0.0]), 1.0)
        assert seg.stats.n_steps > 0
        assert seg.stats.max_error_estimate < 1e-9


class TestTangentMap:
    def test_identity_at_start(self, damped):
        M = tangent_map(damped, PhasePoint([0.5, 0.5]), 0.0)
        assert np.array_equal(M, np.eye(2))

    def test_linear_field_matches_expm(self, damped):
        # damped oscillator is linear: M = exp(t A), A = [[0,1],[-1,-1]]
        A = np.array([[0.0, 1.0], [-1.0, -1.0]])
        for t in (0.5, 1.0, 2.3):
            M = tangent_map(damped, PhasePoint([0.3, -0.1]), t)
            assert np.max(np.abs(M - expm(t * A))) < 1e-8

    def test_abel_liouville(self, damped):
        # det M = exp(integral of kappa) = exp(-t) for unit friction
        for t in (0.7, 1.5):
            M = tangent_map(damped, PhasePoint([0.2, 0.9]), t)
            assert np.linalg.det(M) == pytest.approx(np.exp(-t), abs=1e-8)

    def test_det_positive_along_flow(self, damped):
        M = tangent_map(damped, PhasePoint([1.0, 1.0]), 3.0)
        assert np.linalg.det(M) > 0


class TestFlowProperties:
    def _random_fields(self, chart, seed, count):
        rng = np.random.default_rng(seed)
        fields = []
        for _ in range(count):
            a, b, c = rng.uniform(-0.5, 0.5, 3)
            comps = [
                f"p1 + {a:.3f}*q1^2",
                f"-q1 - {b:.3f}*p1 + {c:.3f}*q1*p1",
            ]
            fields.append(VectorFieldSpec.from_components(chart, comps))
        return fields

    def test_det_tangent_equals_exp_kappa_integral(self, chart1):
        for V in self._random_fields(chart1, 17, 5):
            x0 = PhasePoint([0.3, -0.2])
            t = 0.8
            M = tangent_map(V, x0, t)
            s = compressibility_integral(V, x0, t)
            assert np.linalg.det(M) == pytest.approx(np.exp(s), rel=1e-7)

    def test_cocycle_composition(self, chart1):
        for V in self._random_fields(chart1, 23, 3):
            x0 = PhasePoint([0.4, 0.1])
            seg1 = integrate_flow(V, x0, 0.6)
            seg2 = integrate_flow(V, seg1.end, 1.1)
            M_total = tangent_map(V, x0, 1.1)
            assert np.max(np.abs(seg2.tangent @ seg1.tangent - M_total)) < 1e-7

    def test_tolerance_scaling(self, harmonic):
        # two decades of tolerance reduce the endpoint error substantially
        x0 = PhasePoint([1.0, 0.0])
        exact = np.array([np.cos(2.0), -np.sin(2.0)])

        def err(tol):
            opts = IntegratorOptions(abs_tol=tol, rel_tol=tol)
            seg = integrate_flow(harmonic, x0, 2.0, opts)
            return np.max(np.abs(seg.end.coords - exact))

        assert err(1e-6) / max(err(1e-8), 1e-16) >= 4.0
