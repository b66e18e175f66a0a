"""Tests for the tangent flow, Gram matrices, probes, and control cycles."""

import math

import numpy as np
import pytest
import scipy.linalg

from cascade.integrator import NoiseStream, StepScheme, simulate
from cascade.linearize import (
    ControlRecord,
    ControlSolveError,
    GramMatrix,
    LinearizationError,
    TangentState,
    _dense_base,
    _spin_up_state,
    control_experiment,
    foias_prodi_estimate,
    malliavin_gram,
    propagate_tangent,
    spectral_probe,
)
from cascade.model import ParameterError, ShapeMismatchError, ShellParams, ShellState

DESK = ShellParams(nu=1e-2, c=1.0, sigma=1.0, n_shells=11)


def zero_base(params, horizon, dt):
    quiet = ShellParams(nu=params.nu, c=params.c, sigma=0.0,
                        n_shells=params.n_shells)
    noise = NoiseStream(seed=0, stream_id=0, dt=dt)
    init = ShellState(u=np.zeros(params.n_shells))
    return simulate(quiet, StepScheme(), init, horizon, noise, stride=1)


def noisy_base(params, horizon, dt, seed=42, stream_id=0, spin_up=0.0):
    init = _spin_up_state(params, dt, seed, 2 * stream_id, spin_up)
    return _dense_base(params, init, horizon, dt, seed, 2 * stream_id + 1)


class TestPropagateTangent:
    def test_diagonal_decay_on_zero_base(self):
        params = ShellParams(nu=0.3, c=1.0, sigma=0.0, n_shells=6)
        base = zero_base(params, 1.0, 1e-3)
        for j in range(params.n_shells):
            xi = np.zeros(params.n_shells)
            xi[j] = 1.0
            out = propagate_tangent(base, xi, 0.0, 1.0)
            expected = math.exp(-0.3 * 4.0**j)
            assert out[j] == pytest.approx(expected, rel=1e-9)
            off = out.copy()
            off[j] = 0.0
            assert np.all(off == 0.0)

    def test_identity_on_empty_interval(self):
        base = noisy_base(DESK, 0.5, 1e-4)
        xi = np.linspace(1.0, -1.0, DESK.n_shells)
        out = propagate_tangent(base, xi, 0.2, 0.2)
        np.testing.assert_array_equal(out, xi)

    def test_linearity(self):
        base = noisy_base(DESK, 1.0, 1e-4, spin_up=2.0)
        rng = np.random.default_rng(5)
        xi = rng.standard_normal(DESK.n_shells)
        eta = rng.standard_normal(DESK.n_shells)
        combined = propagate_tangent(base, 2.0 * xi - 3.0 * eta, 0.0, 1.0)
        parts = 2.0 * propagate_tangent(base, xi, 0.0, 1.0) \
            - 3.0 * propagate_tangent(base, eta, 0.0, 1.0)
        np.testing.assert_allclose(combined, parts, rtol=1e-10, atol=1e-13)

    def test_semigroup_property(self):
        base = noisy_base(DESK, 1.0, 1e-4, spin_up=2.0)
        xi = np.ones(DESK.n_shells)
        whole = propagate_tangent(base, xi, 0.0, 1.0)
        step1 = propagate_tangent(base, xi, 0.0, 0.4)
        step2 = propagate_tangent(base, step1, 0.4, 1.0)
        np.testing.assert_allclose(step2, whole, rtol=1e-12, atol=0.0)

    @pytest.mark.parametrize("pair", range(3))
    def test_matches_finite_difference(self, pair):
        dt = 1e-4
        ubar = _spin_up_state(DESK, dt, 11, 2 * pair, 10.0)
        base = _dense_base(DESK, ubar, 1.0, dt, 11, 2 * pair + 1)
        rng = np.random.default_rng(100 + pair)
        xi = rng.standard_normal(DESK.n_shells)
        xi /= np.linalg.norm(xi)
        tangent = propagate_tangent(base, xi, 0.0, 1.0)
        h = 1e-6
        ends = []
        for sign in (1.0, -1.0):
            noise = NoiseStream(seed=11, stream_id=2 * pair + 1, dt=dt)
            shifted = ShellState(u=ubar.u + sign * h * xi, t=0.0)
            ends.append(simulate(DESK, StepScheme(), shifted, 1.0, noise,
                                 stride=10000).final.u)
        fd = (ends[0] - ends[1]) / (2.0 * h)
        err = np.linalg.norm(fd - tangent) / np.linalg.norm(tangent)
        assert err <= 1e-4

    def test_rejects_sparse_base(self):
        noise = NoiseStream(seed=1, stream_id=0, dt=1e-3)
        rec = simulate(DESK, StepScheme(), ShellState(u=np.zeros(11)), 0.1,
                       noise, stride=10)
        with pytest.raises(ParameterError, match="stride 1"):
            propagate_tangent(rec, np.ones(11), 0.0, 0.1)

    def test_rejects_interval_outside_record(self):
        base = noisy_base(DESK, 0.5, 1e-3)
        with pytest.raises(ParameterError, match="outside"):
            propagate_tangent(base, np.ones(11), 0.0, 2.0)
        with pytest.raises(ParameterError, match="outside"):
            propagate_tangent(base, np.ones(11), -0.5, 0.2)

    def test_rejects_reversed_interval(self):
        base = noisy_base(DESK, 0.5, 1e-3)
        with pytest.raises(ParameterError, match="precedes"):
            propagate_tangent(base, np.ones(11), 0.4, 0.1)

    def test_rejects_bad_shape(self):
        base = noisy_base(DESK, 0.1, 1e-3)
        with pytest.raises(ShapeMismatchError, match="xi"):
            propagate_tangent(base, np.ones(4), 0.0, 0.1)

    def test_tangent_state_container(self):
        ts = TangentState(rho=np.ones(3), t=1.5)
        assert ts.t == 1.5
        assert ts.rho.shape == (3,)


class TestMalliavinGram:
    def test_linear_case_matches_closed_form(self):
        base = noisy_base(DESK, 1.0, 1e-4, seed=3)
        gram = malliavin_gram(base, 0.0, 1.0, n_quad=64, linear_only=True)
        nu, sigma = DESK.nu, DESK.sigma
        expected = sigma**2 * (1.0 - math.exp(-2.0 * nu)) / (2.0 * nu)
        assert gram.matrix[0, 0] == pytest.approx(expected, rel=1e-6)
        off = gram.matrix.copy()
        off[0, 0] = 0.0
        assert np.all(off == 0.0)

    def test_zero_noise_gives_zero_matrix(self):
        params = ShellParams(nu=0.1, c=1.0, sigma=0.0, n_shells=5)
        base = zero_base(params, 0.5, 1e-3)
        gram = malliavin_gram(base, 0.0, 0.5)
        assert np.all(gram.matrix == 0.0)

    def test_full_model_gram_is_psd_with_positive_influence(self):
        base = noisy_base(DESK, 1.0, 1e-4, seed=9, spin_up=5.0)
        gram = malliavin_gram(base, 0.0, 1.0)
        assert gram.matrix[0, 0] > 0.0
        assert np.trace(gram.matrix) > 0.0
        np.testing.assert_array_equal(gram.matrix, gram.matrix.T)
        assert np.linalg.eigvalsh(gram.matrix)[0] >= -1e-10 * np.trace(gram.matrix)

    def test_quadrature_error_is_second_order(self):
        params = ShellParams(nu=0.5, c=1.0, sigma=1.0, n_shells=4)
        base = noisy_base(params, 1.0, 1e-5, seed=4)
        exact = (1.0 - math.exp(-1.0)) / 1.0
        errs = []
        for n_quad in (16, 32):
            gram = malliavin_gram(base, 0.0, 1.0, n_quad=n_quad,
                                  linear_only=True)
            errs.append(abs(gram.matrix[0, 0] - exact))
        assert 3.0 <= errs[0] / errs[1] <= 5.5

    def test_rejects_degenerate_interval(self):
        base = noisy_base(DESK, 0.5, 1e-3)
        with pytest.raises(ParameterError, match="s < t"):
            malliavin_gram(base, 0.3, 0.3)

    def test_rejects_bad_node_count(self):
        base = noisy_base(DESK, 0.5, 1e-3)
        with pytest.raises(ParameterError, match="n_quad"):
            malliavin_gram(base, 0.0, 0.5, n_quad=0)

    def test_gram_type_rejects_asymmetric_matrix(self):
        m = np.eye(3)
        m[0, 1] = 1e-3
        with pytest.raises(LinearizationError, match="symmetric"):
            GramMatrix(m, 0.0, 1.0, 8)

    def test_gram_type_rejects_indefinite_matrix(self):
        m = np.diag([1.0, -0.5, 2.0])
        with pytest.raises(LinearizationError, match="semidefinite"):
            GramMatrix(m, 0.0, 1.0, 8)


class TestSpectralProbe:
    def test_identity_matrix(self):
        assert spectral_probe(np.eye(11), 4, 0.5) == pytest.approx(1.0)
        assert spectral_probe(np.eye(11), 4, 1.0) == pytest.approx(1.0)

    def test_rank_one_low_mode_projection(self):
        m = np.zeros((5, 5))
        m[0, 0] = 1.0
        assert spectral_probe(m, 0, 1.0) == pytest.approx(1.0)
        assert spectral_probe(m, 0, 0.5) == pytest.approx(0.25, rel=1e-6)

    def test_full_projection_recovers_smallest_eigenvalue(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((6, 6))
        m = a @ a.T
        lam_min = np.linalg.eigvalsh(m)[0]
        assert spectral_probe(m, 5, 0.8) == pytest.approx(lam_min, rel=1e-9)

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(21)
        a = rng.standard_normal((8, 8))
        m = a @ a.T
        values = [spectral_probe(m, 2, alpha)
                  for alpha in (0.2, 0.4, 0.6, 0.8, 1.0)]
        diffs = np.diff(values)
        assert np.all(diffs >= -1e-9 * max(abs(v) for v in values))

    def test_accepts_gram_matrix_input(self):
        base = noisy_base(DESK, 1.0, 1e-4, seed=9, spin_up=5.0)
        gram = malliavin_gram(base, 0.0, 1.0)
        value = spectral_probe(gram, 4, 0.5)
        assert value > 0.0

    def test_rejects_indefinite_input(self):
        with pytest.raises(ParameterError, match="semidefinite"):
            spectral_probe(np.diag([1.0, -1.0]), 0, 0.5)

    def test_rejects_bad_alpha_and_low_index(self):
        with pytest.raises(ParameterError, match="alpha"):
            spectral_probe(np.eye(3), 1, 0.0)
        with pytest.raises(ParameterError, match="alpha"):
            spectral_probe(np.eye(3), 1, 1.5)
        with pytest.raises(ParameterError, match="N_low"):
            spectral_probe(np.eye(3), 3, 0.5)


class TestFoiasProdi:
    def test_zero_base_matches_viscous_decay(self):
        params = ShellParams(nu=0.1, c=1.0, sigma=0.0, n_shells=6)
        table = foias_prodi_estimate(params, [2, 4], n_samples=2, dt=1e-3,
                                     spin_up=0.0)
        assert table.shape == (2, 3)
        assert table[0, 0] == 2
        assert table[0, 1] == pytest.approx(math.exp(-0.1 * 4.0**3), rel=1e-9)
        assert table[1, 1] == pytest.approx(math.exp(-0.1 * 4.0**5), rel=1e-9)
        assert table[:, 2] == pytest.approx(0.0, abs=1e-12)

    def test_top_cutoff_gives_zero_map(self):
        params = ShellParams(nu=0.1, c=1.0, sigma=0.0, n_shells=4)
        table = foias_prodi_estimate(params, 3, n_samples=2, dt=1e-3,
                                     spin_up=0.0)
        assert table[0, 1] == 0.0

    def test_noisy_estimates_decrease_in_cutoff(self):
        params = ShellParams(nu=1e-2, c=1.0, sigma=1.0, n_shells=7)
        table = foias_prodi_estimate(params, [1, 4], n_samples=2, dt=1e-3,
                                     seed=8, spin_up=1.0)
        assert table[0, 1] > table[1, 1] > 0.0

    def test_rejects_out_of_range_cutoff(self):
        params = ShellParams(nu=0.1, c=1.0, sigma=0.0, n_shells=4)
        with pytest.raises(ParameterError, match="n_cut"):
            foias_prodi_estimate(params, 4, n_samples=2, dt=1e-3)

    def test_rejects_undersized_sample_count(self):
        params = ShellParams(nu=0.1, c=1.0, sigma=0.0, n_shells=4)
        with pytest.raises(ParameterError, match="n_samples"):
            foias_prodi_estimate(params, 1, n_samples=1, dt=1e-3)


class TestControlExperiment:
    def test_zero_perturbation_stays_zero(self):
        record = control_experiment(DESK, beta=1e-4, n_cycles=2,
                                    xi=np.zeros(11), dt=1e-3, spin_up=0.5)
        assert np.all(record.rho_norms == 0.0)
        assert np.all(record.cumulative_energy == 0.0)

    def test_record_lengths(self):
        record = control_experiment(DESK, beta=1e-2, n_cycles=3,
                                    xi=np.ones(11), dt=1e-3, spin_up=0.5)
        assert record.rho_norms.shape == (4,)
        assert record.cumulative_energy.shape == (3,)
        assert record.beta == 1e-2
        assert np.all(np.diff(record.cumulative_energy) >= -1e-12)

    def test_huge_beta_tracks_free_tangent(self):
        xi = np.zeros(11)
        xi[0] = 1.0
        record = control_experiment(DESK, beta=1e12, n_cycles=2, xi=xi,
                                    dt=1e-3, seed=6, spin_up=1.0)
        init = _spin_up_state(DESK, 1e-3, 6, 0, 1.0)
        base = _dense_base(DESK, init, 4.0, 1e-3, 6, 1)
        free = [np.linalg.norm(propagate_tangent(base, xi, 0.0, 2.0 * k))
                for k in range(3)]
        np.testing.assert_allclose(record.rho_norms, free, rtol=1e-6)

    def test_moderate_beta_contracts_perturbation(self):
        xi = np.zeros(11)
        xi[0] = 1.0
        record = control_experiment(DESK, beta=1e-4, n_cycles=3, xi=xi,
                                    dt=1e-4, seed=2, spin_up=10.0)
        assert record.rho_norms[-1] < record.rho_norms[0]
        assert np.all(np.isfinite(record.cumulative_energy))

    def test_solve_failure_names_beta(self, monkeypatch):
        def failing(*args, **kwargs):
            raise scipy.linalg.LinAlgError("not positive definite")

        monkeypatch.setattr(scipy.linalg, "cho_factor", failing)
        with pytest.raises(ControlSolveError, match="beta"):
            control_experiment(DESK, beta=1e-20, n_cycles=1, xi=np.ones(11),
                               dt=1e-3, spin_up=0.0)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ParameterError, match="beta"):
            control_experiment(DESK, beta=0.0, n_cycles=1, xi=np.ones(11),
                               dt=1e-3)
        with pytest.raises(ParameterError, match="n_cycles"):
            control_experiment(DESK, beta=1.0, n_cycles=0, xi=np.ones(11),
                               dt=1e-3)
        with pytest.raises(ShapeMismatchError, match="xi"):
            control_experiment(DESK, beta=1.0, n_cycles=1, xi=np.ones(3),
                               dt=1e-3)

    def test_record_type_rejects_invalid_data(self):
        with pytest.raises(LinearizationError, match="nonnegative"):
            ControlRecord(1.0, np.array([1.0, -0.1]), np.array([0.0]))
        with pytest.raises(LinearizationError, match="nondecreasing"):
            ControlRecord(1.0, np.array([1.0, 0.5]), np.array([2.0, 1.0]))
