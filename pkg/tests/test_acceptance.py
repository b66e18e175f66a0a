"""End-to-end acceptance checks at the reference configuration.

One test per shipped criterion, numbered a01..a11 so a verbose run
prints one pass/fail line for each.  The three stationary ensembles and
the viscosity sweep are module-scoped fixtures and dominate the wall
time; expect roughly 80 minutes on one core.  Unit-level behavior is
covered by the other test modules; this file exercises whole-pipeline
claims at workstation scale (19 shells, c = 1, sigma = 1, nu = 1e-4).

Printed diagnostics record the measured values behind each assertion;
run with `-rA` (or `-s`) to see them for passing tests.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
import pytest

from cascade.hormander import PolyVectorField, lie_bracket, verify_span
from cascade.integrator import NoiseStream, StepScheme, simulate, suggested_dt
from cascade.linearize import (
    control_experiment,
    foias_prodi_estimate,
    malliavin_gram,
    propagate_tangent,
    spectral_probe,
)
from cascade.model import ShellParams, ShellState
from cascade.stats import (
    MomentAccumulator,
    balance_residuals,
    default_burn_in,
    dissipation_rate,
    spectrum_slope,
    time_average_scan,
)
DESK = ShellParams(nu=1e-4, c=1.0, sigma=1.0, n_shells=19)
DT_REF = suggested_dt(DESK, 1.0)
STRIDE_REF = 4096
HORIZON_REF = 300.0
BURN_REF = default_burn_in(DESK.nu, HORIZON_REF)
BATCH = 8000
INERTIAL = (3, 12)
HALF_FORCING = DESK.sigma**2 / 2.0


def random_field(rng, n_coords, max_degree=2, n_terms=4):
    terms = {}
    for _ in range(n_terms):
        coord = int(rng.integers(n_coords))
        exps = [0] * n_coords
        for _ in range(int(rng.integers(max_degree + 1))):
            exps[int(rng.integers(n_coords))] += 1
        terms[(coord, tuple(exps))] = float(rng.normal())
    return PolyVectorField(n_coords, terms)


class EnsembleResult(NamedTuple):
    acc: MomentAccumulator
    energy_streams: list[tuple[np.ndarray, np.ndarray]]
    h1_integral: tuple[np.ndarray, np.ndarray]
    clamp_total: int


def run_ensemble(
    params: ShellParams,
    n_traj: int,
    seed: int,
    init_u: np.ndarray,
    horizon: float,
    dt: float,
    stride: int,
    burn_in: float,
) -> EnsembleResult:
    """Simulate independent trajectories and merge their moment streams."""
    merged = MomentAccumulator(params.n_shells, burn_in=burn_in, batch_length=BATCH)
    energy_streams = []
    h1_integral = None
    clamp_total = 0
    for i in range(n_traj):
        rec = simulate(
            params,
            StepScheme(),
            ShellState(u=init_u.copy()),
            horizon=horizon,
            noise=NoiseStream(seed=seed, stream_id=i, dt=dt),
            stride=stride,
        )
        part = MomentAccumulator(
            params.n_shells, burn_in=burn_in, batch_length=BATCH
        )
        part.record_block(rec.times, rec.states)
        merged = merged.merge(part)
        energy_streams.append((rec.times, np.sum(rec.states**2, axis=1)))
        if i == 0:
            h1_integral = (rec.times, rec.int_h1_at_samples)
        clamp_total += rec.clamp_count
    return EnsembleResult(merged, energy_streams, h1_integral, clamp_total)


@pytest.fixture(scope="module")
def ens_a():
    """Reference ensemble: 16 trajectories from rest."""
    return run_ensemble(
        DESK, 16, 2401, np.zeros(19), HORIZON_REF, DT_REF, STRIDE_REF, BURN_REF
    )


@pytest.fixture(scope="module")
def ens_b():
    """Companion ensemble from a far-from-equilibrium initial condition."""
    init = np.zeros(19)
    init[0] = 10.0
    init[3] = 5.0
    return run_ensemble(
        DESK, 8, 2402, init, HORIZON_REF, DT_REF, STRIDE_REF, BURN_REF
    )


@pytest.fixture(scope="module")
def sweep_eps(ens_a):
    """Mean dissipation rate with standard error per sweep viscosity."""
    out = {}
    for nu, n_traj, seed in ((1e-2, 8, 2403), (1e-3, 16, 2404)):
        params = ShellParams(nu=nu, c=1.0, sigma=1.0, n_shells=19)
        ens = run_ensemble(
            params,
            n_traj,
            seed,
            np.zeros(19),
            200.0,
            1e-6,
            1600,
            default_burn_in(nu, 200.0),
        )
        out[nu] = dissipation_rate(ens.acc, params)
    out[DESK.nu] = dissipation_rate(ens_a.acc, DESK)
    return out


def test_a01_flux_partial_sums_match_forcing(ens_a):
    """Every stationary partial sum S_n sits within 3 se of sigma^2/2 and
    within 10% relative deviation across the inertial band."""
    frag = balance_residuals(ens_a.acc, DESK)
    dev = np.abs(frag.s_partial - HALF_FORCING)
    print("S_n :", np.array2string(frag.s_partial, precision=4))
    print("se  :", np.array2string(frag.s_partial_se, precision=2))
    worst = int(np.argmax(dev / frag.s_partial_se))
    print(f"worst z-score {dev[worst] / frag.s_partial_se[worst]:.2f} at n={worst}")
    assert np.all(dev <= 3.0 * frag.s_partial_se)
    lo, hi = INERTIAL
    assert np.all(dev[lo : hi + 1] <= 0.10 * HALF_FORCING)


def test_a02_dissipation_rate_approaches_half_forcing(ens_a, sweep_eps):
    """nu<|u|_H1^2> tightens onto sigma^2/2 through the viscosity sweep,
    and a single-trajectory time average agrees with the ensemble value."""
    devs = []
    for nu in (1e-2, 1e-3, 1e-4):
        eps, se = sweep_eps[nu]
        devs.append(abs(eps - HALF_FORCING))
        print(f"nu={nu:g}: eps={eps:.4f} +- {se:.4f}")
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] <= 0.15 * HALF_FORCING
    times, ih1 = ens_a.h1_integral
    i_end = float(np.interp(HORIZON_REF, times, ih1))
    i_burn = float(np.interp(BURN_REF, times, ih1))
    eps_time = DESK.nu * (i_end - i_burn) / (HORIZON_REF - BURN_REF)
    eps_ens, se_ens = sweep_eps[DESK.nu]
    se_time = se_ens * math.sqrt(16.0)
    print(f"time-average eps={eps_time:.4f} vs ensemble eps={eps_ens:.4f}")
    assert abs(eps_time - eps_ens) <= 2.0 * math.hypot(se_time, se_ens)


def test_a03_inertial_spectrum_slope(ens_a):
    """log2<u_j^2> falls at -2/3 per shell over j in [3, 12], with the
    compensated spectrum flat within a factor 3."""
    slope, se = spectrum_slope(ens_a.acc, INERTIAL)
    comp = np.exp2((2.0 / 3.0) * np.arange(19)) * ens_a.acc.mean_u2
    lo, hi = INERTIAL
    band = comp[lo : hi + 1]
    flat = float(band.max() / band.min())
    print(f"slope[{lo},{hi}]={slope:.4f} +- {se:.4f}; flatness={flat:.3f}")
    sub_slope, sub_se = spectrum_slope(ens_a.acc, (3, 7))
    sub = comp[3:8]
    print(
        f"pre-drain band slope[3,7]={sub_slope:.4f} +- {sub_se:.4f}; "
        f"flatness={float(sub.max() / sub.min()):.3f}"
    )
    print("compensated:", np.array2string(comp, precision=4))
    assert abs(slope - (-2.0 / 3.0)) <= 0.1
    assert flat <= 3.0


def test_a04_positivity_clamp_never_fires(ens_a):
    """The reference run from H+ initial data needs zero clamps."""
    print(f"clamp total over 16 trajectories: {ens_a.clamp_total}")
    assert ens_a.clamp_total == 0


def test_a05_inviscid_unforced_energy_conservation():
    """With nu = sigma = 0 the classical integrator conserves energy to
    1e-6 relative over t in [0, 10]."""
    params = ShellParams(nu=0.0, c=1.0, sigma=0.0, n_shells=19)
    init = np.exp2(-np.arange(19) / 3.0)
    rec = simulate(
        params,
        StepScheme(variant="deterministic_rk4"),
        ShellState(u=init),
        horizon=10.0,
        noise=NoiseStream(seed=0, stream_id=0, dt=suggested_dt(params, 1.0)),
        stride=2**22,
    )
    e0 = float(np.sum(init**2))
    drift = abs(float(np.sum(rec.final.u**2)) - e0) / e0
    print(f"relative energy drift: {drift:.3e}")
    assert drift <= 1e-6


def test_a06_tangent_matches_finite_differences():
    """J_{0,T} xi matches central differences with a shared noise path on
    20 random (base state, direction) pairs; the two-leg composition is
    exact at a sample point."""
    rng = np.random.default_rng(909)
    horizon = 0.05
    h = 1e-6
    worst = 0.0
    for k in range(20):
        ubar = (
            rng.uniform(0.2, 1.0)
            * np.exp2(-np.arange(19) / 3.0)
            * rng.uniform(0.5, 1.5, 19)
        )
        xi = rng.standard_normal(19)
        xi /= np.linalg.norm(xi)
        base = simulate(
            DESK,
            StepScheme(),
            ShellState(u=ubar),
            horizon=horizon,
            noise=NoiseStream(seed=909, stream_id=100 + k, dt=1e-6),
            stride=1,
        )
        jxi = propagate_tangent(base, xi, 0.0, horizon)
        ends = []
        for sign in (1.0, -1.0):
            rec = simulate(
                DESK,
                StepScheme(),
                ShellState(u=ubar + sign * h * xi),
                horizon=horizon,
                noise=NoiseStream(seed=909, stream_id=100 + k, dt=1e-6),
                stride=2**22,
            )
            ends.append(rec.final.u)
        fd = (ends[0] - ends[1]) / (2.0 * h)
        rel = float(np.linalg.norm(jxi - fd) / np.linalg.norm(jxi))
        worst = max(worst, rel)
    print(f"worst relative gradient error over 20 pairs: {worst:.3e}")
    assert worst <= 1e-4
    base = simulate(
        DESK,
        StepScheme(),
        ShellState(u=np.exp2(-np.arange(19) / 3.0)),
        horizon=1.0,
        noise=NoiseStream(seed=909, stream_id=500, dt=1e-6),
        stride=1,
    )
    xi = np.random.default_rng(1).standard_normal(19)
    full = propagate_tangent(base, xi, 0.0, 1.0)
    split = propagate_tangent(base, propagate_tangent(base, xi, 0.0, 0.5), 0.5, 1.0)
    sg = float(np.linalg.norm(full - split) / np.linalg.norm(full))
    print(f"two-leg composition relative error: {sg:.3e}")
    assert sg <= 1e-8


def test_a07_gram_closed_form_and_probe_positivity():
    """The single-noise Gram matches its linear closed form to 1e-6, and
    the constrained spectral probe at (N_low, alpha) = (4, 0.5) is
    positive on at least 95 of 100 independent stationary windows."""
    base = simulate(
        DESK,
        StepScheme(),
        ShellState(u=np.zeros(19)),
        horizon=1.0,
        noise=NoiseStream(seed=2405, stream_id=0, dt=1e-4),
        stride=1,
    )
    gram = malliavin_gram(base, 0.0, 1.0, n_quad=64, linear_only=True)
    rate = 2.0 * DESK.nu
    expected = np.zeros((19, 19))
    expected[0, 0] = DESK.sigma**2 * (1.0 - math.exp(-rate)) / rate
    err = float(np.max(np.abs(gram.matrix - expected)) / expected[0, 0])
    print(f"linear closed-form relative error: {err:.3e}")
    assert err <= 1e-6

    dt = 1e-6
    values = []
    for p in range(100):
        spin = simulate(
            DESK,
            StepScheme(),
            ShellState(u=np.zeros(19)),
            horizon=20.0,
            noise=NoiseStream(seed=1107, stream_id=2 * p, dt=dt),
            stride=20_000_000,
        )
        window = simulate(
            DESK,
            StepScheme(),
            ShellState(u=spin.final.u, t=0.0),
            horizon=2.0,
            noise=NoiseStream(seed=1107, stream_id=2 * p + 1, dt=dt),
            stride=1,
        )
        full = malliavin_gram(window, 0.0, 2.0, n_quad=64)
        values.append(spectral_probe(full, 4, 0.5))
    arr = np.asarray(values)
    positives = int(np.sum(arr > 0.0))
    print(
        f"positive probes: {positives}/100; min={arr.min():.3e} "
        f"median={np.median(arr):.3e} max={arr.max():.3e}"
    )
    assert positives >= 95


def test_a08_high_shell_influence_contracts():
    """Operator norm of the tangent flow restricted to shells above the
    cutoff falls strictly as the cutoff rises through {4, 8, 12}."""
    rows = foias_prodi_estimate(DESK, (4, 8, 12), n_samples=8, dt=1e-6, seed=5, spin_up=20.0)
    for n_cut, mean, se in rows:
        print(f"cutoff {int(n_cut):2d}: |J Q|={mean:.4e} +- {se:.1e}")
    means = rows[:, 1]
    assert means[0] > means[1] > means[2]


def test_a09_low_mode_control_contracts_perturbations():
    """Two-phase control cycles shrink the perturbation by better than
    0.9 per cycle on average, with no growth trend in control effort."""
    params = ShellParams(nu=1e-2, c=1.0, sigma=1.0, n_shells=11)
    xi = np.zeros(11)
    xi[0] = 1.0
    rec = control_experiment(
        params, beta=1e-4, n_cycles=10, xi=xi, dt=1e-4, seed=3, spin_up=10.0
    )
    ratios = rec.rho_norms[1:] / rec.rho_norms[:-1]
    geo = float(np.exp(np.mean(np.log(ratios))))
    effort = np.diff(rec.cumulative_energy, prepend=0.0)
    trend = float(np.polyfit(np.arange(effort.size), effort, 1)[0])
    print(f"geometric mean decay ratio: {geo:.4f}; effort trend: {trend:+.3e}")
    assert geo < 0.9
    assert trend <= 0.0


def test_a10_bracket_span_certificates():
    """Constant bracket directions span shells 0..N for N up to 5 at both
    couplings, and the bracket algebra is exact."""
    for c in (1.0, 1.5):
        params = ShellParams(nu=1e-2, c=c, sigma=1.0, n_shells=8)
        depths = []
        for n_target in range(6):
            cert = verify_span(params, n_target)
            assert cert.passed
            depths.append(cert.m)
        print(f"c={c}: m(N) for N=0..5 -> {depths}")
    rng = np.random.default_rng(3)
    for _ in range(20):
        g1 = random_field(rng, 4)
        g2 = random_field(rng, 4)
        assert lie_bracket(g1, g2).terms == lie_bracket(g2, g1).scale(-1.0).terms
    for _ in range(10):
        g1, g2, g3 = (random_field(rng, 3, max_degree=2, n_terms=3) for _ in range(3))
        total = (
            lie_bracket(g1, lie_bracket(g2, g3))
            + lie_bracket(g2, lie_bracket(g3, g1))
            + lie_bracket(g3, lie_bracket(g1, g2))
        )
        scale = max(g.max_coefficient() for g in (g1, g2, g3)) ** 3
        assert total.max_coefficient() <= 1e-10 * max(scale, 1.0)


def test_a11_initial_condition_independence_and_clt_scaling(ens_a, ens_b):
    """Two far-apart initial conditions give matching spectra and
    dissipation rates, and window-average variance decays like 1/T."""
    slope_a, se_a = spectrum_slope(ens_a.acc, INERTIAL)
    slope_b, se_b = spectrum_slope(ens_b.acc, INERTIAL)
    print(f"slopes: {slope_a:.4f} +- {se_a:.4f} vs {slope_b:.4f} +- {se_b:.4f}")
    assert abs(slope_a - slope_b) <= 2.0 * math.hypot(se_a, se_b)
    eps_a, eps_se_a = dissipation_rate(ens_a.acc, DESK)
    eps_b, eps_se_b = dissipation_rate(ens_b.acc, DESK)
    print(f"eps: {eps_a:.4f} +- {eps_se_a:.4f} vs {eps_b:.4f} +- {eps_se_b:.4f}")
    assert abs(eps_a - eps_b) <= 2.0 * math.hypot(eps_se_a, eps_se_b)
    streams = []
    for times, vals in ens_a.energy_streams + ens_b.energy_streams:
        keep = times >= BURN_REF
        streams.append((times[keep] - BURN_REF, vals[keep]))
    rows = time_average_scan(streams, (5.0, 10.0, 25.0, 50.0))
    for t_win, var, count in rows:
        print(f"T={t_win:5.1f}: var={var:.4e} (n={int(count)}, T*var={t_win * var:.3f})")
    ratio = float(rows[0, 1] / rows[3, 1])
    print(f"decade variance ratio var(5)/var(50) = {ratio:.2f}")
    assert 10.0 / 1.6 <= ratio <= 10.0 * 1.6
