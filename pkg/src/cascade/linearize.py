"""Tangent flow, noise-influence Gram matrices, high-shell contraction
probes, and the two-phase low-mode control experiment.

All operations act along a stored base trajectory (a
:class:`~cascade.integrator.TrajectoryRecord` captured at stride 1, so
every integrator step is available).  The tangent propagator is the exact
Jacobian of the discrete forward map, which makes the semigroup property
and finite-difference gradient checks hold to near machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
from numpy.typing import NDArray

from cascade import _kernels
from cascade.integrator import (
    NoiseStream,
    StepScheme,
    TrajectoryRecord,
    simulate,
)
from cascade.model import (
    CascadeError,
    ParameterError,
    ShapeMismatchError,
    ShellParams,
    ShellState,
)

__all__ = [
    "LinearizationError",
    "ControlSolveError",
    "TangentState",
    "GramMatrix",
    "ControlRecord",
    "propagate_tangent",
    "malliavin_gram",
    "spectral_probe",
    "foias_prodi_estimate",
    "control_experiment",
]


class LinearizationError(CascadeError):
    """A linearized computation produced an invalid result."""


class ControlSolveError(LinearizationError):
    """The regularized Gram solve failed (beta too small for conditioning)."""


@dataclass(frozen=True)
class TangentState:
    """A linearized perturbation ``rho`` at time ``t`` along a base path."""

    rho: NDArray[np.float64]
    t: float


@dataclass(frozen=True)
class GramMatrix:
    """Noise-influence Gram matrix over ``[s, t]``.

    ``matrix[i, k] = sigma^2 int_s^t (J_{r,t} e_0)_i (J_{r,t} e_0)_k dr``
    evaluated by trapezoid quadrature on ``n_quad`` intervals.  Symmetric
    to 1e-12 and positive semidefinite up to ``-1e-10 * trace`` by
    construction; construction fails otherwise.
    """

    matrix: NDArray[np.float64]
    s: float
    t: float
    n_quad: int

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeMismatchError(f"matrix: must be square (got {m.shape})")
        scale = float(np.max(np.abs(m))) or 1.0
        if float(np.max(np.abs(m - m.T))) > 1e-12 * scale:
            raise LinearizationError("Gram matrix is not symmetric to 1e-12")
        trace = float(np.trace(m))
        if float(np.linalg.eigvalsh(m)[0]) < -1e-10 * max(trace, 0.0) - 1e-300:
            raise LinearizationError("Gram matrix is not positive semidefinite")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class ControlRecord:
    """Per-cycle decay record of the two-phase control experiment.

    ``rho_norms[k]`` is ``|rho(2k)|`` (so ``rho_norms[0]`` is the initial
    perturbation norm) and ``cumulative_energy[k]`` the total control
    energy spent through cycle ``k``.
    """

    beta: float
    rho_norms: NDArray[np.float64]
    cumulative_energy: NDArray[np.float64]

    def __post_init__(self) -> None:
        norms = np.asarray(self.rho_norms, dtype=np.float64)
        energy = np.asarray(self.cumulative_energy, dtype=np.float64)
        if np.any(norms < 0.0):
            raise LinearizationError("rho norms must be nonnegative")
        if energy.size:
            slack = 1e-12 * max(1.0, float(np.max(np.abs(energy))))
            if energy[0] < -slack or np.any(np.diff(energy) < -slack):
                raise LinearizationError(
                    "cumulative control energy must be nondecreasing"
                )
        object.__setattr__(self, "rho_norms", norms)
        object.__setattr__(self, "cumulative_energy", energy)


def _require_dense(base: TrajectoryRecord) -> None:
    if base.stride != 1:
        raise ParameterError(
            "base trajectory must be stored at stride 1 (every step) for "
            f"tangent propagation (got stride {base.stride})"
        )


def _time_to_step(base: TrajectoryRecord, when: float, name: str) -> int:
    t0 = float(base.times[0])
    k = int(round((when - t0) / base.dt))
    if k < 0 or k > base.n_steps:
        raise ParameterError(
            f"{name} = {when} lies outside the stored trajectory "
            f"[{t0}, {t0 + base.n_steps * base.dt}]"
        )
    return k


def _tangent_coefficients(params: ShellParams, dt: float):
    j = np.arange(params.n_shells, dtype=np.float64)
    visc = np.exp(-params.nu * np.exp2(2.0 * j) * dt)
    bdt = dt * np.exp2(params.c * j)
    binp = dt * np.exp2(params.c * (j - 1.0))
    return visc, bdt, binp


def _advance_tangents(
    base: TrajectoryRecord,
    rho: NDArray[np.float64],
    active_from: NDArray[np.int64],
    k_from: int,
    k_to: int,
    linear_only: bool,
) -> None:
    visc, bdt, binp = _tangent_coefficients(base.params, base.dt)
    status, k_fail = _kernels.tangent_chunk(
        base.states, k_from, k_to, rho, active_from, visc, bdt, binp,
        linear_only,
    )
    if status != _kernels.STATUS_OK:
        t_fail = float(base.times[0] + (k_fail + 1) * base.dt)
        raise LinearizationError(
            f"tangent propagation left the finite range at t = {t_fail!r}"
        )


def propagate_tangent(
    base: TrajectoryRecord,
    xi: NDArray[np.float64],
    s: float,
    t: float,
    linear_only: bool = False,
) -> NDArray[np.float64]:
    """Propagate the perturbation ``xi`` from time ``s`` to ``t``: J_{s,t} xi.

    The propagator is the exact Jacobian of the discrete forward map, so
    it is linear in ``xi`` and satisfies the semigroup property
    ``J_{r,t} J_{s,r} = J_{s,t}`` up to rounding.  ``s`` and ``t`` are
    snapped to the integrator step grid of the stored base trajectory.

    Raises
    ------
    ParameterError
        If ``[s, t]`` leaves the stored trajectory, ``t < s``, or the base
        is not stored densely (stride 1).
    """
    _require_dense(base)
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (base.params.n_shells,):
        raise ShapeMismatchError(
            f"xi: expected shape ({base.params.n_shells},) (got {xi.shape})"
        )
    k_s = _time_to_step(base, s, "s")
    k_t = _time_to_step(base, t, "t")
    if k_t < k_s:
        raise ParameterError(f"t = {t} precedes s = {s}")
    rho = xi[None, :].copy()
    active = np.full(1, -1, dtype=np.int64)
    _advance_tangents(base, rho, active, k_s, k_t, linear_only)
    return rho[0]


def malliavin_gram(
    base: TrajectoryRecord,
    s: float,
    t: float,
    n_quad: int = 64,
    linear_only: bool = False,
) -> GramMatrix:
    """Noise-influence Gram matrix ``M_{s,t}`` along the stored base path.

    ``M = sigma^2 sum_r w_r g(r) g(r)^T`` with ``g(r) = J_{r,t} e_0`` and
    trapezoid weights over ``n_quad`` intervals; the quadrature nodes are
    snapped to the integrator step grid and every ``g(r)`` comes from an
    independent tangent solve (all solves share one sweep over the base).

    Raises
    ------
    ParameterError
        If the interval is degenerate, leaves the stored trajectory, or
        ``n_quad < 1``.
    """
    _require_dense(base)
    if not isinstance(n_quad, (int, np.integer)) or n_quad < 1:
        raise ParameterError(f"n_quad: must be an integer >= 1 (got {n_quad!r})")
    k_s = _time_to_step(base, s, "s")
    k_t = _time_to_step(base, t, "t")
    if k_t <= k_s:
        raise ParameterError(f"need s < t (got s = {s}, t = {t})")
    n = base.params.n_shells
    sigma = base.params.sigma
    if sigma == 0.0:
        return GramMatrix(np.zeros((n, n)), float(s), float(t), int(n_quad))
    node_steps = np.unique(
        np.round(np.linspace(k_s, k_t, int(n_quad) + 1)).astype(np.int64)
    )
    node_times = node_steps.astype(np.float64) * base.dt
    weights = np.empty(node_steps.size)
    weights[0] = 0.5 * (node_times[1] - node_times[0])
    weights[-1] = 0.5 * (node_times[-1] - node_times[-2])
    if node_steps.size > 2:
        weights[1:-1] = 0.5 * (node_times[2:] - node_times[:-2])
    rho = np.zeros((node_steps.size, n))
    active = node_steps.copy()
    _advance_tangents(base, rho, active, k_s, k_t, linear_only)
    # Nodes activating exactly at the endpoint never enter the sweep.
    for i in range(node_steps.size):
        if node_steps[i] == k_t:
            rho[i, :] = 0.0
            rho[i, 0] = 1.0
    m = sigma**2 * (rho.T * weights) @ rho
    m = 0.5 * (m + m.T)
    return GramMatrix(m, float(s), float(t), int(n_quad))


def _check_psd(matrix: NDArray[np.float64]) -> NDArray[np.float64]:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatchError(f"M: must be square (got {m.shape})")
    scale = float(np.max(np.abs(m))) or 1.0
    if float(np.max(np.abs(m - m.T))) > 1e-9 * scale:
        raise ParameterError("M: must be symmetric")
    if float(np.linalg.eigvalsh(m)[0]) < -1e-10 * max(float(np.trace(m)), 0.0) - 1e-300:
        raise ParameterError("M: must be positive semidefinite")
    return 0.5 * (m + m.T)


def spectral_probe(
    M: GramMatrix | NDArray[np.float64], N_low: int, alpha: float
) -> float:
    """Constrained spectral floor of a Gram matrix.

    Returns ``inf { <M xi, xi> / |xi|^2 : |P_N xi| >= alpha |xi| }`` where
    ``P_N`` projects onto coordinates ``0..N_low``.  For ``alpha = 1`` the
    constraint pins ``xi`` to the projected block; for ``alpha < 1`` the
    value is the exact Lagrangian-dual maximum
    ``max_{mu >= 0} [lambda_min(M - mu P_N) + mu alpha^2]`` (the single
    quadratic constraint admits no duality gap), which reduces to
    ``lambda_min(M)`` whenever the unconstrained minimizer already meets
    the constraint.  The dual is concave in ``mu``, and its maximum can sit
    many orders of magnitude below ``|M|`` when ``M`` is nearly singular,
    so the search scans a logarithmic ``mu`` grid spanning the full
    machine-precision range before refining the best bracket.  Monotone
    nondecreasing in ``alpha``.

    Raises
    ------
    ParameterError
        If ``M`` is not symmetric positive semidefinite, ``alpha`` is
        outside ``(0, 1]``, or ``N_low`` is out of range.
    """
    m = M.matrix if isinstance(M, GramMatrix) else _check_psd(M)
    n = m.shape[0]
    if not isinstance(N_low, (int, np.integer)) or not 0 <= int(N_low) < n:
        raise ParameterError(f"N_low: must lie in [0, {n - 1}] (got {N_low!r})")
    if not (isinstance(alpha, (int, float, np.floating)) and 0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha: must lie in (0, 1] (got {alpha!r})")
    N_low = int(N_low)
    alpha = float(alpha)
    if alpha == 1.0:
        return float(np.linalg.eigvalsh(m[: N_low + 1, : N_low + 1])[0])
    evals, evecs = np.linalg.eigh(m)
    lam_min = float(evals[0])
    # If some unconstrained minimizer meets the constraint, it is exact.
    # The cluster window must stay at the eigensolver's resolution: near-
    # singular Gram matrices carry separated eigenvalues down to eps*|M|,
    # and lumping them with lam_min would underreport the probe.
    cluster_tol = 64.0 * np.finfo(np.float64).eps * max(
        abs(float(evals[-1])), abs(lam_min), 1e-300
    )
    eigenspace = evecs[:, np.abs(evals - lam_min) <= cluster_tol]
    low_mass = scipy.linalg.eigh(
        eigenspace[: N_low + 1].T @ eigenspace[: N_low + 1],
        eigvals_only=True,
    )[-1]
    if low_mass >= alpha**2:
        return lam_min
    proj = np.zeros(n)
    proj[: N_low + 1] = 1.0

    def dual(mu: float) -> float:
        return float(np.linalg.eigvalsh(m - mu * np.diag(proj))[0]) + mu * alpha**2

    mu_hi = 2.0 * (float(evals[-1]) - lam_min + 1.0) / (1.0 - alpha**2)
    # The dual peak can be as small as eps*|M| for near-singular M, so a
    # fixed-resolution search over (0, mu_hi) would step right over it.
    # Scan log-spaced mu down to the roundoff floor, then polish the best
    # bracket; concavity in mu makes the bracketed maximum global.
    scale = max(float(evals[-1]), abs(lam_min), 1e-300)
    grid = np.geomspace(scale * 1e-18, mu_hi, 160)
    vals = np.array([dual(mu) for mu in grid])
    k = int(np.argmax(vals))
    lo = grid[k - 1] if k > 0 else 0.0
    hi = grid[k + 1] if k + 1 < grid.size else mu_hi
    res = scipy.optimize.minimize_scalar(
        lambda mu: -dual(mu), bounds=(lo, hi), method="bounded",
        options={"xatol": max((hi - lo) * 1e-8, 1e-300)},
    )
    return max(dual(0.0), float(vals[k]), -float(res.fun))


def _spin_up_state(
    params: ShellParams, dt: float, seed: int, stream_id: int, spin_up: float
) -> ShellState:
    if spin_up <= 0.0:
        return ShellState(u=np.zeros(params.n_shells), t=0.0)
    noise = NoiseStream(seed=seed, stream_id=stream_id, dt=dt)
    rec = simulate(
        params, StepScheme(), ShellState(u=np.zeros(params.n_shells)),
        horizon=spin_up, noise=noise, stride=max(1, int(round(spin_up / dt))),
    )
    return ShellState(u=rec.final.u, t=0.0)


def _dense_base(
    params: ShellParams,
    init: ShellState,
    horizon: float,
    dt: float,
    seed: int,
    stream_id: int,
) -> TrajectoryRecord:
    noise = NoiseStream(seed=seed, stream_id=stream_id, dt=dt)
    return simulate(params, StepScheme(), init, horizon=horizon, noise=noise,
                    stride=1)


def foias_prodi_estimate(
    params: ShellParams,
    n_cuts: int | Sequence[int],
    n_samples: int,
    dt: float,
    seed: int = 0,
    spin_up: float = 5.0,
) -> NDArray[np.float64]:
    """Monte Carlo estimates of ``|J_{0,1} Q_N|`` for high-shell cutoffs.

    ``Q_N`` zeroes shells ``0..N``; the operator norm of ``xi -> J_{0,1}
    (Q_N xi)`` is computed exactly per sampled path by assembling the
    columns ``J_{0,1} e_j`` (``j > N``) in a single sweep and taking the
    largest singular value.  All cutoffs share the same sampled base
    paths, so the estimates are directly comparable.  Each base path
    starts from an independently spun-up state.

    Returns
    -------
    ndarray
        Rows ``(n_cut, mean, se)``, one per requested cutoff.

    Raises
    ------
    ParameterError
        If a cutoff is not in ``[0, N]`` or ``n_samples < 2``.
    """
    cuts = [int(n_cuts)] if isinstance(n_cuts, (int, np.integer)) else [
        int(k) for k in n_cuts
    ]
    top = params.top_shell
    for k in cuts:
        if not 0 <= k <= top:
            raise ParameterError(f"n_cut: must lie in [0, {top}] (got {k})")
    if not isinstance(n_samples, (int, np.integer)) or n_samples < 2:
        raise ParameterError(f"n_samples: must be an integer >= 2 (got {n_samples})")
    n = params.n_shells
    norms = np.zeros((len(cuts), n_samples))
    for s_idx in range(int(n_samples)):
        init = _spin_up_state(params, dt, seed, 2 * s_idx, spin_up)
        base = _dense_base(params, init, 1.0, dt, seed, 2 * s_idx + 1)
        for c_idx, cut in enumerate(cuts):
            m = top - cut
            if m == 0:
                norms[c_idx, s_idx] = 0.0
                continue
            rho = np.zeros((m, n))
            for i in range(m):
                rho[i, cut + 1 + i] = 1.0
            active = np.full(m, -1, dtype=np.int64)
            _advance_tangents(base, rho, active, 0, base.n_steps, False)
            norms[c_idx, s_idx] = np.linalg.svd(rho, compute_uv=False)[0]
    table = np.empty((len(cuts), 3))
    for c_idx, cut in enumerate(cuts):
        vals = norms[c_idx]
        table[c_idx] = (cut, vals.mean(), vals.std(ddof=1) / math.sqrt(vals.size))
    return table


def control_experiment(
    params: ShellParams,
    beta: float,
    n_cycles: int,
    xi: NDArray[np.float64],
    dt: float,
    seed: int = 0,
    spin_up: float = 10.0,
    n_quad: int = 64,
) -> ControlRecord:
    """Two-phase low-mode control of a tangent perturbation.

    Each cycle spans two unit intervals along one stored noise-forced
    base path.  On ``[2k, 2k+1]`` the perturbation is steered with the
    regularized least-energy control, using the exact finite-dimensional
    identity ``rho(2k+1) = beta (M + beta I)^{-1} J_{2k,2k+1} rho(2k)``
    and control energy ``w^T M w`` with ``w = (M + beta I)^{-1} J
    rho(2k)``; on ``[2k+1, 2k+2]`` the perturbation runs free.

    Raises
    ------
    ControlSolveError
        If the regularized solve fails (``beta`` too small for the
        conditioning of the Gram matrix).
    """
    if not (isinstance(beta, (int, float, np.floating)) and beta > 0.0):
        raise ParameterError(f"beta: must be > 0 (got {beta!r})")
    if not isinstance(n_cycles, (int, np.integer)) or n_cycles < 1:
        raise ParameterError(f"n_cycles: must be an integer >= 1 (got {n_cycles!r})")
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (params.n_shells,):
        raise ShapeMismatchError(
            f"xi: expected shape ({params.n_shells},) (got {xi.shape})"
        )
    init = _spin_up_state(params, dt, seed, 0, spin_up)
    base = _dense_base(params, init, 2.0 * int(n_cycles), dt, seed, 1)
    rho = xi.copy()
    norms = [float(np.linalg.norm(rho))]
    cumulative = []
    total = 0.0
    for k in range(int(n_cycles)):
        t0, t1, t2 = 2.0 * k, 2.0 * k + 1.0, 2.0 * k + 2.0
        jrho = propagate_tangent(base, rho, t0, t1)
        gram = malliavin_gram(base, t0, t1, n_quad=n_quad)
        reg = gram.matrix + float(beta) * np.eye(params.n_shells)
        try:
            chol = scipy.linalg.cho_factor(reg)
            w = scipy.linalg.cho_solve(chol, jrho)
        except scipy.linalg.LinAlgError as exc:
            raise ControlSolveError(
                f"regularized Gram solve failed in cycle {k}; beta = {beta} "
                "is too small for the conditioning of the Gram matrix"
            ) from exc
        total += max(0.0, float(w @ gram.matrix @ w))
        rho = propagate_tangent(base, float(beta) * w, t1, t2)
        norms.append(float(np.linalg.norm(rho)))
        cumulative.append(total)
    return ControlRecord(
        beta=float(beta),
        rho_norms=np.asarray(norms),
        cumulative_energy=np.asarray(cumulative),
    )
