"""Reproducible time stepping for the truncated shell model SDE.

The default scheme treats both the viscous decay ``nu 2^{2j}`` and the
positive cascade drain ``2^{cj} max(u_{j+1}, 0)`` with an integrating
factor, which removes the stiff step-size constraint and preserves the
nonnegativity of shells ``j >= 1`` exactly.  A plain Euler-Maruyama
variant and a deterministic fourth-order Runge-Kutta oracle (noise-free
runs only) are provided for cross-checks.

Usage::

    import numpy as np
    from cascade.model import ShellParams, ShellState
    from cascade.integrator import (
        NoiseStream, StepScheme, simulate, suggested_dt,
    )

    params = ShellParams(nu=1e-4, c=1.0, sigma=1.0, n_shells=19)
    dt = suggested_dt(params, state_scale=1.0)
    noise = NoiseStream(seed=7, stream_id=0, dt=dt)
    record = simulate(
        params, StepScheme(), ShellState(np.zeros(19)),
        horizon=1.0, noise=noise, stride=64,
    )
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from numpy.typing import NDArray

from cascade import _kernels
from cascade.model import (
    CascadeError,
    ParameterError,
    ShapeMismatchError,
    ShellParams,
    ShellState,
)

__all__ = [
    "EXPONENTIAL_EULER_MARUYAMA",
    "EULER_MARUYAMA",
    "DETERMINISTIC_RK4",
    "SCHEME_VARIANTS",
    "DEFAULT_CLAMP_THRESHOLD",
    "IntegrationError",
    "BlowUpError",
    "ClampExceededError",
    "NoiseStream",
    "StepScheme",
    "TrajectoryRecord",
    "step",
    "simulate",
    "suggested_dt",
]

EXPONENTIAL_EULER_MARUYAMA = "exponential_euler_maruyama"
EULER_MARUYAMA = "euler_maruyama"
DETERMINISTIC_RK4 = "deterministic_rk4"

SCHEME_VARIANTS = frozenset(
    {EXPONENTIAL_EULER_MARUYAMA, EULER_MARUYAMA, DETERMINISTIC_RK4}
)

#: Residual negative amplitudes below this magnitude are zeroed and counted;
#: larger ones abort the run (see :class:`ClampExceededError`).
DEFAULT_CLAMP_THRESHOLD = 1e-12

#: Number of steps advanced per kernel call (bounds the noise buffer size).
_CHUNK_STEPS = 1 << 16


class IntegrationError(CascadeError):
    """Base class for time-stepping failures; carries the failing time."""

    def __init__(self, message: str, time: float) -> None:
        super().__init__(message)
        self.time = time


class BlowUpError(IntegrationError):
    """The state left the finite range (step size too large)."""


class ClampExceededError(IntegrationError):
    """A negative amplitude exceeded the positivity clamp threshold."""


class NoiseStream:
    """Seeded, replay-identical Brownian increments driving mode 0.

    Increments are Gaussian with mean 0 and variance ``dt``; the sequence
    is a pure function of ``(seed, stream_id)``, with ``cursor`` counting
    increments already delivered.  Two streams with the same key yield the
    same sequence regardless of how the draws are chunked.

    Parameters
    ----------
    seed : int
        64-bit base seed shared by an ensemble.
    stream_id : int
        Trajectory index; distinct ids give independent streams.
    dt : float
        Fixed step size, ``dt > 0``.
    """

    def __init__(self, seed: int, stream_id: int, dt: float) -> None:
        if not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) < 2**64:
            raise ParameterError(f"seed: must be an integer in [0, 2^64) (got {seed!r})")
        if not isinstance(stream_id, (int, np.integer)) or not 0 <= int(stream_id) < 2**64:
            raise ParameterError(
                f"stream_id: must be an integer in [0, 2^64) (got {stream_id!r})"
            )
        if not (isinstance(dt, (int, float, np.floating)) and math.isfinite(dt) and dt > 0):
            raise ParameterError(f"dt: must be finite and > 0 (got {dt!r})")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.dt = float(dt)
        self.cursor = 0
        self._rng = np.random.Generator(
            np.random.Philox(key=[self.seed, self.stream_id])
        )
        self._sqrt_dt = math.sqrt(self.dt)

    def increments(self, n: int) -> NDArray[np.float64]:
        """Return the next ``n`` increments and advance the cursor."""
        if n < 0:
            raise ParameterError(f"n: must be >= 0 (got {n})")
        out = self._rng.standard_normal(n) * self._sqrt_dt
        self.cursor += int(n)
        return out

    def replica(self) -> "NoiseStream":
        """Fresh stream with the same key, rewound to cursor 0."""
        return NoiseStream(self.seed, self.stream_id, self.dt)


@dataclass(frozen=True)
class StepScheme:
    """Time-stepping scheme selector.

    Parameters
    ----------
    variant : str
        One of ``exponential_euler_maruyama`` (default), ``euler_maruyama``
        or ``deterministic_rk4``; the oracle variant rejects noise-forced
        runs (``sigma > 0``).
    linear_only : bool
        Test hook: drop the bilinear cascade term entirely, leaving the
        damped linear system with mode-0 forcing.
    """

    variant: str = EXPONENTIAL_EULER_MARUYAMA
    linear_only: bool = False

    def __post_init__(self) -> None:
        if self.variant not in SCHEME_VARIANTS:
            raise ParameterError(
                f"variant: must be one of {sorted(SCHEME_VARIANTS)} "
                f"(got {self.variant!r})"
            )


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled output of one trajectory.

    ``states[r]`` is the state at step ``r * stride`` (row 0 is the
    initial state) and ``times[r]`` the matching simulation time;
    ``int_h1_at_samples[r]`` is the trapezoid value of the pathwise
    integral of the squared H^1 norm up to that time.  ``int_h1`` and
    ``sum_u0_dw`` are the full-horizon integral and the sum of pre-step
    ``u_0`` times the raw noise increments.  ``clamp_count`` counts
    positivity clamps and is monotone in time by construction.
    """

    params: ShellParams
    times: NDArray[np.float64]
    states: NDArray[np.float64]
    int_h1_at_samples: NDArray[np.float64]
    clamp_count: int
    int_h1: float
    sum_u0_dw: float
    final: ShellState
    dt: float
    stride: int
    n_steps: int
    seed: int
    stream_id: int

    @property
    def n_samples(self) -> int:
        return int(self.states.shape[0])


def _shell_index(n_shells: int) -> NDArray[np.float64]:
    return np.arange(n_shells, dtype=np.float64)


def _exp_em_coefficients(params: ShellParams, dt: float):
    j = _shell_index(params.n_shells)
    w2 = np.exp2(2.0 * j)
    visc = np.exp(-params.nu * w2 * dt)
    bdt = dt * np.exp2(params.c * j)
    binp = dt * np.exp2(params.c * (j - 1.0))
    return visc, bdt, binp, w2

def _em_coefficients(params: ShellParams, dt: float):
    j = _shell_index(params.n_shells)
    w2 = np.exp2(2.0 * j)
    nudt = params.nu * w2 * dt
    bdt = dt * np.exp2(params.c * j)
    binp = dt * np.exp2(params.c * (j - 1.0))
    return nudt, bdt, binp, w2


def _rk4_coefficients(params: ShellParams):
    j = _shell_index(params.n_shells)
    w2 = np.exp2(2.0 * j)
    nu4 = params.nu * w2
    bc = np.exp2(params.c * j)
    bcm = np.exp2(params.c * (j - 1.0))
    return nu4, bc, bcm, w2


def _check_scheme(params: ShellParams, scheme: StepScheme) -> None:
    if scheme.variant == DETERMINISTIC_RK4 and params.sigma > 0.0:
        raise ParameterError(
            "deterministic_rk4 is a noise-free oracle; it rejects sigma > 0 "
            f"(got sigma = {params.sigma})"
        )


def _check_dt(dt: float) -> float:
    if not (isinstance(dt, (int, float, np.floating)) and math.isfinite(dt) and dt > 0):
        raise ParameterError(f"dt: must be finite and > 0 (got {dt!r})")
    return float(dt)


def step(
    params: ShellParams,
    scheme: StepScheme,
    state: ShellState,
    dW: float,
    dt: float,
    clamp_threshold: float = DEFAULT_CLAMP_THRESHOLD,
) -> ShellState:
    """Advance ``state`` by a single step of size ``dt``.

    ``dW`` is the raw Brownian increment for the step (variance ``dt``);
    it is scaled by ``params.sigma`` internally and ignored by the
    deterministic oracle variant.  Bitwise-identical to one iteration of
    :func:`simulate` (both run the same compiled kernel).

    Raises
    ------
    BlowUpError
        If the updated state leaves the finite range.
    ClampExceededError
        If a residual negative amplitude exceeds ``clamp_threshold`` while
        the pre-step state had all of ``u_1..u_N`` nonnegative.
    """
    dt = _check_dt(dt)
    _check_scheme(params, scheme)
    u = np.asarray(state.u, dtype=np.float64)
    if u.size != params.n_shells:
        raise ShapeMismatchError(
            f"state: expected {params.n_shells} shells (got {u.size})"
        )
    u = u.copy()
    unew = np.empty_like(u)
    sink_states = np.empty((0, u.size))
    sink_int = np.empty(0)
    if scheme.variant == EXPONENTIAL_EULER_MARUYAMA:
        visc, bdt, binp, w2 = _exp_em_coefficients(params, dt)
        status, n_done, _, _, _, _, _ = _kernels.exp_em_chunk(
            u, unew, np.array([float(dW)]), dt, params.sigma,
            visc, bdt, binp, w2, clamp_threshold, scheme.linear_only,
            2, 0, 0.0, 0.0, 0.0, 0, sink_states, sink_int, 0,
        )
    elif scheme.variant == EULER_MARUYAMA:
        nudt, bdt, binp, w2 = _em_coefficients(params, dt)
        status, n_done, _, _, _, _ = _kernels.euler_maruyama_chunk(
            u, unew, np.array([float(dW)]), dt, params.sigma,
            nudt, bdt, binp, w2, scheme.linear_only,
            2, 0, 0.0, 0.0, 0.0, sink_states, sink_int, 0,
        )
    else:
        if scheme.linear_only:
            raise ParameterError(
                "linear_only is not supported by the deterministic_rk4 oracle"
            )
        nu4, bc, bcm, w2 = _rk4_coefficients(params)
        status, n_done, _, _, _ = _kernels.rk4_chunk(
            u, 1, dt, nu4, bc, bcm, w2, 2, 0, 0.0, 0.0,
            sink_states, sink_int, 0,
        )
    t_next = state.t + dt
    if status == _kernels.STATUS_NONFINITE:
        raise BlowUpError(f"nonfinite state at t = {t_next!r}", time=t_next)
    if status == _kernels.STATUS_CLAMP_EXCEEDED:
        raise ClampExceededError(
            f"positivity clamp threshold exceeded at t = {t_next!r}", time=t_next
        )
    return ShellState(u=u, t=t_next)


def simulate(
    params: ShellParams,
    scheme: StepScheme,
    init: ShellState,
    horizon: float,
    noise: NoiseStream,
    observers: Iterable[Callable[[ShellState], None]] = (),
    stride: int = 1,
    clamp_threshold: float = DEFAULT_CLAMP_THRESHOLD,
) -> TrajectoryRecord:
    """Integrate one trajectory over ``[init.t, init.t + horizon]``.

    The step size is ``noise.dt``; the step count is ``horizon / dt``
    rounded to the nearest integer.  States at steps divisible by
    ``stride`` (including step 0) are stored in the returned record and
    handed to every observer in order.  The run is a pure function of
    ``(params, scheme, init, horizon, noise.seed, noise.stream_id)``: the
    same inputs give bit-identical records.  The deterministic oracle
    variant does not consume noise increments.

    Raises
    ------
    BlowUpError, ClampExceededError
        As for :func:`step`, with the failing time attached.
    """
    dt = _check_dt(noise.dt)
    _check_scheme(params, scheme)
    u0 = np.asarray(init.u, dtype=np.float64)
    if u0.size != params.n_shells:
        raise ShapeMismatchError(
            f"init: expected {params.n_shells} shells (got {u0.size})"
        )
    if not (math.isfinite(horizon) and horizon > 0):
        raise ParameterError(f"horizon: must be finite and > 0 (got {horizon!r})")
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ParameterError(f"stride: must be an integer >= 1 (got {stride!r})")
    stride = int(stride)
    n_steps = int(round(horizon / dt))
    if n_steps < 1:
        raise ParameterError(
            f"horizon: shorter than one step (horizon = {horizon}, dt = {dt})"
        )
    observers = tuple(observers)
    n = params.n_shells
    n_samples = n_steps // stride + 1
    times = init.t + dt * stride * np.arange(n_samples)
    states = np.empty((n_samples, n))
    int_h1_samples = np.empty(n_samples)
    states[0] = u0
    int_h1_samples[0] = 0.0

    u = u0.copy()
    unew = np.empty_like(u)
    rk4 = scheme.variant == DETERMINISTIC_RK4
    em = scheme.variant == EULER_MARUYAMA
    if rk4:
        if scheme.linear_only:
            raise ParameterError(
                "linear_only is not supported by the deterministic_rk4 oracle"
            )
        nu4, bc, bcm, w2 = _rk4_coefficients(params)
    elif em:
        nudt, bdt, binp, w2 = _em_coefficients(params, dt)
    else:
        visc, bdt, binp, w2 = _exp_em_coefficients(params, dt)

    # Overflow to inf here is legitimate: the kernels detect it as blow-up.
    with np.errstate(over="ignore"):
        h1_last = float(np.sum(w2 * u * u))
    int_h1 = 0.0
    sum_u0_dw = 0.0
    clamp_count = 0
    row = 1
    done = 0
    for obs in observers:
        obs(ShellState(u=u0.copy(), t=float(init.t)))
    while done < n_steps:
        m = min(_CHUNK_STEPS, n_steps - done)
        row_before = row
        if rk4:
            status, n_done, h1_last, int_h1, row = _kernels.rk4_chunk(
                u, m, dt, nu4, bc, bcm, w2, stride, done,
                h1_last, int_h1, states, int_h1_samples, row,
            )
        elif em:
            dw = noise.increments(m)
            status, n_done, h1_last, int_h1, sum_u0_dw, row = (
                _kernels.euler_maruyama_chunk(
                    u, unew, dw, dt, params.sigma, nudt, bdt, binp, w2,
                    scheme.linear_only, stride, done,
                    h1_last, int_h1, sum_u0_dw, states, int_h1_samples, row,
                )
            )
        else:
            dw = noise.increments(m)
            status, n_done, h1_last, int_h1, sum_u0_dw, clamp_count, row = (
                _kernels.exp_em_chunk(
                    u, unew, dw, dt, params.sigma, visc, bdt, binp, w2,
                    clamp_threshold, scheme.linear_only, stride, done,
                    h1_last, int_h1, sum_u0_dw, clamp_count,
                    states, int_h1_samples, row,
                )
            )
        if status != _kernels.STATUS_OK:
            t_fail = float(init.t + (done + n_done + 1) * dt)
            if status == _kernels.STATUS_NONFINITE:
                raise BlowUpError(f"nonfinite state at t = {t_fail!r}", time=t_fail)
            raise ClampExceededError(
                f"positivity clamp threshold exceeded at t = {t_fail!r}",
                time=t_fail,
            )
        done += m
        if observers:
            for r in range(row_before, row):
                for obs in observers:
                    obs(ShellState(u=states[r].copy(), t=float(times[r])))
    final = ShellState(u=u.copy(), t=float(init.t + n_steps * dt))
    return TrajectoryRecord(
        params=params,
        times=times,
        states=states,
        int_h1_at_samples=int_h1_samples,
        clamp_count=int(clamp_count),
        int_h1=float(int_h1),
        sum_u0_dw=float(sum_u0_dw),
        final=final,
        dt=dt,
        stride=stride,
        n_steps=n_steps,
        seed=noise.seed,
        stream_id=noise.stream_id,
    )


def suggested_dt(
    params: ShellParams,
    state_scale: float,
    dt_max: float = 1e-3,
    safety: float = 0.1,
) -> float:
    """Step-size suggestion ``min(dt_max, safety / (2^{cN} state_scale))``.

    ``state_scale`` estimates the magnitude scale of the amplitudes
    feeding the cascade drain; the stiff linear rate ``nu 2^{2N}`` imposes
    no constraint because the scheme treats it with an exact integrating
    factor.  With ``c = 1``, raising the truncation by one shell halves
    the suggestion (until ``dt_max`` caps it).
    """
    if not (math.isfinite(state_scale) and state_scale > 0):
        raise ParameterError(
            f"state_scale: must be finite and > 0 (got {state_scale!r})"
        )
    if not (math.isfinite(dt_max) and dt_max > 0):
        raise ParameterError(f"dt_max: must be finite and > 0 (got {dt_max!r})")
    if not (math.isfinite(safety) and safety > 0):
        raise ParameterError(f"safety: must be finite and > 0 (got {safety!r})")
    rate = float(np.exp2(params.c * params.top_shell)) * state_scale
    return float(min(dt_max, safety / rate))
