"""Mergeable online moments and stationary-identity reports.

A :class:`MomentAccumulator` ingests sampled states (past a burn-in
cutoff) and maintains per-shell running sums for u_j, u_j^2, u_j^3,
u_j u_{j+1}, u_j^2 u_{j+1}, plus global sums for the squared H^1 norm,
the squared Euclidean norm, and exp(kappa |u|^2).  Standard errors come
from batch means over consecutive samples, which respects the serial
autocorrelation of a single trajectory.

The report layer evaluates the stationary identities of the model: the
first-moment balance per shell, the partial-sum identity

    S_n = nu sum_{j<=n} 2^{2j} <u_j^2> + 2^{cn} <u_n^2 u_{n+1}>,

which equals sigma^2 / 2 for a stationary forced run, the spectrum slope
of log2 <u_j^2> versus j, and the dissipation rate nu <|u|^2_{H^1}>.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from cascade.model import (
    CascadeError,
    ParameterError,
    ShapeMismatchError,
    ShellParams,
    ShellState,
)

__all__ = [
    "StatisticsError",
    "InsufficientSamplesError",
    "MomentAccumulator",
    "BalanceFragment",
    "StationaryReport",
    "default_burn_in",
    "balance_residuals",
    "spectrum_slope",
    "dissipation_rate",
    "stationary_report",
    "time_average_scan",
    "halves_agree",
]


class StatisticsError(CascadeError):
    """A statistical evaluation cannot be carried out on the given data."""


class InsufficientSamplesError(StatisticsError):
    """Too few samples or batches for the requested estimate."""


def default_burn_in(nu: float, horizon: float) -> float:
    """Burn-in cutoff ``min(10 / nu, horizon / 2)`` (the cap applies at
    ``nu = 0``)."""
    if horizon <= 0:
        raise ParameterError(f"horizon: must be > 0 (got {horizon})")
    cap = 0.5 * horizon
    if nu <= 0:
        return cap
    return min(10.0 / nu, cap)


class MomentAccumulator:
    """Online, mergeable moment sums over post-burn-in samples.

    Parameters
    ----------
    n_shells : int
        State dimension.
    burn_in : float
        Samples with time strictly below this are ignored.
    kappa : float
        Exponent in the tracked global sum of ``exp(kappa |u|^2)``.
    batch_length : int
        Consecutive samples per batch mean; standard errors are computed
        across completed batches.  Batches never span a merge boundary, and
        a trailing partial batch contributes to the totals but not to the
        error bars.
    t_max : float, optional
        If given, samples with time ``>= t_max`` are ignored (used to
        split a run into windows).
    """

    _GLOBALS = 3

    def __init__(
        self,
        n_shells: int,
        burn_in: float = 0.0,
        kappa: float = 0.0,
        batch_length: int = 100,
        t_max: float | None = None,
    ) -> None:
        if not isinstance(n_shells, (int, np.integer)) or n_shells < 1:
            raise ParameterError(f"n_shells: must be an integer >= 1 (got {n_shells})")
        if not (math.isfinite(burn_in) and burn_in >= 0):
            raise ParameterError(f"burn_in: must be finite and >= 0 (got {burn_in})")
        if not isinstance(batch_length, (int, np.integer)) or batch_length < 1:
            raise ParameterError(
                f"batch_length: must be an integer >= 1 (got {batch_length})"
            )
        if not math.isfinite(kappa):
            raise ParameterError(f"kappa: must be finite (got {kappa})")
        if t_max is not None and t_max <= burn_in:
            raise ParameterError(
                f"t_max: must exceed burn_in (got {t_max} <= {burn_in})"
            )
        self.n_shells = int(n_shells)
        self.burn_in = float(burn_in)
        self.kappa = float(kappa)
        self.batch_length = int(batch_length)
        self.t_max = None if t_max is None else float(t_max)
        self._dim = 5 * self.n_shells + self._GLOBALS
        self._w2 = np.exp2(2.0 * np.arange(self.n_shells))
        self.count = 0
        self._totals = np.zeros(self._dim)
        self._batches: list[NDArray[np.float64]] = []
        self._partial = np.zeros(self._dim)
        self._partial_count = 0

    def _tracked(self, states: NDArray[np.float64]) -> NDArray[np.float64]:
        u = states
        n = self.n_shells
        out = np.empty((u.shape[0], self._dim))
        u_next = np.empty_like(u)
        u_next[:, :-1] = u[:, 1:]
        u_next[:, -1] = 0.0
        out[:, 0:n] = u
        u2 = u * u
        out[:, n : 2 * n] = u2
        out[:, 2 * n : 3 * n] = u2 * u
        out[:, 3 * n : 4 * n] = u * u_next
        out[:, 4 * n : 5 * n] = u2 * u_next
        e = np.sum(u2, axis=1)
        out[:, 5 * n] = u2 @ self._w2
        out[:, 5 * n + 1] = e
        out[:, 5 * n + 2] = np.exp(self.kappa * e)
        return out

    def record(self, state: ShellState) -> "MomentAccumulator":
        """Ingest one sampled state (ignored while ``t < burn_in``)."""
        self.record_block(np.array([state.t]), state.u[None, :])
        return self

    def record_block(
        self, times: NDArray[np.float64], states: NDArray[np.float64]
    ) -> "MomentAccumulator":
        """Ingest consecutive samples of one trajectory (vectorized)."""
        times = np.asarray(times, dtype=np.float64)
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != self.n_shells:
            raise ShapeMismatchError(
                f"states: expected shape (m, {self.n_shells}) "
                f"(got {states.shape})"
            )
        if times.shape != (states.shape[0],):
            raise ShapeMismatchError(
                f"times: expected shape ({states.shape[0]},) (got {times.shape})"
            )
        keep = times >= self.burn_in
        if self.t_max is not None:
            keep &= times < self.t_max
        rows = self._tracked(states[keep])
        m = rows.shape[0]
        if m == 0:
            return self
        self._totals += rows.sum(axis=0)
        self.count += m
        start = 0
        if self._partial_count > 0:
            take = min(self.batch_length - self._partial_count, m)
            self._partial += rows[:take].sum(axis=0)
            self._partial_count += take
            start = take
            if self._partial_count == self.batch_length:
                self._batches.append(self._partial / self.batch_length)
                self._partial = np.zeros(self._dim)
                self._partial_count = 0
        full = (m - start) // self.batch_length
        if full > 0:
            block = rows[start : start + full * self.batch_length]
            sums = block.reshape(full, self.batch_length, self._dim).sum(axis=1)
            self._batches.extend(sums / self.batch_length)
            start += full * self.batch_length
        if start < m:
            self._partial += rows[start:].sum(axis=0)
            self._partial_count += m - start
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """Fold ``other`` into this accumulator.

        Totals add exactly; completed batches concatenate.  The other
        accumulator's trailing partial batch is folded into this
        accumulator's totals but opens no new batch (batches never span
        trajectories).
        """
        if not isinstance(other, MomentAccumulator):
            raise ParameterError("merge: expected a MomentAccumulator")
        if other.n_shells != self.n_shells:
            raise ShapeMismatchError(
                f"merge: shell counts differ ({self.n_shells} vs {other.n_shells})"
            )
        if other.batch_length != self.batch_length or other.kappa != self.kappa:
            raise ParameterError(
                "merge: accumulators must share batch_length and kappa"
            )
        self._totals = self._totals + other._totals
        self.count += other.count
        self._batches.extend(other._batches)
        return self

    @property
    def n_batches(self) -> int:
        return len(self._batches)

    def _require_count(self) -> int:
        if self.count == 0:
            raise InsufficientSamplesError("no samples past burn-in")
        return self.count

    def _means(self) -> NDArray[np.float64]:
        return self._totals / self._require_count()

    def _batch_matrix(self) -> NDArray[np.float64]:
        if len(self._batches) < 2:
            raise InsufficientSamplesError(
                f"need >= 2 completed batches for error bars "
                f"(have {len(self._batches)})"
            )
        return np.asarray(self._batches)

    # Mean accessors; slices follow the tracked layout
    # [u, u^2, u^3, u u_next, u^2 u_next, |u|^2_{H^1}, |u|^2, exp(k|u|^2)].
    @property
    def mean_u(self) -> NDArray[np.float64]:
        return self._means()[0 : self.n_shells]

    @property
    def mean_u2(self) -> NDArray[np.float64]:
        return self._means()[self.n_shells : 2 * self.n_shells]

    @property
    def mean_u3(self) -> NDArray[np.float64]:
        return self._means()[2 * self.n_shells : 3 * self.n_shells]

    @property
    def mean_u_unext(self) -> NDArray[np.float64]:
        return self._means()[3 * self.n_shells : 4 * self.n_shells]

    @property
    def mean_u2_unext(self) -> NDArray[np.float64]:
        return self._means()[4 * self.n_shells : 5 * self.n_shells]

    @property
    def mean_h1_sq(self) -> float:
        return float(self._means()[5 * self.n_shells])

    @property
    def mean_energy(self) -> float:
        return float(self._means()[5 * self.n_shells + 1])

    @property
    def mean_exp_energy(self) -> float:
        return float(self._means()[5 * self.n_shells + 2])


def _linear_se(
    batch_matrix: NDArray[np.float64], weights: NDArray[np.float64]
) -> float:
    """Standard error of a fixed linear functional of the tracked means."""
    values = batch_matrix @ weights
    b = values.size
    return float(values.std(ddof=1) / math.sqrt(b))


def _balance_weight_rows(params: ShellParams, n: int):
    """Weight vectors expressing r1_j and S_n in the tracked layout."""
    dim = 5 * n + MomentAccumulator._GLOBALS
    j = np.arange(n, dtype=np.float64)
    w2 = np.exp2(2.0 * j)
    wc = np.exp2(params.c * j)
    wcm = np.exp2(params.c * (j - 1.0))
    r1_rows = np.zeros((n, dim))
    s_rows = np.zeros((n, dim))
    for jj in range(n):
        # r1_j = nu 2^{2j} <u_j> + 2^{cj} <u_j u_{j+1}> - 2^{c(j-1)} <u_{j-1}^2>
        r1_rows[jj, jj] = params.nu * w2[jj]
        r1_rows[jj, 3 * n + jj] = wc[jj]
        if jj > 0:
            r1_rows[jj, n + jj - 1] = -wcm[jj]
        # S_n = nu sum_{j<=n} 2^{2j} <u_j^2> + 2^{cn} <u_n^2 u_{n+1}>
        s_rows[jj, n : n + jj + 1] = params.nu * w2[: jj + 1]
        s_rows[jj, 4 * n + jj] = wc[jj]
    return r1_rows, s_rows


@dataclass(frozen=True)
class BalanceFragment:
    """First-moment residuals and partial-sum identity values with errors."""

    r1: NDArray[np.float64]
    r1_se: NDArray[np.float64]
    s_partial: NDArray[np.float64]
    s_partial_se: NDArray[np.float64]
    n_samples: int
    n_batches: int
    consistent_with_forcing: bool


@dataclass(frozen=True)
class StationaryReport:
    """Stationary diagnostics; every value carries an error and a count."""

    flux_mean: NDArray[np.float64]
    flux_se: NDArray[np.float64]
    r1: NDArray[np.float64]
    r1_se: NDArray[np.float64]
    s_partial: NDArray[np.float64]
    s_partial_se: NDArray[np.float64]
    slope: float
    slope_se: float
    epsilon: float
    epsilon_se: float
    n_samples: int
    n_batches: int


def balance_residuals(acc: MomentAccumulator, params: ShellParams) -> BalanceFragment:
    """Evaluate the stationary balance identities from accumulated moments.

    Returns the per-shell first-moment residuals ``r1_j`` (zero in exact
    stationarity) and the partial sums ``S_n`` (equal to ``sigma^2 / 2``
    in exact stationarity), each with batch-means standard errors.

    Raises
    ------
    InsufficientSamplesError
        If fewer than two batches completed.
    """
    if acc.n_shells != params.n_shells:
        raise ShapeMismatchError(
            f"accumulator has {acc.n_shells} shells, params {params.n_shells}"
        )
    bm = acc._batch_matrix()
    means = acc._means()
    r1_rows, s_rows = _balance_weight_rows(params, acc.n_shells)
    r1 = r1_rows @ means
    s = s_rows @ means
    r1_se = np.array([_linear_se(bm, row) for row in r1_rows])
    s_se = np.array([_linear_se(bm, row) for row in s_rows])
    consistent = True
    if params.sigma > 0.0 and float(np.max(np.abs(s))) < 1e-12 * params.sigma**2:
        consistent = False
        warnings.warn(
            "all partial sums S_n vanish although sigma > 0; the "
            "accumulated data is inconsistent with forced dynamics",
            stacklevel=2,
        )
    return BalanceFragment(
        r1=r1,
        r1_se=r1_se,
        s_partial=s,
        s_partial_se=s_se,
        n_samples=acc.count,
        n_batches=acc.n_batches,
        consistent_with_forcing=consistent,
    )


def flux_moments(
    acc: MomentAccumulator, params: ShellParams
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-shell mean energy flux ``2^{cj} <u_j^2 u_{j+1}>`` with errors.

    Raises
    ------
    InsufficientSamplesError
        If fewer than two batches completed.
    """
    if acc.n_shells != params.n_shells:
        raise ShapeMismatchError(
            f"accumulator has {acc.n_shells} shells, params {params.n_shells}"
        )
    bm = acc._batch_matrix()
    n = acc.n_shells
    wc = np.exp2(params.c * np.arange(n, dtype=np.float64))
    flux_mean = wc * acc.mean_u2_unext
    flux_se = np.empty(n)
    for jj in range(n):
        w = np.zeros(acc._dim)
        w[4 * n + jj] = wc[jj]
        flux_se[jj] = _linear_se(bm, w)
    return flux_mean, flux_se


def spectrum_table(
    acc: MomentAccumulator,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-shell ``log2 <u_j^2>`` with delta-method standard errors.

    Raises
    ------
    StatisticsError
        If a second moment is not strictly positive.
    InsufficientSamplesError
        If fewer than two batches completed.
    """
    bm = acc._batch_matrix()
    n = acc.n_shells
    mean_u2 = acc.mean_u2
    if np.any(mean_u2 <= 0.0):
        raise StatisticsError(
            "second moments must be positive to report a log spectrum"
        )
    log2_u2 = np.log2(mean_u2)
    se = np.empty(n)
    for jj in range(n):
        w = np.zeros(acc._dim)
        w[n + jj] = 1.0
        se[jj] = _linear_se(bm, w) / (mean_u2[jj] * math.log(2.0))
    return log2_u2, se


def spectrum_slope(
    acc: MomentAccumulator, j_range: tuple[int, int]
) -> tuple[float, float]:
    """Least-squares slope of ``log2 <u_j^2>`` versus ``j`` over ``j_range``.

    ``j_range`` is inclusive.  The standard error is a jackknife over
    batches (each batch left out of the moment means in turn).

    Raises
    ------
    ParameterError
        If the range is empty or leaves the truncation.
    StatisticsError
        If a second moment in the range is not strictly positive.
    """
    lo, hi = int(j_range[0]), int(j_range[1])
    if not (0 <= lo < hi < acc.n_shells):
        raise ParameterError(
            f"j_range: need 0 <= lo < hi < {acc.n_shells} (got ({lo}, {hi}))"
        )
    js = np.arange(lo, hi + 1, dtype=np.float64)

    def fit(mean_u2_range: NDArray[np.float64]) -> float:
        if np.any(mean_u2_range <= 0.0):
            raise StatisticsError(
                f"second moments must be positive over j in [{lo}, {hi}] "
                "to fit a log-spectrum slope"
            )
        return float(np.polyfit(js, np.log2(mean_u2_range), 1)[0])

    sl = lambda v: v[acc.n_shells + lo : acc.n_shells + hi + 1]
    slope = fit(sl(acc._means()))
    bm = acc._batch_matrix()
    b = bm.shape[0]
    batch_means = bm.mean(axis=0)
    loo = []
    for i in range(b):
        m = (b * batch_means - bm[i]) / (b - 1)
        loo.append(fit(sl(m)))
    loo = np.asarray(loo)
    se = math.sqrt((b - 1) / b * float(np.sum((loo - loo.mean()) ** 2)))
    return slope, se


def dissipation_rate(
    acc: MomentAccumulator, params: ShellParams
) -> tuple[float, float]:
    """Mean dissipation ``nu <|u|^2_{H^1}>`` with its standard error."""
    if acc.n_shells != params.n_shells:
        raise ShapeMismatchError(
            f"accumulator has {acc.n_shells} shells, params {params.n_shells}"
        )
    bm = acc._batch_matrix()
    w = np.zeros(acc._dim)
    w[5 * acc.n_shells] = params.nu
    eps = params.nu * acc.mean_h1_sq
    return eps, _linear_se(bm, w)


def stationary_report(
    acc: MomentAccumulator,
    params: ShellParams,
    j_range: tuple[int, int] = (3, 12),
) -> StationaryReport:
    """Assemble the full stationary report (balances, flux, slope, rate)."""
    frag = balance_residuals(acc, params)
    flux_mean, flux_se = flux_moments(acc, params)
    slope, slope_se = spectrum_slope(acc, j_range)
    eps, eps_se = dissipation_rate(acc, params)
    return StationaryReport(
        flux_mean=flux_mean,
        flux_se=flux_se,
        r1=frag.r1,
        r1_se=frag.r1_se,
        s_partial=frag.s_partial,
        s_partial_se=frag.s_partial_se,
        slope=slope,
        slope_se=slope_se,
        epsilon=eps,
        epsilon_se=eps_se,
        n_samples=acc.count,
        n_batches=acc.n_batches,
    )


def time_average_scan(
    streams: Sequence[tuple[NDArray[np.float64], NDArray[np.float64]]],
    T_grid: Iterable[float],
) -> NDArray[np.float64]:
    """Variance of window averages ``(1/T) int_0^T phi dt`` versus ``T``.

    ``streams`` holds per-trajectory pairs ``(times, values)`` sampled on
    a uniform grid starting at the window origin.  For each ``T`` in the
    grid, every trajectory is cut into as many disjoint length-``T``
    windows as fit; the trapezoid average over each window is one
    replicate, and the reported value is the variance across all
    replicates of all trajectories.

    Returns
    -------
    ndarray
        Shape ``(len(T_grid), 3)`` with columns ``T``, variance, and
        replicate count.

    Raises
    ------
    ParameterError
        If fewer than 16 trajectories are supplied or a ``T`` does not
        fit a single window.
    """
    if len(streams) < 16:
        raise ParameterError(
            f"need >= 16 independent trajectories (got {len(streams)})"
        )
    grid = [float(T) for T in T_grid]
    if not grid:
        raise ParameterError("T_grid: must be nonempty")
    rows = []
    for T in grid:
        if not (math.isfinite(T) and T > 0):
            raise ParameterError(f"T_grid: entries must be finite and > 0 (got {T})")
        replicates = []
        for times, values in streams:
            times = np.asarray(times, dtype=np.float64)
            values = np.asarray(values, dtype=np.float64)
            if times.size < 2 or times.shape != values.shape:
                raise ShapeMismatchError(
                    "each stream needs matching times/values with >= 2 samples"
                )
            dt = times[1] - times[0]
            t0 = times[0]
            per = int(round(T / dt))
            if per < 1 or (times.size - 1) < per:
                raise ParameterError(
                    f"T = {T} does not fit a window of the stream "
                    f"(span {times[-1] - t0}, spacing {dt})"
                )
            n_win = (times.size - 1) // per
            for k in range(n_win):
                seg = values[k * per : k * per + per + 1]
                replicates.append(float(np.trapezoid(seg, dx=dt) / (per * dt)))
        reps = np.asarray(replicates)
        if reps.size < 2:
            raise InsufficientSamplesError(
                f"T = {T}: fewer than 2 window replicates"
            )
        rows.append((T, float(reps.var(ddof=1)), reps.size))
    return np.asarray(rows)


def halves_agree(
    first: MomentAccumulator,
    second: MomentAccumulator,
    z: float = 3.0,
) -> bool:
    """Stationarity check: do two half-window accumulators agree?

    Compares the mean squared Euclidean and H^1 norms of the two halves;
    agreement within ``z`` combined standard errors on both is taken as
    consistency with stationarity.
    """
    ok = True
    for idx in (5 * first.n_shells, 5 * first.n_shells + 1):
        w = np.zeros(first._dim)
        w[idx] = 1.0
        a = float(first._means()[idx])
        b = float(second._means()[idx])
        se = math.hypot(_linear_se(first._batch_matrix(), w),
                        _linear_se(second._batch_matrix(), w))
        if abs(a - b) > z * se:
            ok = False
    return ok
