"""Core operators, norms, and fluxes of the truncated dyadic shell model.

The model tracks shell amplitudes ``u_0 .. u_N`` attached to wavenumbers
``2^j``.  Mode 0 receives additive noise; every shell ``j >= 1`` obeys

    du_j/dt + nu 2^{2j} u_j + (2^{cj} u_j u_{j+1} - 2^{c(j-1)} u_{j-1}^2) = 0

with the conventions ``u_{-1} = 0`` and the Galerkin closure
``u_{N+1} = 0``.  Everything here is a pure function of its inputs; the
stochastic forcing lives entirely in :mod:`cascade.integrator`.

Usage::

    import numpy as np
    from cascade.model import ShellParams, drift

    params = ShellParams(nu=1e-4, c=1.0, sigma=1.0, n_shells=19)
    u = np.zeros(params.n_shells)
    dudt = drift(params, u)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "CascadeError",
    "ParameterError",
    "ShapeMismatchError",
    "ShellIndexError",
    "GALERKIN_CLOSURE",
    "B_FORMS",
    "ShellParams",
    "ShellState",
    "apply_A",
    "apply_B",
    "drift",
    "shell_flux",
    "sobolev_norm",
    "sup_norm",
    "intermittency_dimension",
]

#: Maximum supported truncation size; keeps 2^{2j} (and 2^{cj} with c <= 3)
#: comfortably inside double-precision range.
MAX_SHELLS = 30

#: The only supported boundary rule at the truncation.
GALERKIN_CLOSURE = "u_{N+1} = 0 Galerkin"

#: Accepted values for the ``form`` argument of :func:`apply_B`.
B_FORMS = frozenset({"equation", "symmetrized"})


class CascadeError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(CascadeError, ValueError):
    """A model or run parameter violates its documented constraint."""


class ShapeMismatchError(CascadeError, ValueError):
    """Vector arguments disagree in length or are not one-dimensional."""


class ShellIndexError(CascadeError, IndexError):
    """A shell index lies outside the truncation 0..N."""


@dataclass(frozen=True)
class ShellParams:
    """Model constants for a finite truncation.

    Parameters
    ----------
    nu : float
        Viscosity, ``nu >= 0``.
    c : float
        Intermittency exponent in the coupling ``2^{cj}``; restricted to
        ``1 <= c <= 3``.
    sigma : float
        Amplitude of the additive noise on mode 0, ``sigma >= 0``.
    n_shells : int
        Count of retained shells ``N + 1`` (so amplitudes are indexed
        ``0..N``); between 1 and 30.
    closure : str
        Boundary rule at the truncation; only the Galerkin rule
        ``u_{N+1} = 0`` is supported.
    """

    nu: float
    c: float
    sigma: float
    n_shells: int
    closure: str = field(default=GALERKIN_CLOSURE)

    def __post_init__(self) -> None:
        if not np.isfinite(self.nu) or self.nu < 0.0:
            raise ParameterError(f"nu: must be finite and >= 0 (got {self.nu})")
        if not np.isfinite(self.c) or not 1.0 <= self.c <= 3.0:
            raise ParameterError(f"c: must lie in [1, 3] (got {self.c})")
        if not np.isfinite(self.sigma) or self.sigma < 0.0:
            raise ParameterError(
                f"sigma: must be finite and >= 0 (got {self.sigma})"
            )
        if not isinstance(self.n_shells, (int, np.integer)):
            raise ParameterError(
                f"n_shells: must be an integer (got {self.n_shells!r})"
            )
        if not 1 <= int(self.n_shells) <= MAX_SHELLS:
            raise ParameterError(
                f"n_shells: must lie in [1, {MAX_SHELLS}] (got {self.n_shells})"
            )
        if self.closure != GALERKIN_CLOSURE:
            raise ParameterError(
                f"closure: only {GALERKIN_CLOSURE!r} is supported "
                f"(got {self.closure!r})"
            )

    @property
    def top_shell(self) -> int:
        """Largest retained shell index ``N = n_shells - 1``."""
        return int(self.n_shells) - 1


@dataclass(frozen=True)
class ShellState:
    """Shell amplitude vector with its simulation time stamp.

    Parameters
    ----------
    u : ndarray
        Amplitudes ``u_0 .. u_N`` (float64, one-dimensional).
    t : float
        Simulation time, ``t >= 0``.
    """

    u: NDArray[np.float64]
    t: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.u, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeMismatchError(
                f"u: must be a one-dimensional vector (got shape {arr.shape})"
            )
        if not np.all(np.isfinite(arr)):
            raise ParameterError("u: all entries must be finite")
        if not np.isfinite(self.t) or self.t < 0.0:
            raise ParameterError(f"t: must be finite and >= 0 (got {self.t})")
        object.__setattr__(self, "u", arr)


def _as_shell_vector(u: NDArray[np.float64], name: str) -> NDArray[np.float64]:
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(
            f"{name}: must be one-dimensional (got shape {arr.shape})"
        )
    return arr


def apply_A(u: NDArray[np.float64]) -> NDArray[np.float64]:
    """Apply the diagonal dissipation operator ``(A u)_j = 2^{2j} u_j``.

    Parameters
    ----------
    u : ndarray
        Shell vector ``u_0 .. u_N``.

    Returns
    -------
    ndarray
        Vector with components ``2^{2j} u_j``.
    """
    arr = _as_shell_vector(u, "u")
    j = np.arange(arr.size, dtype=np.float64)
    return np.exp2(2.0 * j) * arr


def apply_B(
    u: NDArray[np.float64],
    v: NDArray[np.float64],
    c: float,
    form: str = "equation",
) -> NDArray[np.float64]:
    """Evaluate the bilinear cascade term ``B(u, v)``.

    Both forms use the conventions ``u_{-1} = v_{-1} = 0`` and the
    Galerkin closure ``u_{N+1} = v_{N+1} = 0``.

    Parameters
    ----------
    u, v : ndarray
        Shell vectors of equal length.
    c : float
        Intermittency exponent.
    form : str
        Either ``"equation"``, the form appearing in the model equations,

            B(u, v)_j = 2^{cj} u_j v_{j+1} - 2^{c(j-1)} u_{j-1} v_{j-1},

        or ``"symmetrized"``, the symmetric part in (u, v),

            B(u, v)_j = 2^{cj-1} (u_{j+1} v_j + v_{j+1} u_j)
                        - 2^{c(j-1)} u_{j-1} v_{j-1}.

        The two coincide whenever ``u == v``, and the symmetrized form is
        half the directional derivative of ``u -> B(u, u)``.

    Returns
    -------
    ndarray
        The vector ``B(u, v)``.

    Raises
    ------
    ShapeMismatchError
        If ``u`` and ``v`` differ in length.
    ParameterError
        If ``form`` is not one of the accepted names.
    """
    uu = _as_shell_vector(u, "u")
    vv = _as_shell_vector(v, "v")
    if uu.size != vv.size:
        raise ShapeMismatchError(
            f"u and v must have equal length (got {uu.size} and {vv.size})"
        )
    if form not in B_FORMS:
        raise ParameterError(
            f"form: must be one of {sorted(B_FORMS)} (got {form!r})"
        )
    n = uu.size
    j = np.arange(n, dtype=np.float64)
    # Coefficients are formed in the log2 domain, then exponentiated.
    w_j = np.exp2(c * j)
    w_jm1 = np.exp2(c * (j - 1.0))
    u_next = np.concatenate((uu[1:], [0.0]))
    v_next = np.concatenate((vv[1:], [0.0]))
    u_prev = np.concatenate(([0.0], uu[:-1]))
    v_prev = np.concatenate(([0.0], vv[:-1]))
    if form == "equation":
        return w_j * uu * v_next - w_jm1 * u_prev * v_prev
    # Summands associate exactly as in the equation form so that the two
    # forms agree bitwise on the diagonal u == v.
    return 0.5 * (w_j * uu * v_next + w_j * vv * u_next) - w_jm1 * u_prev * v_prev


def drift(params: ShellParams, u: NDArray[np.float64]) -> NDArray[np.float64]:
    """Deterministic drift ``-(nu A u + B(u, u))`` of the truncated model.

    The additive forcing on mode 0 is not part of the drift; it enters
    through the integrator's noise increment.

    Parameters
    ----------
    params : ShellParams
        Model constants; ``params.n_shells`` must equal ``len(u)``.
    u : ndarray
        Shell vector.

    Returns
    -------
    ndarray
        Time derivative of ``u`` under the unforced dynamics.
    """
    arr = _as_shell_vector(u, "u")
    if arr.size != params.n_shells:
        raise ShapeMismatchError(
            f"u: expected {params.n_shells} shells (got {arr.size})"
        )
    return -(params.nu * apply_A(arr) + apply_B(arr, arr, params.c, "equation"))


def shell_flux(params: ShellParams, u: NDArray[np.float64], n: int) -> float:
    """Energy flux through shell ``n``: ``Pi_n = 2^{cn} u_n^2 u_{n+1}``.

    Parameters
    ----------
    params : ShellParams
        Model constants.
    u : ndarray
        Shell vector of length ``params.n_shells``.
    n : int
        Shell index with ``0 <= n <= N``; at ``n = N`` the closure
        ``u_{N+1} = 0`` makes the flux vanish.

    Returns
    -------
    float
        The flux value.

    Raises
    ------
    ShellIndexError
        If ``n`` is outside ``0..N``.
    """
    arr = _as_shell_vector(u, "u")
    if arr.size != params.n_shells:
        raise ShapeMismatchError(
            f"u: expected {params.n_shells} shells (got {arr.size})"
        )
    if not 0 <= n <= params.top_shell:
        raise ShellIndexError(
            f"n: must lie in [0, {params.top_shell}] (got {n})"
        )
    u_next = arr[n + 1] if n < params.top_shell else 0.0
    return float(np.exp2(params.c * n) * arr[n] ** 2 * u_next)


def sobolev_norm(u: NDArray[np.float64], alpha: float) -> float:
    """Weighted norm ``|u|_{H^alpha} = sqrt(sum_j 2^{2 alpha j} u_j^2)``.

    ``alpha = 0`` gives the plain Euclidean norm.
    """
    arr = _as_shell_vector(u, "u")
    j = np.arange(arr.size, dtype=np.float64)
    return float(np.sqrt(np.sum(np.exp2(2.0 * alpha * j) * arr**2)))


def sup_norm(u: NDArray[np.float64], alpha: float) -> float:
    """Weighted sup norm ``|u|_{W^{alpha,inf}} = max_j 2^{alpha j} |u_j|``."""
    arr = _as_shell_vector(u, "u")
    j = np.arange(arr.size, dtype=np.float64)
    return float(np.max(np.exp2(alpha * j) * np.abs(arr)))


def intermittency_dimension(c: float) -> float:
    """Dimension of the turbulent-activity region, ``D = 5 - 2c``.

    The relation is physically meaningful for ``1 <= c <= 5/2`` (which
    maps onto ``0 <= D <= 3``); other values are accepted but flagged
    with a warning.
    """
    if not 1.0 <= c <= 2.5:
        warnings.warn(
            f"c = {c} lies outside the physically interpretable range "
            "[1, 5/2]; D = 5 - 2c returned anyway",
            stacklevel=2,
        )
    return 5.0 - 2.0 * c
