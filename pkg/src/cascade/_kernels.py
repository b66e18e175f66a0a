"""Compiled inner loops shared by the integrator and linearization layers.

Everything in this module is numba-compiled, allocation-light, and keeps a
strict evaluation order so that runs are bit-for-bit reproducible.  The
public modules wrap these kernels; nothing here validates its inputs.

Status codes returned by the stepping kernels:

- ``STATUS_OK`` -- chunk completed
- ``STATUS_NONFINITE`` -- state left the finite range (step-size blow-up)
- ``STATUS_CLAMP_EXCEEDED`` -- a negative shell amplitude exceeded the
  positivity clamp threshold while clamping was armed
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_CLAMP_EXCEEDED = 2

#: Any weighted energy above this is treated as blow-up (also traps inf/nan).
_ENERGY_CAP = 1e300


@njit(cache=True, nogil=True)
def exp_em_chunk(
    u,
    unew,
    dw,
    dt,
    sigma,
    visc,
    bdt,
    binp,
    w2,
    clamp_threshold,
    linear_only,
    stride,
    step_offset,
    h1_last,
    int_h1,
    sum_u0dw,
    clamp_count,
    out_states,
    out_int_h1,
    row,
):
    """Advance ``u`` in place by ``dw.size`` exponential Euler-Maruyama steps.

    Per step, evaluated from the pre-step state:

        u_0 <- exp(-nu dt) u_0 - dt u_0 u_1 + sigma dW
        u_j <- exp(-(nu 2^{2j} + 2^{cj} max(u_{j+1}, 0)) dt) u_j
               + dt 2^{c(j-1)} u_{j-1}^2        (j >= 1)

    The exponential factor is evaluated as the product
    ``exp(-nu 2^{2j} dt) * exp(-2^{cj} max(u_{j+1},0) dt)`` with the first
    factor precomputed in ``visc``.  From a state with u_j >= 0 for all
    j >= 1 the update is a sum of nonnegative terms, so nonnegativity is
    preserved exactly; the clamp logic is armed per step only when the
    pre-step state satisfies that sign condition, and then counts (or, past
    ``clamp_threshold``, rejects) any residual negative entry.

    Arrays ``visc``, ``bdt``, ``binp``, ``w2`` hold exp(-nu 4^j dt),
    dt 2^{cj}, dt 2^{c(j-1)}, and 4^j respectively.  Pathwise accumulators:
    ``int_h1`` (trapezoid of the H^1 norm squared, ``h1_last`` carrying the
    previous step's value), ``sum_u0dw`` (sum of pre-step u_0 times raw dW).
    States at steps divisible by ``stride`` (global index ``step_offset + i
    + 1``) are copied into ``out_states`` starting at ``row``.
    """
    n = u.size
    top = n - 1
    status = STATUS_OK
    for i in range(dw.size):
        armed = True
        for j in range(1, n):
            if u[j] < 0.0:
                armed = False
                break
        sum_u0dw += u[0] * dw[i]
        u1 = u[1] if n > 1 else 0.0
        if linear_only:
            unew[0] = visc[0] * u[0] + sigma * dw[i]
            for j in range(1, n):
                unew[j] = visc[j] * u[j]
        else:
            unew[0] = visc[0] * u[0] - bdt[0] * u[0] * u1 + sigma * dw[i]
            for j in range(1, n):
                unext = u[j + 1] if j < top else 0.0
                if unext > 0.0:
                    decay = math.exp(-bdt[j] * unext) * (visc[j] * u[j])
                else:
                    decay = visc[j] * u[j]
                unew[j] = decay + binp[j] * (u[j - 1] * u[j - 1])
            if armed:
                for j in range(1, n):
                    if unew[j] < 0.0:
                        if unew[j] > -clamp_threshold:
                            unew[j] = 0.0
                            clamp_count += 1
                        else:
                            status = STATUS_CLAMP_EXCEEDED
        h1 = 0.0
        for j in range(n):
            h1 += w2[j] * unew[j] * unew[j]
        if not (h1 <= _ENERGY_CAP):
            status = STATUS_NONFINITE
        if status != STATUS_OK:
            return status, i, h1_last, int_h1, sum_u0dw, clamp_count, row
        int_h1 += 0.5 * (h1_last + h1) * dt
        h1_last = h1
        for j in range(n):
            u[j] = unew[j]
        if (step_offset + i + 1) % stride == 0:
            for j in range(n):
                out_states[row, j] = u[j]
            out_int_h1[row] = int_h1
            row += 1
    return STATUS_OK, dw.size, h1_last, int_h1, sum_u0dw, clamp_count, row


@njit(cache=True, nogil=True)
def euler_maruyama_chunk(
    u,
    unew,
    dw,
    dt,
    sigma,
    nudt,
    bdt,
    binp,
    w2,
    linear_only,
    stride,
    step_offset,
    h1_last,
    int_h1,
    sum_u0dw,
    out_states,
    out_int_h1,
    row,
):
    """Advance ``u`` in place by plain Euler-Maruyama steps.

    Same accumulator and sampling conventions as :func:`exp_em_chunk`; no
    positivity clamping (the plain scheme does not preserve signs).
    ``nudt`` holds nu 4^j dt.
    """
    n = u.size
    top = n - 1
    for i in range(dw.size):
        sum_u0dw += u[0] * dw[i]
        u1 = u[1] if n > 1 else 0.0
        if linear_only:
            unew[0] = u[0] - nudt[0] * u[0] + sigma * dw[i]
            for j in range(1, n):
                unew[j] = u[j] - nudt[j] * u[j]
        else:
            unew[0] = u[0] - nudt[0] * u[0] - bdt[0] * u[0] * u1 + sigma * dw[i]
            for j in range(1, n):
                unext = u[j + 1] if j < top else 0.0
                unew[j] = (
                    u[j]
                    - nudt[j] * u[j]
                    - bdt[j] * u[j] * unext
                    + binp[j] * (u[j - 1] * u[j - 1])
                )
        h1 = 0.0
        for j in range(n):
            h1 += w2[j] * unew[j] * unew[j]
        if not (h1 <= _ENERGY_CAP):
            return STATUS_NONFINITE, i, h1_last, int_h1, sum_u0dw, row
        int_h1 += 0.5 * (h1_last + h1) * dt
        h1_last = h1
        for j in range(n):
            u[j] = unew[j]
        if (step_offset + i + 1) % stride == 0:
            for j in range(n):
                out_states[row, j] = u[j]
            out_int_h1[row] = int_h1
            row += 1
    return STATUS_OK, dw.size, h1_last, int_h1, sum_u0dw, row


@njit(cache=True, nogil=True, inline="always")
def _drift_into(u, out, nu4, bc, bcm):
    """Write -(nu A u + B(u, u)) into ``out``.

    ``nu4[j] = nu 4^j``, ``bc[j] = 2^{cj}``, ``bcm[j] = 2^{c(j-1)}``.
    """
    n = u.size
    top = n - 1
    for j in range(n):
        unext = u[j + 1] if j < top else 0.0
        uprev = u[j - 1] if j > 0 else 0.0
        out[j] = -nu4[j] * u[j] - bc[j] * u[j] * unext + bcm[j] * (uprev * uprev)


@njit(cache=True, nogil=True)
def rk4_chunk(
    u,
    n_steps,
    dt,
    nu4,
    bc,
    bcm,
    w2,
    stride,
    step_offset,
    h1_last,
    int_h1,
    out_states,
    out_int_h1,
    row,
):
    """Advance ``u`` in place by classical fourth-order Runge-Kutta steps.

    Deterministic oracle; noise-free by construction.  Accumulator and
    sampling conventions match :func:`exp_em_chunk` (``sum_u0dw`` is
    identically zero and therefore not tracked).
    """
    n = u.size
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    stage = np.empty(n)
    for i in range(n_steps):
        _drift_into(u, k1, nu4, bc, bcm)
        for j in range(n):
            stage[j] = u[j] + 0.5 * dt * k1[j]
        _drift_into(stage, k2, nu4, bc, bcm)
        for j in range(n):
            stage[j] = u[j] + 0.5 * dt * k2[j]
        _drift_into(stage, k3, nu4, bc, bcm)
        for j in range(n):
            stage[j] = u[j] + dt * k3[j]
        _drift_into(stage, k4, nu4, bc, bcm)
        for j in range(n):
            u[j] = u[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        h1 = 0.0
        for j in range(n):
            h1 += w2[j] * u[j] * u[j]
        if not (h1 <= _ENERGY_CAP):
            return STATUS_NONFINITE, i, h1_last, int_h1, row
        int_h1 += 0.5 * (h1_last + h1) * dt
        h1_last = h1
        if (step_offset + i + 1) % stride == 0:
            for j in range(n):
                out_states[row, j] = u[j]
            out_int_h1[row] = int_h1
            row += 1
    return STATUS_OK, n_steps, h1_last, int_h1, row


@njit(cache=True, nogil=True)
def tangent_chunk(
    base_states,
    start_step,
    end_step,
    rho,
    active_from,
    visc,
    bdt,
    binp,
    linear_only,
):
    """Advance tangent vectors ``rho`` along a stored base trajectory.

    ``base_states[k]`` is the base state at step ``k``; each row ``rho[i]``
    is advanced by the exact Jacobian of the exponential Euler-Maruyama
    step from step ``start_step`` to ``end_step``.  Row ``i`` starts
    participating at step ``active_from[i]``; at that step it is reset to
    the unit vector e_0 (use ``active_from[i] < start_step`` to propagate
    the caller-supplied initial value instead).

    Per step, with E_j = exp(-(nu 2^{2j} + 2^{cj} max(u_{j+1},0)) dt):

        rho_0 <- exp(-nu dt) rho_0 - dt (rho_0 u_1 + u_0 rho_1)
        rho_j <- E_j rho_j - [u_{j+1} > 0] dt 2^{cj} E_j u_j rho_{j+1}
                 + 2 dt 2^{c(j-1)} u_{j-1} rho_{j-1}      (j >= 1)

    The additive noise does not enter the Jacobian.  Returns
    ``STATUS_NONFINITE`` with the failing step when a tangent leaves the
    finite range, else ``STATUS_OK``.
    """
    m = rho.shape[0]
    n = rho.shape[1]
    top = n - 1
    efac = np.empty(n)
    dfac = np.empty(n)
    rnew = np.empty(n)
    for k in range(start_step, end_step):
        u = base_states[k]
        # Shared step factors: efac[j] = E_j, dfac[j] = d u_j' / d u_{j+1}.
        if linear_only:
            for j in range(1, n):
                efac[j] = visc[j]
                dfac[j] = 0.0
        else:
            for j in range(1, n):
                unext = u[j + 1] if j < top else 0.0
                if unext > 0.0:
                    ej = math.exp(-bdt[j] * unext) * visc[j]
                    dfac[j] = -bdt[j] * ej * u[j]
                else:
                    ej = visc[j]
                    dfac[j] = 0.0
                efac[j] = ej
        for i in range(m):
            if active_from[i] > k:
                continue
            if active_from[i] == k:
                for j in range(n):
                    rho[i, j] = 0.0
                rho[i, 0] = 1.0
            r = rho[i]
            if linear_only:
                rnew[0] = visc[0] * r[0]
                for j in range(1, n):
                    rnew[j] = efac[j] * r[j]
            else:
                r1 = r[1] if n > 1 else 0.0
                u1 = u[1] if n > 1 else 0.0
                rnew[0] = visc[0] * r[0] - bdt[0] * (r[0] * u1 + u[0] * r1)
                for j in range(1, n):
                    rnext = r[j + 1] if j < top else 0.0
                    rnew[j] = (
                        efac[j] * r[j]
                        + dfac[j] * rnext
                        + 2.0 * binp[j] * u[j - 1] * r[j - 1]
                    )
            bound = 0.0
            for j in range(n):
                rho[i, j] = rnew[j]
                bound += rnew[j] * rnew[j]
            if not (bound <= _ENERGY_CAP):
                return STATUS_NONFINITE, k
    return STATUS_OK, end_step
