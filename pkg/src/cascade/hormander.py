"""Symbolic Lie-bracket calculus over polynomial vector fields and a
certifier for the Hoermander bracket condition on finite truncations.

The admissible family starts from the forced direction ``e_0`` and grows
by bracketing existing members with either ``e_0`` or the drift field
``F(u) = nu A u + B(u, u)``; the span of the constant members certifies
that noise spreads to every tracked shell.  All bracket arithmetic is
exact monomial bookkeeping with floating coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from cascade.model import (
    CascadeError,
    ParameterError,
    ShapeMismatchError,
    ShellParams,
)

__all__ = [
    "TermExplosionError",
    "PolyVectorField",
    "AdmissibleField",
    "BracketCertificate",
    "lie_bracket",
    "drift_field",
    "generate_admissible",
    "verify_span",
]

MAX_TRUNCATION = 12
MAX_DEPTH = 64
TERM_CAP = 2_000_000
PRUNE_RATIO = 1e-14
SPAN_TOL = 1e-10
BREADTH_FIRST_DEPTH = 7


class TermExplosionError(CascadeError):
    """A bracket computation exceeded the monomial budget."""


def _canonical(
    n_coords: int, raw: Mapping[tuple[int, tuple[int, ...]], float]
) -> tuple[tuple[tuple[int, tuple[int, ...]], float], ...]:
    merged: dict[tuple[int, tuple[int, ...]], float] = {}
    for (coord, exps), coeff in raw.items():
        if coeff == 0.0:
            continue
        if not 0 <= coord < n_coords:
            raise ShapeMismatchError(
                f"coordinate index {coord} outside 0..{n_coords - 1}"
            )
        if len(exps) != n_coords or any(e < 0 for e in exps):
            raise ShapeMismatchError(
                f"exponent multi-index {exps} invalid for {n_coords} coordinates"
            )
        key = (coord, tuple(int(e) for e in exps))
        merged[key] = merged.get(key, 0.0) + float(coeff)
    if not merged:
        return ()
    largest = max(abs(v) for v in merged.values())
    kept = {k: v for k, v in merged.items() if abs(v) >= PRUNE_RATIO * largest}
    return tuple(sorted(kept.items()))


@dataclass(frozen=True)
class PolyVectorField:
    """Sparse polynomial vector field on ``R^{n_coords}``.

    Each term maps ``(coordinate, exponent multi-index)`` to a real
    coefficient.  Terms are canonicalized (merged, sorted) and
    coefficients smaller than ``1e-14`` times the largest are pruned, so
    equal fields compare equal.
    """

    n_coords: int
    terms: tuple[tuple[tuple[int, tuple[int, ...]], float], ...]

    def __init__(
        self,
        n_coords: int,
        terms: Mapping[tuple[int, tuple[int, ...]], float],
    ) -> None:
        if not isinstance(n_coords, (int, np.integer)) or n_coords < 1:
            raise ParameterError(
                f"n_coords: must be an integer >= 1 (got {n_coords!r})"
            )
        object.__setattr__(self, "n_coords", int(n_coords))
        object.__setattr__(self, "terms", _canonical(int(n_coords), terms))

    @classmethod
    def zero(cls, n_coords: int) -> "PolyVectorField":
        return cls(n_coords, {})

    @classmethod
    def basis(cls, n_coords: int, j: int) -> "PolyVectorField":
        """The constant field ``e_j``."""
        if not 0 <= j < n_coords:
            raise ParameterError(
                f"j: must lie in [0, {n_coords - 1}] (got {j})"
            )
        return cls(n_coords, {(j, (0,) * n_coords): 1.0})

    def _term_dict(self) -> dict[tuple[int, tuple[int, ...]], float]:
        return dict(self.terms)

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        self._check_compatible(other)
        raw = self._term_dict()
        for key, coeff in other.terms:
            raw[key] = raw.get(key, 0.0) + coeff
        return PolyVectorField(self.n_coords, raw)

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        return self + other.scale(-1.0)

    def scale(self, factor: float) -> "PolyVectorField":
        return PolyVectorField(
            self.n_coords, {key: factor * coeff for key, coeff in self.terms}
        )

    def _check_compatible(self, other: "PolyVectorField") -> None:
        if self.n_coords != other.n_coords:
            raise ShapeMismatchError(
                f"fields live on different truncations "
                f"({self.n_coords} vs {other.n_coords} coordinates)"
            )

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def degree(self) -> int:
        """Largest total monomial degree (0 for the zero field)."""
        return max((sum(exps) for (_, exps), _ in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return self.degree == 0

    def constant_vector(self) -> NDArray[np.float64]:
        """Degree-0 part as a dense vector."""
        vec = np.zeros(self.n_coords)
        for (coord, exps), coeff in self.terms:
            if sum(exps) == 0:
                vec[coord] = coeff
        return vec

    def max_coefficient(self) -> float:
        return max((abs(c) for _, c in self.terms), default=0.0)

    def support(self) -> frozenset[int]:
        """Coordinates touched by any term (as output or as a factor)."""
        touched = set()
        for (coord, exps), _ in self.terms:
            touched.add(coord)
            touched.update(k for k, e in enumerate(exps) if e > 0)
        return frozenset(touched)

    def evaluate(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """Evaluate the field at the point ``u``."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.n_coords,):
            raise ShapeMismatchError(
                f"u: expected shape ({self.n_coords},) (got {u.shape})"
            )
        out = np.zeros(self.n_coords)
        for (coord, exps), coeff in self.terms:
            value = coeff
            for k, e in enumerate(exps):
                if e:
                    value *= u[k] ** e
            out[coord] += value
        return out

    def describe(self) -> str:
        """Human-readable polynomial, one line per nonzero coordinate."""
        by_coord: dict[int, list[str]] = {}
        for (coord, exps), coeff in self.terms:
            factors = [f"{coeff:g}"]
            factors += [
                f"u{k}" if e == 1 else f"u{k}^{e}"
                for k, e in enumerate(exps)
                if e
            ]
            by_coord.setdefault(coord, []).append("*".join(factors))
        if not by_coord:
            return "0"
        return "; ".join(
            f"d/dt u{coord} ~ " + " + ".join(parts)
            for coord, parts in sorted(by_coord.items())
        )


def lie_bracket(g1: PolyVectorField, g2: PolyVectorField) -> PolyVectorField:
    """Exact symbolic Lie bracket ``[G1, G2] = grad(G2) G1 - grad(G1) G2``.

    Raises
    ------
    ShapeMismatchError
        If the fields live on different truncations.
    TermExplosionError
        If the raw product exceeds the monomial budget.
    """
    g1._check_compatible(g2)
    n = g1.n_coords
    raw: dict[tuple[int, tuple[int, ...]], float] = {}

    def accumulate(df: PolyVectorField, along: PolyVectorField, sign: float):
        by_coord: dict[int, list[tuple[tuple[int, ...], float]]] = {}
        for (coord, exps), coeff in along.terms:
            by_coord.setdefault(coord, []).append((exps, coeff))
        for (coord, exps), coeff in df.terms:
            for k in range(n):
                e_k = exps[k]
                if e_k == 0 or k not in by_coord:
                    continue
                lowered = list(exps)
                lowered[k] -= 1
                for other_exps, other_coeff in by_coord[k]:
                    key = (
                        coord,
                        tuple(a + b for a, b in zip(lowered, other_exps)),
                    )
                    raw[key] = raw.get(key, 0.0) + sign * coeff * e_k * other_coeff
                    if len(raw) > TERM_CAP:
                        raise TermExplosionError(
                            f"bracket exceeds {TERM_CAP} monomials"
                        )

    accumulate(g2, g1, 1.0)
    accumulate(g1, g2, -1.0)
    return PolyVectorField(n, raw)


def drift_field(params: ShellParams, n_trunc: int) -> PolyVectorField:
    """Drift ``F(u) = nu A u + B(u, u)`` on coordinates ``0..n_trunc``.

    Uses the Galerkin closure ``u_{n_trunc+1} = 0``.  This is the field
    whose negative drives the model equations; bracket spans are
    insensitive to the overall sign.

    Raises
    ------
    ParameterError
        If ``n_trunc`` is negative or exceeds the symbolic guard (12).
    """
    if not isinstance(n_trunc, (int, np.integer)) or not 0 <= n_trunc <= MAX_TRUNCATION:
        raise ParameterError(
            f"n_trunc: must be an integer in [0, {MAX_TRUNCATION}] (got {n_trunc!r})"
        )
    n = int(n_trunc) + 1
    raw: dict[tuple[int, tuple[int, ...]], float] = {}

    def exps(*pairs: tuple[int, int]) -> tuple[int, ...]:
        e = [0] * n
        for k, power in pairs:
            e[k] += power
        return tuple(e)

    for j in range(n):
        if params.nu > 0.0:
            raw[(j, exps((j, 1)))] = params.nu * 4.0**j
        if j + 1 < n:
            raw[(j, exps((j, 1), (j + 1, 1)))] = 2.0 ** (params.c * j)
        if j >= 1:
            raw[(j, exps((j - 1, 2)))] = -(2.0 ** (params.c * (j - 1)))
    return PolyVectorField(n, raw)


@dataclass(frozen=True)
class AdmissibleField:
    """A member of the admissible family with its bracket recipe."""

    field: PolyVectorField
    expression: str
    depth: int


@dataclass(frozen=True)
class BracketCertificate:
    """Outcome of the constant-direction span search.

    ``witness`` lists the bracket expressions whose constant evaluations
    realize ``achieved_rank`` independent directions among coordinates
    ``0..N``; the certificate passes iff that rank is ``N + 1``.
    """

    N: int
    m: int
    achieved_rank: int
    min_singular_value: float
    witness: tuple[str, ...]
    passed: bool

    def __post_init__(self) -> None:
        if self.achieved_rank > self.N + 1:
            raise ParameterError(
                f"achieved_rank {self.achieved_rank} exceeds N+1 = {self.N + 1}"
            )
        if len(self.witness) != self.achieved_rank:
            raise ParameterError(
                f"witness length {len(self.witness)} != achieved_rank "
                f"{self.achieved_rank}"
            )

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "m": self.m,
            "achieved_rank": self.achieved_rank,
            "min_singular_value": self.min_singular_value,
            "witness": list(self.witness),
            "passed": self.passed,
        }


def _conversion_distance(exps: tuple[int, ...]) -> int:
    """Least number of drift brackets before this monomial can reach a
    pure power of ``u_0``.

    Each bracket with the drift lowers the shell content of one factor
    by at most one level (``u_j -> u_{j-1}^2``), so a factor ``u_k``
    needs ``2^k - 1`` brackets to convert; the needs add across factors.
    """
    return sum(e * (2**k - 1) for k, e in enumerate(exps))


def _budget_filter(vf: PolyVectorField, budget: int) -> PolyVectorField:
    """Drop terms that cannot contribute a constant within ``budget``
    further drift brackets.  Exact for constant extraction: discarded
    terms can never again become pure powers of ``u_0``, and only those
    survive the closing chain of ``e_0`` brackets.
    """
    kept = {
        key: coeff
        for key, coeff in vf.terms
        if _conversion_distance(key[1]) <= budget
    }
    if len(kept) == vf.n_terms:
        return vf
    return PolyVectorField(vf.n_coords, kept)


class _SpanBasis:
    """Orthonormal basis over sparse coefficient vectors, for pruning."""

    def __init__(self) -> None:
        self._basis: list[dict[tuple[int, tuple[int, ...]], float]] = []

    @staticmethod
    def _dot(a: Mapping, b: Mapping) -> float:
        if len(a) > len(b):
            a, b = b, a
        return sum(coeff * b.get(key, 0.0) for key, coeff in a.items())

    def try_add(self, vf: PolyVectorField) -> bool:
        """Return True (and extend the basis) if ``vf`` adds a direction."""
        vec = dict(vf.terms)
        norm0 = math.sqrt(self._dot(vec, vec))
        if norm0 == 0.0:
            return False
        # Two projection passes keep the residual orthogonal despite
        # cancellation across widely scaled coefficients.
        for _ in range(2):
            for b in self._basis:
                proj = self._dot(vec, b)
                if proj != 0.0:
                    for key, coeff in b.items():
                        vec[key] = vec.get(key, 0.0) - proj * coeff
        norm = math.sqrt(self._dot(vec, vec))
        if norm <= SPAN_TOL * norm0:
            return False
        self._basis.append({k: v / norm for k, v in vec.items()})
        return True


class _FamilyBuilder:
    """Level-by-level construction of the admissible family.

    With a finite ``depth_budget`` every stored field is restricted to
    the terms that can still produce constants within the remaining
    levels (see ``_budget_filter``); this keeps the search tractable
    without losing any certifiable direction.
    """

    def __init__(
        self, params: ShellParams, n_trunc: int, depth_budget: int | None = None
    ) -> None:
        self.n = int(n_trunc) + 1
        self.drift = drift_field(params, n_trunc)
        self.e0 = PolyVectorField.basis(self.n, 0)
        self.budget = None if depth_budget is None else int(depth_budget)
        seed = AdmissibleField(self.e0, "e0", 0)
        self.entries: list[AdmissibleField] = [seed]
        self.constants: list[tuple[NDArray[np.float64], str, int]] = []
        self._span = _SpanBasis()
        self._span.try_add(self.e0)
        self._frontier: list[AdmissibleField] = [seed]
        self.depth = 0
        self._collect_constants(seed)

    def _normalized(self, vf: PolyVectorField) -> PolyVectorField:
        scale = vf.max_coefficient()
        return vf.scale(1.0 / scale) if scale > 0.0 else vf

    def _reduce(
        self, vf: PolyVectorField, expr: str
    ) -> tuple[NDArray[np.float64], str] | None:
        """Bracket with ``e_0`` until degree 0; None if the chain dies."""
        while True:
            if vf.is_zero():
                return None
            if vf.is_constant():
                return vf.constant_vector(), expr
            vf = lie_bracket(vf, self.e0)
            expr = f"[{expr}, e0]"

    def _collect_constants(self, entry: AdmissibleField) -> None:
        reduced = self._reduce(entry.field, entry.expression)
        if reduced is not None:
            self.constants.append((reduced[0], reduced[1], entry.depth))

    def advance(self) -> None:
        """Generate the next depth level."""
        self.depth += 1
        remaining = None if self.budget is None else self.budget - self.depth
        fresh: list[AdmissibleField] = []
        for entry in self._frontier:
            for partner, label in ((self.e0, "e0"), (self.drift, "F")):
                try:
                    cand = lie_bracket(entry.field, partner)
                except TermExplosionError as exc:
                    raise TermExplosionError(
                        f"{exc} (at depth {self.depth})"
                    ) from exc
                if remaining is not None:
                    cand = _budget_filter(cand, remaining)
                if cand.is_zero() or not self._span.try_add(cand):
                    continue
                new = AdmissibleField(
                    self._normalized(cand),
                    f"[{entry.expression}, {label}]",
                    self.depth,
                )
                fresh.append(new)
                self._collect_constants(new)
        self.entries.extend(fresh)
        self._frontier = fresh

    def extend_by_chains(self, max_m: int) -> None:
        """Deepen with drift-bracket chains seeded from collected constants.

        Every new constant direction ``v`` launches the admissible chain
        ``[..[[v, F], F].., F]`` whose full ``e_0`` reductions are
        collected along the way; new constant directions launch chains of
        their own.  Seeds are orthogonalized against the directions
        already collected (written ``orth[X]`` in recipes): the residual
        is a linear combination of admissible constants, hence
        admissible, and stripping the dominant old directions keeps the
        faint new component above the coefficient-pruning floor.  The
        budget filter keeps only terms that can still convert, which
        makes each chain cheap.
        """
        basis: list[NDArray[np.float64]] = []
        queue: list[tuple[NDArray[np.float64], str, int]] = []

        def consider(vec: NDArray[np.float64], expr: str, depth: int) -> None:
            residual = vec.astype(np.float64, copy=True)
            for _ in range(2):
                for q in basis:
                    residual -= (residual @ q) * q
            norm = float(np.linalg.norm(residual))
            if norm <= 1e-10 * float(np.linalg.norm(vec)):
                return
            basis.append(residual / norm)
            peak = float(np.max(np.abs(residual)))
            queue.append((residual / peak, f"orth[{expr}]", depth))

        for vec, expr, depth in self.constants:
            consider(vec, expr, depth)
        head = 0
        while head < len(queue):
            vec, expr, d0 = queue[head]
            head += 1
            s = PolyVectorField(
                self.n, {(j, (0,) * self.n): vec[j] for j in range(self.n)}
            )
            for i in range(1, max_m - d0 + 1):
                try:
                    s = lie_bracket(s, self.drift)
                except TermExplosionError as exc:
                    raise TermExplosionError(
                        f"{exc} (at depth {d0 + i})"
                    ) from exc
                expr = f"[{expr}, F]"
                s = _budget_filter(s, max_m - d0 - i)
                if s.is_zero():
                    break
                self.depth = max(self.depth, d0 + i)
                reduced = self._reduce(s, expr)
                if reduced is None:
                    continue
                self.constants.append((reduced[0], reduced[1], d0 + i))
                consider(reduced[0], reduced[1], d0 + i)

    def constant_rank(
        self, n_target: int, tol: float, max_depth: int | None = None
    ) -> tuple[int, float, list[int]]:
        """Rank of the constants restricted to coordinates ``0..n_target``.

        Rows are balanced to unit peak magnitude before the singular
        value test so that widely scaled bracket coefficients cannot mask
        an independent direction.  Returns (rank, smallest counted
        singular value, witness indices into ``constants`` chosen by
        pivoted QR).  Only constants from depth ``<= max_depth`` are
        considered when a cutoff is given.
        """
        chosen = [
            i
            for i, (_, _, depth) in enumerate(self.constants)
            if max_depth is None or depth <= max_depth
        ]
        if not chosen:
            return 0, 0.0, []
        rows = np.stack([self.constants[i][0] for i in chosen])
        restricted = rows[:, : n_target + 1]
        scale = np.max(np.abs(restricted), axis=1, keepdims=True)
        scale[scale == 0.0] = 1.0
        balanced = restricted / scale
        svals = scipy.linalg.svdvals(balanced)
        if svals.size == 0 or svals[0] == 0.0:
            return 0, 0.0, []
        rank = int(np.sum(svals > tol * svals[0]))
        if rank == 0:
            return 0, 0.0, []
        _, _, piv = scipy.linalg.qr(balanced.T, pivoting=True, mode="economic")
        return rank, float(svals[rank - 1]), [chosen[int(p)] for p in piv[:rank]]


def generate_admissible(
    params: ShellParams, n_trunc: int, m: int
) -> list[AdmissibleField]:
    """Deduplicated generating family of the admissible set at depth ``m``.

    Starts from ``e_0`` and at each level brackets the previous level's
    new members with ``e_0`` and with the drift; members whose
    coefficient vectors already lie in the span of earlier ones are
    dropped (bracketing is linear in the field argument, so this loses
    no directions).  Each member carries its bracket expression string.

    Raises
    ------
    ParameterError
        If ``m`` exceeds the depth cap (64).
    TermExplosionError
        If a bracket exceeds the monomial budget (reports the depth).
    """
    if not isinstance(m, (int, np.integer)) or not 0 <= m <= MAX_DEPTH:
        raise ParameterError(
            f"m: must be an integer in [0, {MAX_DEPTH}] (got {m!r})"
        )
    builder = _FamilyBuilder(params, n_trunc)
    for _ in range(int(m)):
        builder.advance()
    return list(builder.entries)


def verify_span(
    params: ShellParams,
    N_target: int,
    max_m: int | None = None,
    tol: float = 1e-9,
) -> BracketCertificate:
    """Search for constant bracket directions spanning shells ``0..N_target``.

    Grows the admissible family breadth-first for the first few depth
    levels, then deepens with drift-bracket chains launched from every
    constant direction found (the moves stay within the admissible set:
    each step brackets an existing member with ``e_0`` or the drift).
    Every member contributes the constant reduction obtained by
    repeatedly bracketing it with ``e_0`` until degree 0.  The
    certificate passes at the smallest depth ``m`` whose constants,
    restricted to coordinates ``0..N_target``, reach numerical rank
    ``N_target + 1`` (singular values above ``tol`` times the largest).
    If the depth budget ``max_m`` (default ``2^{N_target} + 2 N_target +
    4``) is exhausted a failed partial certificate is returned.

    Raises
    ------
    ParameterError
        If ``N_target`` exceeds the truncation ``params.n_shells - 1``.
    """
    n_trunc = params.top_shell
    if not isinstance(N_target, (int, np.integer)) or not 0 <= N_target <= n_trunc:
        raise ParameterError(
            f"N_target: must be an integer in [0, {n_trunc}] (got {N_target!r})"
        )
    N_target = int(N_target)
    if max_m is None:
        max_m = 2**N_target + 2 * N_target + 4
    if not isinstance(max_m, (int, np.integer)) or max_m < 0:
        raise ParameterError(f"max_m: must be an integer >= 0 (got {max_m!r})")
    if not (isinstance(tol, (int, float, np.floating)) and 0.0 < tol < 1.0):
        raise ParameterError(f"tol: must lie in (0, 1) (got {tol!r})")
    max_m = int(max_m)
    tol = float(tol)

    builder = _FamilyBuilder(params, n_trunc, depth_budget=max_m)
    target_rank = N_target + 1

    def certificate() -> BracketCertificate:
        rank, _, _ = builder.constant_rank(N_target, tol)
        if rank >= target_rank:
            # Report the smallest depth at which the rank is realized.
            depths = sorted({d for _, _, d in builder.constants})
            for d in depths:
                rank_d, min_sv, pivots = builder.constant_rank(
                    N_target, tol, max_depth=d
                )
                if rank_d >= target_rank:
                    witness = tuple(builder.constants[p][1] for p in pivots)
                    return BracketCertificate(
                        N=N_target, m=d, achieved_rank=rank_d,
                        min_singular_value=min_sv, witness=witness,
                        passed=True,
                    )
        rank, min_sv, pivots = builder.constant_rank(N_target, tol)
        witness = tuple(builder.constants[p][1] for p in pivots)
        return BracketCertificate(
            N=N_target, m=builder.depth, achieved_rank=rank,
            min_singular_value=min_sv, witness=witness, passed=False,
        )

    cert = certificate()
    while not cert.passed and builder.depth < min(max_m, BREADTH_FIRST_DEPTH):
        builder.advance()
        cert = certificate()
    if not cert.passed and builder.depth < max_m:
        builder.extend_by_chains(max_m)
        cert = certificate()
    return cert
