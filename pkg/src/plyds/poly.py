"""Polynomial bases, Gram-form polynomials, and exact monomial arithmetic.

Everything downstream (Lyapunov candidates, coefficient matching, the learned
vector field) is built from two representations of a scalar polynomial:

  * Gram form  b(x)^T B b(x)  over a declared basis, with B symmetric; the
    representation the semidefinite machinery optimizes over.
  * Monomial form, a dict mapping exponent tuples to float coefficients; the
    canonical expansion used for coefficient matching and exact checks.

A basis entry is itself a monomial, stored as an exponent tuple of length n.
The default basis contains only pure coordinate powers
[1, x_1..x_n, x_1^2..x_n^2, ...]; the "full" mode contains every multivariate
monomial up to the degree.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np

from .errors import InputError

# Coefficients below this are dropped so monomial dicts stay canonical after
# cancellation.
ZERO_TOL = 1e-14

ELEMENTWISE = "elementwise"
FULL = "full"
BASIS_MODES = (ELEMENTWISE, FULL)

Exponent = tuple[int, ...]


@dataclass(frozen=True)
class BasisSpec:
    """Declaration of a polynomial basis vector.

    Ordering is constant-first (when present), then entries of total degree 1,
    then degree 2, and so on; within a degree, elementwise mode lists
    x_1^p .. x_n^p and full mode lists monomials lexicographically with x_1
    leading. This ordering fixes Gram indexing everywhere downstream.
    """

    n: int
    degree: int
    include_constant: bool = True
    mode: str = ELEMENTWISE

    def __post_init__(self):
        if self.n < 1:
            raise InputError(f"state dimension must be >= 1, got {self.n}")
        if self.degree < 1:
            raise InputError(f"basis degree must be >= 1, got {self.degree}")
        if self.mode not in BASIS_MODES:
            raise InputError(f"unknown basis mode {self.mode!r}")

    @cached_property
    def exponents(self) -> tuple[Exponent, ...]:
        """Exponent tuple of every basis entry, in basis order."""
        entries: list[Exponent] = []
        if self.include_constant:
            entries.append((0,) * self.n)
        if self.mode == ELEMENTWISE:
            for power in range(1, self.degree + 1):
                for i in range(self.n):
                    exp = [0] * self.n
                    exp[i] = power
                    entries.append(tuple(exp))
        else:
            seen: list[Exponent] = []
            for total in range(1, self.degree + 1):
                for combo in combinations_with_replacement(range(self.n), total):
                    exp = [0] * self.n
                    for idx in combo:
                        exp[idx] += 1
                    seen.append(tuple(exp))
            seen.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
            entries.extend(seen)
        return tuple(entries)

    def __len__(self) -> int:
        return len(self.exponents)

    def reduced(self) -> "BasisSpec":
        """The same basis without the constant entry."""
        return BasisSpec(self.n, self.degree, include_constant=False, mode=self.mode)


def basis_vector(x, spec: BasisSpec) -> np.ndarray:
    """Evaluate the basis at a single state point."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != spec.n:
        raise InputError(f"state has dimension {x.shape[0]}, basis expects {spec.n}")
    return basis_matrix(x[None, :], spec)[0]


def basis_matrix(X, spec: BasisSpec) -> np.ndarray:
    """Evaluate the basis at m points; returns an (m, len(spec)) array."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.n:
        raise InputError(f"expected points of shape (m, {spec.n}), got {X.shape}")
    cols = []
    for exp in spec.exponents:
        col = np.ones(X.shape[0])
        for i, p in enumerate(exp):
            if p:
                col = col * X[:, i] ** p
        cols.append(col)
    return np.column_stack(cols)


class MonomialPoly:
    """A polynomial as a mapping from exponent tuples to float coefficients.

    The mapping is canonical: coefficients with magnitude below ZERO_TOL are
    never stored, so two polys are equal iff their dicts are equal up to
    floating arithmetic.
    """

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: dict[Exponent, float] | None = None):
        self.n = n
        cleaned: dict[Exponent, float] = {}
        if terms:
            for exp, coeff in terms.items():
                if len(exp) != n:
                    raise InputError(f"exponent {exp} has wrong length for n={n}")
                if abs(coeff) > ZERO_TOL:
                    cleaned[tuple(exp)] = float(coeff)
        self.terms = cleaned

    @classmethod
    def zero(cls, n: int) -> "MonomialPoly":
        return cls(n)

    def add_term(self, exp: Exponent, coeff: float) -> None:
        """Accumulate one term in place (used only while building)."""
        new = self.terms.get(exp, 0.0) + coeff
        if abs(new) > ZERO_TOL:
            self.terms[exp] = new
        else:
            self.terms.pop(exp, None)

    def __add__(self, other: "MonomialPoly") -> "MonomialPoly":
        if other.n != self.n:
            raise InputError("cannot add polynomials over different dimensions")
        out = MonomialPoly(self.n, dict(self.terms))
        for exp, coeff in other.terms.items():
            out.add_term(exp, coeff)
        return out

    def scaled(self, factor: float) -> "MonomialPoly":
        return MonomialPoly(self.n, {e: c * factor for e, c in self.terms.items()})

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n:
            raise InputError(f"point has dimension {x.shape[0]}, expected {self.n}")
        total = 0.0
        for exp, coeff in self.terms.items():
            term = coeff
            for i, p in enumerate(exp):
                if p:
                    term *= x[i] ** p
            total += term
        return total

    def evaluate_many(self, X) -> np.ndarray:
        """Evaluate at m points; returns an (m,) array."""
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for exp, coeff in self.terms.items():
            term = np.full(X.shape[0], coeff)
            for i, p in enumerate(exp):
                if p:
                    term = term * X[:, i] ** p
            out += term
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, MonomialPoly) and self.n == other.n and self.terms == other.terms

    def __repr__(self) -> str:
        if not self.terms:
            return "MonomialPoly(0)"
        parts = []
        for exp in sorted(self.terms, key=lambda e: (sum(e), tuple(-v for v in e))):
            mono = "*".join(f"x{i + 1}^{p}" if p > 1 else f"x{i + 1}" for i, p in enumerate(exp) if p)
            parts.append(f"{self.terms[exp]:.6g}" + (f"*{mono}" if mono else ""))
        return "MonomialPoly(" + " + ".join(parts) + ")"


@dataclass(frozen=True)
class GramPolynomial:
    """A scalar polynomial b(x)^T B b(x) with B symmetric over a basis spec.

    The stored matrix is the symmetric part (B + B^T)/2 of the input, which
    leaves the quadratic form unchanged and is exact (no rounding) when the
    input is already symmetric; ``matrix == matrix.T`` holds entrywise.
    """

    spec: BasisSpec
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        size = len(self.spec)
        if mat.shape != (size, size):
            raise InputError(f"matrix shape {mat.shape} does not match basis length {size}")
        object.__setattr__(self, "matrix", 0.5 * (mat + mat.T))

    @classmethod
    def from_upper(cls, spec: BasisSpec, upper_entries) -> "GramPolynomial":
        """Build from a row-major vector of upper-triangular entries."""
        size = len(spec)
        vec = np.asarray(upper_entries, dtype=float).reshape(-1)
        if vec.shape[0] != size * (size + 1) // 2:
            raise InputError(
                f"expected {size * (size + 1) // 2} upper-triangular entries, got {vec.shape[0]}"
            )
        mat = np.zeros((size, size))
        mat[np.triu_indices(size)] = vec
        mat = mat + np.triu(mat, 1).T
        return cls(spec, mat)

    def upper_vector(self) -> np.ndarray:
        """Row-major vector of upper-triangular entries."""
        return self.matrix[np.triu_indices(len(self.spec))].copy()


def eval_gram(p: GramPolynomial, x) -> float:
    """Evaluate b(x)^T B b(x) at one point."""
    b = basis_vector(x, p.spec)
    return float(b @ p.matrix @ b)


def eval_gram_many(p: GramPolynomial, X) -> np.ndarray:
    """Evaluate the Gram form at m points; returns an (m,) array."""
    B = basis_matrix(X, p.spec)
    return np.einsum("mi,ij,mj->m", B, p.matrix, B)


def upper_pairs(size: int):
    """All (k, l) index pairs with k <= l, row-major, paired with the
    multiplicity of B[k, l] in the expanded quadratic form (2 off-diagonal,
    1 on the diagonal)."""
    for k in range(size):
        for l in range(k, size):
            yield (k, l), (1.0 if k == l else 2.0)


def monomial_of_pair(spec: BasisSpec, k: int, l: int) -> Exponent:
    """Exponent tuple of the product of basis entries k and l."""
    ek, el = spec.exponents[k], spec.exponents[l]
    return tuple(a + b for a, b in zip(ek, el))


def expand_gram(p: GramPolynomial) -> MonomialPoly:
    """Exact monomial form of the Gram polynomial."""
    out = MonomialPoly.zero(p.spec.n)
    for (k, l), mult in upper_pairs(len(p.spec)):
        coeff = mult * p.matrix[k, l]
        if coeff != 0.0:
            out.add_term(monomial_of_pair(p.spec, k, l), coeff)
    return out


def differentiate(p: MonomialPoly, axis: int) -> MonomialPoly:
    """Partial derivative with respect to coordinate ``axis`` (0-based)."""
    if not 0 <= axis < p.n:
        raise InputError(f"axis {axis} out of range for n={p.n}")
    out = MonomialPoly.zero(p.n)
    for exp, coeff in p.terms.items():
        power = exp[axis]
        if power == 0:
            continue
        new = list(exp)
        new[axis] = power - 1
        out.add_term(tuple(new), coeff * power)
    return out


def multiply(p: MonomialPoly, q: MonomialPoly) -> MonomialPoly:
    """Distributive exact product of two monomial polynomials."""
    if p.n != q.n:
        raise InputError("cannot multiply polynomials over different dimensions")
    out = MonomialPoly.zero(p.n)
    for ep, cp in p.terms.items():
        for eq, cq in q.terms.items():
            out.add_term(tuple(a + b for a, b in zip(ep, eq)), cp * cq)
    return out


def gram_support(spec: BasisSpec) -> dict[Exponent, list[tuple[int, int]]]:
    """Map each monomial reachable as a product of two basis entries to the
    complete list of unordered entry pairs (k, l), k <= l, producing it.

    Every pair appears under exactly one monomial, so the pair lists partition
    the upper triangle of a Gram matrix over this basis.
    """
    support: dict[Exponent, list[tuple[int, int]]] = {}
    for (k, l), _ in upper_pairs(len(spec)):
        support.setdefault(monomial_of_pair(spec, k, l), []).append((k, l))
    return support
