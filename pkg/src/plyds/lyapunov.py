"""Vector Lyapunov candidates, the coefficient-matching constraint system, and
independent certification of global asymptotic stability.

A candidate assigns one scalar potential per state dimension (or a single one
in scalar mode), each a Gram-form polynomial over the reduced basis (no
constant entry), so the potential and its time derivative both vanish at the
target by construction.

Certification checks three things, independently of whatever solver produced
the model: the potential blocks are positive definite, the time derivative of
each potential matches a negative-semidefinite Gram form over the reduced
degree-(alpha+beta) basis up to a tiny coefficient residual, and a randomized
audit confirms strict decrease away from the target.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError
from .policy import PolicyModel
from .poly import (
    BasisSpec,
    ELEMENTWISE,
    Exponent,
    GramPolynomial,
    MonomialPoly,
    basis_matrix,
    differentiate,
    expand_gram,
    gram_support,
    multiply,
    upper_pairs,
)

VECTOR = "vector"
SCALAR = "scalar"

# Positivity margin required of every potential block.
EPS_PD_DEFAULT = 1e-8
# Largest coefficient-matching violation a certificate may carry.
MATCH_TOL = 1e-8
# Absolute slack allowed when auditing the decrease margin numerically.
AUDIT_SLACK = 1e-9
N_AUDIT_DEFAULT = 1000


@dataclass(frozen=True)
class LyapunovModel:
    """A vector (or aggregated scalar) Lyapunov candidate.

    Every block is a Gram polynomial over the reduced degree-beta basis; in
    vector mode there is one block per state dimension, in scalar mode a
    single block.
    """

    n: int
    beta: int
    mode: str
    blocks: tuple[GramPolynomial, ...]
    target: np.ndarray = None
    basis_mode: str = ELEMENTWISE

    def __post_init__(self):
        if self.mode not in (VECTOR, SCALAR):
            raise InputError(f"unknown lpf mode {self.mode!r}")
        target = self.target
        if target is None:
            target = np.zeros(self.n)
        target = np.asarray(target, dtype=float).reshape(-1)
        if target.shape[0] != self.n:
            raise InputError(f"target has dimension {target.shape[0]}, expected {self.n}")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        expected = self.n if self.mode == VECTOR else 1
        if len(self.blocks) != expected:
            raise InputError(f"{self.mode} mode expects {expected} blocks, got {len(self.blocks)}")
        spec = self.basis_spec
        for i, block in enumerate(self.blocks):
            if block.spec != spec:
                raise InputError(f"block {i} uses basis {block.spec}, expected {spec}")

    @property
    def basis_spec(self) -> BasisSpec:
        return BasisSpec(self.n, self.beta, include_constant=False, mode=self.basis_mode)

    @classmethod
    def from_matrices(cls, n, beta, matrices, mode=VECTOR, target=None, basis_mode=ELEMENTWISE):
        spec = BasisSpec(n, beta, include_constant=False, mode=basis_mode)
        blocks = tuple(GramPolynomial(spec, np.asarray(m, dtype=float)) for m in matrices)
        return cls(n=n, beta=beta, mode=mode, blocks=blocks, target=target, basis_mode=basis_mode)

    @classmethod
    def identity(cls, n, beta, mode=VECTOR, target=None, basis_mode=ELEMENTWISE):
        """The quadratic-distance initial guess: identity coefficient blocks."""
        spec = BasisSpec(n, beta, include_constant=False, mode=basis_mode)
        count = n if mode == VECTOR else 1
        eye = np.eye(len(spec))
        return cls.from_matrices(n, beta, [eye] * count, mode=mode, target=target,
                                 basis_mode=basis_mode)


def lpf_value(lyap: LyapunovModel, x) -> np.ndarray:
    """Potential values at one point: length n in vector mode, 1 in scalar."""
    return lpf_value_many(lyap, np.asarray(x, dtype=float).reshape(1, -1))[0]


def lpf_value_many(lyap: LyapunovModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != lyap.n:
        raise InputError(f"expected points of shape (m, {lyap.n}), got {X.shape}")
    B = basis_matrix(X - lyap.target, lyap.basis_spec)
    out = np.empty((X.shape[0], len(lyap.blocks)))
    for i, block in enumerate(lyap.blocks):
        out[:, i] = np.einsum("mi,ij,mj->m", B, block.matrix, B)
    return out


def time_derivative_polys(lyap: LyapunovModel, policy: PolicyModel) -> list[MonomialPoly]:
    """Each potential's time derivative along the policy field, expanded
    symbolically in the shifted frame: sum_j (dv_i/dx_j) * f_j."""
    if lyap.n != policy.n:
        raise InputError(f"dimension mismatch: lpf n={lyap.n}, policy n={policy.n}")
    if not np.array_equal(lyap.target, policy.target):
        raise InputError("lpf and policy use different target frames")
    field = policy.component_polys()
    out = []
    for block in lyap.blocks:
        value = expand_gram(block)
        deriv = MonomialPoly.zero(lyap.n)
        for j in range(lyap.n):
            deriv = deriv + multiply(differentiate(value, j), field[j])
        out.append(deriv)
    return out


def lpf_time_derivative(lyap: LyapunovModel, policy: PolicyModel, x) -> np.ndarray:
    """Time-derivative values at one point, computed symbolically then
    evaluated."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != lyap.n:
        raise InputError(f"point has dimension {x.shape[0]}, expected {lyap.n}")
    shifted = x - lyap.target
    return np.array([p.evaluate(shifted) for p in time_derivative_polys(lyap, policy)])


def aggregate_lpf(lyap: LyapunovModel) -> LyapunovModel:
    """Sum the vector candidate's blocks into a single standard candidate."""
    if lyap.mode == SCALAR:
        raise InputError("candidate is already in scalar mode")
    total = np.zeros_like(lyap.blocks[0].matrix)
    for block in lyap.blocks:
        total = total + block.matrix
    return LyapunovModel.from_matrices(lyap.n, lyap.beta, [total], mode=SCALAR,
                                       target=lyap.target, basis_mode=lyap.basis_mode)


# ---------------------------------------------------------------------------
# Coefficient matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchingRow:
    """One monomial's coefficient equation.

    ``terms`` lists (component j, policy pair index, lpf pair index, weight):
    the monomial's coefficient in the potential's time derivative is the sum
    of weight * policy_block_j[pair] * lpf_block[pair] over the terms.
    ``eps_weight`` is 1.0 on the pure-square monomials x_k^2 that carry the
    decrease margin. ``gram_pairs`` lists (index, multiplicity) into the
    upper triangle of the derivative Gram block; None marks a residual
    monomial outside the derivative basis's product span, whose coefficient
    is constrained to zero instead.
    """

    monomial: Exponent
    terms: tuple[tuple[int, int, int, float], ...]
    eps_weight: float
    gram_pairs: tuple[tuple[int, float], ...] | None


@dataclass(frozen=True)
class MatchingSystem:
    """The affine constraint system tying policy, potential, and derivative
    Gram blocks together.

    The structure is identical for every potential row, so a single system
    serves all of them: instantiate it once per (alpha, beta, n, basis mode)
    and bind concrete coefficient values per block.
    """

    n: int
    alpha: int
    beta: int
    basis_mode: str
    eps_decrease: float
    rows: tuple[MatchingRow, ...]

    @cached_property
    def policy_spec(self) -> BasisSpec:
        return BasisSpec(self.n, self.alpha, include_constant=True, mode=self.basis_mode)

    @cached_property
    def lpf_spec(self) -> BasisSpec:
        return BasisSpec(self.n, self.beta, include_constant=False, mode=self.basis_mode)

    @cached_property
    def derivative_spec(self) -> BasisSpec:
        return BasisSpec(self.n, self.alpha + self.beta, include_constant=False,
                         mode=self.basis_mode)

    @property
    def residual_monomials(self) -> list[Exponent]:
        return [row.monomial for row in self.rows if row.gram_pairs is None]

    @cached_property
    def dead_derivative_indices(self) -> tuple[int, ...]:
        """Derivative-basis indices whose Gram row is structurally zero.

        A diagonal entry pinned to zero by a homogeneous row (no bilinear
        terms, no margin) forces its whole row and column to vanish on the
        negative-semidefinite cone; the set is closed under the cascade this
        triggers. Solvers shrink the Gram variables to the complement, which
        restores strict cone feasibility.
        """
        exponents = self.derivative_spec.exponents
        pairs = [pair for pair, _ in upper_pairs(len(exponents))]
        rows_by_monomial = {row.monomial: row for row in self.rows}
        dead: set[int] = set()
        changed = True
        while changed:
            changed = False
            for k, exp in enumerate(exponents):
                if k in dead:
                    continue
                row = rows_by_monomial.get(tuple(2 * e for e in exp))
                if row is None or row.terms or row.eps_weight or row.gram_pairs is None:
                    continue
                live_others = [idx for idx, _ in row.gram_pairs
                               if pairs[idx] != (k, k)
                               and pairs[idx][0] not in dead and pairs[idx][1] not in dead]
                if not live_others:
                    dead.add(k)
                    changed = True
        return tuple(sorted(dead))

    def policy_side_coeffs(self, row: MatchingRow, lpf_upper) -> dict[tuple[int, int], float]:
        """Coefficients on (policy block j, pair index) for fixed lpf values."""
        coeffs: dict[tuple[int, int], float] = {}
        for j, f_idx, v_idx, weight in row.terms:
            val = weight * lpf_upper[v_idx]
            if val != 0.0:
                key = (j, f_idx)
                coeffs[key] = coeffs.get(key, 0.0) + val
        return coeffs

    def lpf_side_coeffs(self, row: MatchingRow, policy_uppers) -> dict[int, float]:
        """Coefficients on lpf pair indices for fixed policy values."""
        coeffs: dict[int, float] = {}
        for j, f_idx, v_idx, weight in row.terms:
            val = weight * policy_uppers[j][f_idx]
            if val != 0.0:
                coeffs[v_idx] = coeffs.get(v_idx, 0.0) + val
        return coeffs

    def bilinear_value(self, row: MatchingRow, policy_uppers, lpf_upper) -> float:
        return sum(w * policy_uppers[j][f_idx] * lpf_upper[v_idx]
                   for j, f_idx, v_idx, w in row.terms)


def build_matching_system(alpha: int, beta: int, n: int, basis_mode: str = ELEMENTWISE,
                          eps_decrease: float = 0.0) -> MatchingSystem:
    """Assemble the coefficient equations matching each potential's time
    derivative, shifted by the decrease margin, against a Gram form over the
    reduced degree-(alpha+beta) basis."""
    if alpha < 1 or beta < 1:
        raise InputError(f"degrees must be >= 1, got alpha={alpha}, beta={beta}")
    policy_spec = BasisSpec(n, alpha, include_constant=True, mode=basis_mode)
    lpf_spec = BasisSpec(n, beta, include_constant=False, mode=basis_mode)
    derivative_spec = BasisSpec(n, alpha + beta, include_constant=False, mode=basis_mode)

    policy_pairs = list(upper_pairs(len(policy_spec)))
    lpf_pairs = list(upper_pairs(len(lpf_spec)))

    # Bilinear coefficient of every monomial of d/dt v = sum_j dv/dx_j * f_j,
    # with v and f_j in Gram form over their bases. The constant-squared
    # policy entry is skipped: it is pinned to zero by the equilibrium
    # constraint, so its terms contribute nothing.
    terms: dict[Exponent, list[tuple[int, int, int, float]]] = {}
    for v_idx, ((k, l), v_mult) in enumerate(lpf_pairs):
        ek, el = lpf_spec.exponents[k], lpf_spec.exponents[l]
        product = tuple(a + b for a, b in zip(ek, el))
        for j in range(n):
            power = product[j]
            if power == 0:
                continue
            grad_exp = list(product)
            grad_exp[j] = power - 1
            grad_exp = tuple(grad_exp)
            grad_coeff = v_mult * power
            for f_idx, ((a, b), f_mult) in enumerate(policy_pairs):
                if a == 0 and b == 0:
                    continue
                ea, eb = policy_spec.exponents[a], policy_spec.exponents[b]
                mono = tuple(g + x + y for g, x, y in zip(grad_exp, ea, eb))
                terms.setdefault(mono, []).append((j, f_idx, v_idx, grad_coeff * f_mult))

    support = gram_support(derivative_spec)
    pair_index = {pair: idx for idx, (pair, _) in enumerate(upper_pairs(len(derivative_spec)))}

    eps_monomials = set()
    for c in range(n):
        exp = [0] * n
        exp[c] = 2
        eps_monomials.add(tuple(exp))

    monomials = set(terms) | eps_monomials | set(support)
    rows = []
    for mono in sorted(monomials, key=lambda e: (sum(e), tuple(-v for v in e))):
        pairs = support.get(mono)
        gram_pairs = None
        if pairs is not None:
            gram_pairs = tuple((pair_index[p], 1.0 if p[0] == p[1] else 2.0) for p in pairs)
        rows.append(MatchingRow(
            monomial=mono,
            terms=tuple(terms.get(mono, ())),
            eps_weight=1.0 if mono in eps_monomials else 0.0,
            gram_pairs=gram_pairs,
        ))
    return MatchingSystem(n=n, alpha=alpha, beta=beta, basis_mode=basis_mode,
                          eps_decrease=eps_decrease, rows=tuple(rows))


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityCertificate:
    """Evidence that a (policy, potential) pair proves global asymptotic
    stability, plus the recomputed diagnostics backing the verdict."""

    decrease_blocks: tuple[GramPolynomial, ...]
    eps_decrease: float
    eps_pd: float
    matching_residual: float
    lpf_min_eigs: tuple[float, ...]
    decrease_max_eigs: tuple[float, ...]
    audit_box: tuple[tuple[float, ...], tuple[float, ...]]
    n_audit: int
    audit_positivity_passes: int
    audit_decrease_passes: int
    verdict: str

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_report(self) -> dict:
        return {
            "verdict": self.verdict,
            "lpf_min_eigenvalues": list(self.lpf_min_eigs),
            "decrease_max_eigenvalues": list(self.decrease_max_eigs),
            "matching_residual": self.matching_residual,
            "eps_decrease": self.eps_decrease,
            "eps_pd": self.eps_pd,
            "audit_box": [list(self.audit_box[0]), list(self.audit_box[1])],
            "n_audit": self.n_audit,
            "audit_positivity_passes": self.audit_positivity_passes,
            "audit_decrease_passes": self.audit_decrease_passes,
        }


def default_audit_box(n: int, halfwidth: float = 1.0):
    return (tuple([-halfwidth] * n), tuple([halfwidth] * n))


def _audit_points(box, n, n_audit, seed):
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(n_audit, n))
    keep = np.linalg.norm(X, axis=1) > 0
    return X[keep]


def certify(policy: PolicyModel, lyap: LyapunovModel,
            decrease_blocks: tuple[GramPolynomial, ...], *,
            eps_decrease: float, eps_pd: float = EPS_PD_DEFAULT,
            audit_box=None, n_audit: int = N_AUDIT_DEFAULT,
            seed: int = 0) -> StabilityCertificate:
    """Build and verify a certificate from scratch.

    The matching residual is recomputed by symbolic expansion, eigenvalue
    extremes by dense symmetric eigensolves, and the decrease property audited
    at random points, so the verdict does not rely on any solver's claims.
    """
    n = policy.n
    if lyap.n != n:
        raise InputError(f"dimension mismatch: policy n={n}, lpf n={lyap.n}")
    derivative_spec = BasisSpec(n, policy.alpha + lyap.beta, include_constant=False,
                                mode=policy.basis_mode)
    decrease_blocks = tuple(decrease_blocks)
    if len(decrease_blocks) != len(lyap.blocks):
        raise InputError(
            f"expected {len(lyap.blocks)} derivative blocks, got {len(decrease_blocks)}")
    for block in decrease_blocks:
        if block.spec != derivative_spec:
            raise InputError(
                f"derivative block basis {block.spec} does not match {derivative_spec}")
    if audit_box is None:
        audit_box = default_audit_box(n)

    # Coefficient residual: max |coeff| of vdot_i + eps*|x|^2 - b^T G_i b.
    sum_squares = MonomialPoly(n, {tuple(2 if i == c else 0 for i in range(n)): 1.0
                                   for c in range(n)})
    vdots = time_derivative_polys(lyap, policy)
    residual = 0.0
    for vdot, block in zip(vdots, decrease_blocks):
        gap = vdot + sum_squares.scaled(eps_decrease) + expand_gram(block).scaled(-1.0)
        if gap.terms:
            residual = max(residual, max(abs(c) for c in gap.terms.values()))

    lpf_min_eigs = tuple(float(np.linalg.eigvalsh(b.matrix)[0]) for b in lyap.blocks)
    decrease_max_eigs = tuple(float(np.linalg.eigvalsh(b.matrix)[-1]) for b in decrease_blocks)

    X = _audit_points(audit_box, n, n_audit, seed)
    shifted = X - lyap.target
    values = lpf_value_many(lyap, X)
    norms_sq = np.sum(shifted ** 2, axis=1)
    pos_ok = int(np.sum(np.all(values > 0.0, axis=1)))
    derivs = np.column_stack([p.evaluate_many(shifted) for p in vdots])
    bound = -eps_decrease * norms_sq + AUDIT_SLACK
    dec_ok = int(np.sum(np.all((derivs < 0.0) & (derivs <= bound[:, None]), axis=1)))

    verdict = "certified"
    if any(e < eps_pd for e in lpf_min_eigs):
        verdict = "failed(positivity)"
    elif any(e > 0.0 for e in decrease_max_eigs):
        verdict = "failed(decrease-matrix)"
    elif residual > MATCH_TOL:
        verdict = "failed(matching)"
    elif pos_ok < len(X) or dec_ok < len(X):
        verdict = "failed(audit)"

    return StabilityCertificate(
        decrease_blocks=decrease_blocks,
        eps_decrease=eps_decrease,
        eps_pd=eps_pd,
        matching_residual=residual,
        lpf_min_eigs=lpf_min_eigs,
        decrease_max_eigs=decrease_max_eigs,
        audit_box=(tuple(map(float, audit_box[0])), tuple(map(float, audit_box[1]))),
        n_audit=n_audit,
        audit_positivity_passes=pos_ok,
        audit_decrease_passes=dec_ok,
        verdict=verdict,
    )


def check_certificate(policy: PolicyModel, lyap: LyapunovModel,
                      cert: StabilityCertificate, seed: int = 1) -> StabilityCertificate:
    """Re-verify an existing certificate against its own claims, with a fresh
    audit point set."""
    return certify(policy, lyap, cert.decrease_blocks,
                   eps_decrease=cert.eps_decrease, eps_pd=cert.eps_pd,
                   audit_box=cert.audit_box, n_audit=cert.n_audit, seed=seed)
