"""Joint policy/Lyapunov learning: regularized imitation MSE under
sum-of-squares stability constraints.

The bilinear coupling between policy and potential coefficients is handled by
alternating two convex semidefinite subproblems (fit the policy for a fixed
potential, then re-optimize the potential's decrease margin for the fixed
policy) followed by an optional SQP polish that perturbs both jointly through
successive linearizations inside a trust region. Every returned model is
re-certified independently of the solver's claims; a non-certifying candidate
is never returned.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import DemonstrationSet, preprocess
from .errors import InfeasibleError, InputError, LearningError
from .lyapunov import (
    EPS_PD_DEFAULT,
    LyapunovModel,
    MatchingSystem,
    N_AUDIT_DEFAULT,
    SCALAR,
    StabilityCertificate,
    VECTOR,
    build_matching_system,
    certify,
)
from .policy import PolicyModel
from .poly import BASIS_MODES, BasisSpec, ELEMENTWISE, GramPolynomial, basis_matrix, upper_pairs
from .solver import NSD, PSD, ConicProblem, solve


@dataclass(frozen=True)
class LearnConfig:
    """Hyperparameters of one learning run.

    ``tolerance`` is the stability/accuracy knob: it sets both the decrease
    margin required of the certificate and the stopping threshold of the
    alternation.
    """

    alpha: int = 3
    beta: int = 1
    l1: float = 1e-4
    l2: float = 1e-4
    tolerance: float = 1e-6
    max_alternations: int = 8
    basis_mode: str = ELEMENTWISE
    lpf_mode: str = VECTOR
    seed: int = 0
    sqp_iters: int = 2
    solver_backend: str = "auto"
    eps_pd: float = EPS_PD_DEFAULT
    n_audit: int = N_AUDIT_DEFAULT

    def __post_init__(self):
        if self.alpha < 1 or self.beta < 1:
            raise InputError(f"degrees must be >= 1, got alpha={self.alpha}, beta={self.beta}")
        if self.l1 < 0 or self.l2 < 0:
            raise InputError("regularization weights must be nonnegative")
        if not self.tolerance > 0:
            raise InputError(f"tolerance must be positive, got {self.tolerance}")
        if self.basis_mode not in BASIS_MODES:
            raise InputError(f"unknown basis mode {self.basis_mode!r}")
        if self.lpf_mode not in (VECTOR, SCALAR):
            raise InputError(f"unknown lpf mode {self.lpf_mode!r}")
        if self.max_alternations < 1:
            raise InputError("max_alternations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta, "l1": self.l1, "l2": self.l2,
            "tolerance": self.tolerance, "max_alternations": self.max_alternations,
            "basis_mode": self.basis_mode, "lpf_mode": self.lpf_mode,
            "seed": self.seed, "sqp_iters": self.sqp_iters,
            "solver_backend": self.solver_backend, "eps_pd": self.eps_pd,
            "n_audit": self.n_audit,
        }


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyObjective:
    """The imitation cost as an explicit quadratic over policy coefficients.

    For each component the data term is 0.5/N_t ||design @ u - y||^2 where u
    is the row-major upper-triangular coefficient vector; the elastic net
    weighs every entry by its multiplicity in the full symmetric matrix.
    """

    spec: BasisSpec
    design: np.ndarray
    targets: np.ndarray
    hessian: np.ndarray
    linear: np.ndarray
    const: float
    l1: float
    l2: float
    multiplicities: np.ndarray

    @property
    def n_coeffs(self) -> int:
        return self.design.shape[1]

    def data_term(self, policy_uppers) -> float:
        total = 0.0
        n_t = self.design.shape[0]
        for i, u in enumerate(policy_uppers):
            resid = self.design @ np.asarray(u) - self.targets[:, i]
            total += 0.5 * float(resid @ resid) / n_t
        return total

    def regularizer(self, policy_uppers) -> float:
        total = 0.0
        for u in policy_uppers:
            u = np.asarray(u)
            total += self.l1 * float(self.multiplicities @ np.abs(u))
            total += self.l2 * float(self.multiplicities @ u ** 2)
        return total

    def value(self, policy_uppers) -> float:
        return self.data_term(policy_uppers) + self.regularizer(policy_uppers)


def assemble_objective(dataset: DemonstrationSet, alpha: int, l1: float, l2: float,
                       basis_mode: str = ELEMENTWISE) -> PolicyObjective:
    """Build the quadratic imitation objective from a target-centred dataset."""
    if dataset.n_demos == 0 or dataset.n_samples == 0:
        raise InputError("empty dataset")
    if np.linalg.norm(dataset.target) > 1e-9:
        raise InputError("dataset must be target-shifted to the origin; run preprocess")
    X, Y = dataset.stacked()
    spec = BasisSpec(dataset.n, alpha, include_constant=True, mode=basis_mode)
    base = basis_matrix(X, spec)
    pairs = list(upper_pairs(len(spec)))
    design = np.empty((X.shape[0], len(pairs)))
    mults = np.empty(len(pairs))
    for idx, ((a, b), mult) in enumerate(pairs):
        design[:, idx] = mult * base[:, a] * base[:, b]
        mults[idx] = mult
    n_t = X.shape[0]
    hessian = design.T @ design / n_t
    linear = -(design.T @ Y).T / n_t
    const = 0.5 * float(np.sum(Y ** 2)) / n_t
    return PolicyObjective(spec=spec, design=design, targets=Y, hessian=hessian,
                           linear=linear, const=const, l1=l1, l2=l2,
                           multiplicities=mults)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _pair_coords(size: int) -> list[tuple[int, int]]:
    return [pair for pair, _ in upper_pairs(size)]


def _live_gram_layout(system: MatchingSystem):
    """Indices of the derivative basis that survive the structural-zero
    cascade, plus their positions in the reduced Gram variable."""
    dead = set(system.dead_derivative_indices)
    live = [k for k in range(len(system.derivative_spec)) if k not in dead]
    return dead, live, {k: i for i, k in enumerate(live)}


def _embed_gram(solution_block: np.ndarray, live, size: int) -> np.ndarray:
    full = np.zeros((size, size))
    full[np.ix_(live, live)] = solution_block
    return full


def _repair_decrease_block(system: MatchingSystem, policy_uppers, lpf_upper,
                           eps: float, gram: np.ndarray) -> np.ndarray:
    """Make a solver-returned derivative block exact: project its entries onto
    the matching equalities (minimum-norm, row by row; the rows partition the
    upper triangle), then clamp the spectrum to be negative semidefinite."""
    G = 0.5 * (gram + gram.T)
    coords = _pair_coords(G.shape[0])
    for row in system.rows:
        if row.gram_pairs is None:
            continue
        value = system.bilinear_value(row, policy_uppers, lpf_upper) + eps * row.eps_weight
        current = sum(mult * G[coords[idx]] for idx, mult in row.gram_pairs)
        diff = value - current
        if diff == 0.0:
            continue
        denom = sum(mult * mult for _, mult in row.gram_pairs)
        for idx, mult in row.gram_pairs:
            r, c = coords[idx]
            G[r, c] += diff * mult / denom
            if r != c:
                G[c, r] = G[r, c]
    return _force_nsd(G)


def _force_nsd(mat: np.ndarray) -> np.ndarray:
    """Clamp the spectrum to be negative semidefinite; float dust from the
    reconstruction is shifted out so the top eigenvalue lands strictly at or
    below zero, at a matching cost far below the residual tolerance."""
    G = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(G)
    if vals[-1] > 0.0:
        G = (vecs * np.clip(vals, None, 0.0)) @ vecs.T
        G = 0.5 * (G + G.T)
    top = float(np.linalg.eigvalsh(G)[-1])
    if top > 0.0:
        G = G - (top + 1e-14 * max(1.0, float(np.abs(G).max()))) * np.eye(G.shape[0])
    return G


def _audit_box_from_dataset(dataset: DemonstrationSet, factor: float = 2.0):
    lo, hi = dataset.bounding_box()
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    half = np.maximum(half, 1e-3 * dataset.scale)
    return (tuple((center - factor * half).tolist()),
            tuple((center + factor * half).tolist()))


def _unscale_models(policy: PolicyModel, lyap: LyapunovModel,
                    decrease_blocks, eps: float, s: float):
    """Map models learned on x/s back to original coordinates.

    Each Gram block transforms by the diagonal congruence D = diag(s^-deg)
    over its basis; the potential and derivative blocks also pick up the
    common positive factor s^(2 beta), which keeps the potential's smallest
    eigenvalue at or above its normalized-frame margin. All three transforms
    preserve (semi)definiteness, and the matching identity carries over with
    decrease margin eps * s^(2 beta - 2).
    """
    def congruence(block: GramPolynomial, factor: float) -> np.ndarray:
        degs = np.array([sum(e) for e in block.spec.exponents], dtype=float)
        diag = s ** -degs
        return factor * (np.outer(diag, diag) * block.matrix)

    lift = s ** (2 * lyap.beta)
    policy_out = PolicyModel(
        n=policy.n, alpha=policy.alpha,
        blocks=tuple(GramPolynomial(b.spec, congruence(b, s)) for b in policy.blocks),
        target=policy.target, basis_mode=policy.basis_mode)
    lyap_out = LyapunovModel(
        n=lyap.n, beta=lyap.beta, mode=lyap.mode,
        blocks=tuple(GramPolynomial(b.spec, congruence(b, lift)) for b in lyap.blocks),
        target=lyap.target, basis_mode=lyap.basis_mode)
    blocks_out = tuple(GramPolynomial(b.spec, _force_nsd(congruence(b, lift)))
                       for b in decrease_blocks)
    return policy_out, lyap_out, blocks_out, eps * lift / (s * s)


@dataclass(frozen=True)
class PolicyStepResult:
    policy: PolicyModel
    decrease_blocks: tuple[GramPolynomial, ...]
    objective_value: float
    solver_status: str


@dataclass(frozen=True)
class LpfStepResult:
    lyap: LyapunovModel
    decrease_blocks: tuple[GramPolynomial, ...]
    slack: float
    solver_status: str

    def certifiable(self, eps_decrease: float) -> bool:
        return self.slack >= eps_decrease


# ---------------------------------------------------------------------------
# Convex subproblems
# ---------------------------------------------------------------------------

def solve_policy_step(dataset: DemonstrationSet, lyap: LyapunovModel,
                      config: LearnConfig, system: MatchingSystem | None = None,
                      objective: PolicyObjective | None = None) -> PolicyStepResult:
    """Fit the policy for a fixed potential: minimize the regularized MSE over
    policy blocks and derivative Gram blocks subject to coefficient matching,
    negative-semidefinite derivative blocks, and the equilibrium constraint."""
    if objective is None:
        objective = assemble_objective(dataset, config.alpha, config.l1, config.l2,
                                       config.basis_mode)
    if system is None:
        system = build_matching_system(config.alpha, config.beta, dataset.n,
                                       config.basis_mode, config.tolerance)
    n = lyap.n
    eps = system.eps_decrease
    n_coeffs = objective.n_coeffs

    problem = ConicProblem()
    coeff_idx = [problem.add_scalars(n_coeffs) for _ in range(n)]
    for i in range(n):
        problem.add_quad_form(coeff_idx[i], 0.5 * objective.hessian)
        for k, idx in enumerate(coeff_idx[i]):
            problem.add_lin(idx, objective.linear[i, k])
            if objective.l2 > 0:
                problem.add_quad(idx, idx, objective.l2 * objective.multiplicities[k])
            if objective.l1 > 0:
                problem.add_l1(idx, objective.l1 * objective.multiplicities[k])
        # zero velocity at the target: constant-squared entry vanishes
        problem.add_equality({("x", coeff_idx[i][0]): 1.0}, 0.0, label=f"equilibrium[{i}]")
    problem.const = objective.const

    deriv_size = len(system.derivative_spec)
    dead, live, live_pos = _live_gram_layout(system)
    gram_vars = [problem.add_matrix(f"decrease[{r}]", len(live), NSD)
                 for r in range(len(lyap.blocks))]
    coords = _pair_coords(deriv_size)

    for r, block in enumerate(lyap.blocks):
        lpf_upper = block.upper_vector()
        for row in system.rows:
            coeffs: dict = {}
            for (j, f_idx), c in system.policy_side_coeffs(row, lpf_upper).items():
                key = ("x", coeff_idx[j][f_idx])
                coeffs[key] = coeffs.get(key, 0.0) + c
            if row.gram_pairs is not None:
                for idx, mult in row.gram_pairs:
                    rr, cc = coords[idx]
                    if rr in dead or cc in dead:
                        continue
                    coeffs[("M", gram_vars[r], live_pos[rr], live_pos[cc])] = -mult
                label = f"match[{r}]{row.monomial}"
            else:
                label = f"residual[{r}]{row.monomial}"
            if not coeffs and row.eps_weight == 0.0:
                continue
            problem.add_equality(coeffs, -eps * row.eps_weight, label=label)

    try:
        solution = solve(problem, backend=config.solver_backend)
    except InfeasibleError as exc:
        raise InfeasibleError(
            "policy step infeasible; the residual-monomial restriction of the "
            "element-wise basis may be too strict (try basis_mode='full')",
            rows=exc.rows) from exc

    uppers = []
    for i in range(n):
        u = solution.scalars[coeff_idx[i]].copy()
        u[0] = 0.0
        uppers.append(u)
    policy = PolicyModel(
        n=n, alpha=config.alpha,
        blocks=tuple(GramPolynomial.from_upper(objective.spec, u) for u in uppers),
        target=np.zeros(n), basis_mode=config.basis_mode)

    blocks = []
    for r, block in enumerate(lyap.blocks):
        gram = _embed_gram(solution.matrices[gram_vars[r]], live, deriv_size)
        gram = _repair_decrease_block(system, uppers, block.upper_vector(), eps, gram)
        blocks.append(GramPolynomial(system.derivative_spec, gram))
    return PolicyStepResult(policy=policy, decrease_blocks=tuple(blocks),
                            objective_value=objective.value(uppers),
                            solver_status=solution.status)


def solve_lpf_step(policy: PolicyModel, config: LearnConfig,
                   system: MatchingSystem | None = None) -> LpfStepResult:
    """Re-optimize the potential for a fixed policy: maximize the decrease
    slack s such that the time derivative plus s|x|^2 matches a
    negative-semidefinite Gram form, with positive-definite potential blocks
    under a trace normalization that removes the scale ambiguity.

    A slack below the required margin signals that the policy admits no
    degree-beta certificate at that margin.
    """
    n = policy.n
    if system is None:
        system = build_matching_system(config.alpha, config.beta, n,
                                       config.basis_mode, config.tolerance)
    eps = system.eps_decrease
    n_rows = n if config.lpf_mode == VECTOR else 1
    lpf_size = len(system.lpf_spec)
    deriv_size = len(system.derivative_spec)
    lpf_coords = _pair_coords(lpf_size)
    deriv_coords = _pair_coords(deriv_size)
    policy_uppers = [b.upper_vector() for b in policy.blocks]
    # require a sliver beyond eps_pd so float round-off in the solver cannot
    # drop the certified eigenvalue below the published margin
    eps_solve = 1.25 * config.eps_pd

    dead, live, live_pos = _live_gram_layout(system)
    problem = ConicProblem()
    slack = problem.add_scalar()
    problem.add_lin(slack, -1.0)  # maximize s
    shifted_vars = [problem.add_matrix(f"lpf[{r}]", lpf_size, PSD) for r in range(n_rows)]
    gram_vars = [problem.add_matrix(f"decrease[{r}]", len(live), NSD) for r in range(n_rows)]

    trace_coeffs = {}
    trace_rhs = float(n_rows * lpf_size)
    for r in range(n_rows):
        for k in range(lpf_size):
            trace_coeffs[("M", shifted_vars[r], k, k)] = 1.0
            trace_rhs -= eps_solve
    problem.add_equality(trace_coeffs, trace_rhs, label="trace-normalization")

    for r in range(n_rows):
        for row in system.rows:
            coeffs: dict = {}
            rhs = 0.0
            # potential blocks enter as (shifted + eps_solve I)
            for v_idx, c in system.lpf_side_coeffs(row, policy_uppers).items():
                rr, cc = lpf_coords[v_idx]
                key = ("M", shifted_vars[r], rr, cc)
                coeffs[key] = coeffs.get(key, 0.0) + c
                if rr == cc:
                    rhs -= c * eps_solve
            if row.eps_weight:
                coeffs[("x", slack)] = row.eps_weight
            if row.gram_pairs is not None:
                for idx, mult in row.gram_pairs:
                    rr, cc = deriv_coords[idx]
                    if rr in dead or cc in dead:
                        continue
                    coeffs[("M", gram_vars[r], live_pos[rr], live_pos[cc])] = -mult
                label = f"match[{r}]{row.monomial}"
            else:
                label = f"residual[{r}]{row.monomial}"
            if not coeffs:
                continue
            problem.add_equality(coeffs, rhs, label=label)

    try:
        solution = solve(problem, backend=config.solver_backend)
    except InfeasibleError as exc:
        raise InfeasibleError(
            "no degree-beta certificate for this policy: the matching "
            "constraints admit no positive-definite potential", rows=exc.rows) from exc
    slack_value = float(solution.scalars[slack])

    lpf_mats = []
    for r in range(n_rows):
        mat = solution.matrices[shifted_vars[r]] + eps_solve * np.eye(lpf_size)
        lpf_mats.append(0.5 * (mat + mat.T))
    lyap = LyapunovModel.from_matrices(n, config.beta, lpf_mats, mode=config.lpf_mode,
                                       target=np.zeros(n), basis_mode=config.basis_mode)

    blocks = []
    for r in range(n_rows):
        gram = _embed_gram(solution.matrices[gram_vars[r]], live, deriv_size)
        # when the slack exceeds the required margin the repair lowers the
        # pure-square diagonal rows accordingly, which keeps the block
        # negative semidefinite; below the margin the blocks are diagnostic
        margin = eps if slack_value >= eps else slack_value
        gram = _repair_decrease_block(system, policy_uppers,
                                      lyap.blocks[r].upper_vector(), margin, gram)
        blocks.append(GramPolynomial(system.derivative_spec, gram))
    return LpfStepResult(lyap=lyap, decrease_blocks=tuple(blocks), slack=slack_value,
                         solver_status=solution.status)


# ---------------------------------------------------------------------------
# SQP polish
# ---------------------------------------------------------------------------

def _sqp_step(objective: PolicyObjective, system: MatchingSystem,
              policy: PolicyModel, lyap: LyapunovModel, config: LearnConfig,
              radius: float) -> list[np.ndarray]:
    """One linearized joint step: optimize the full new policy together with a
    potential perturbation, dropping only the second-order cross term, inside
    a Frobenius trust region on the policy move."""
    n = policy.n
    eps = system.eps_decrease
    n_coeffs = objective.n_coeffs
    lpf_size = len(system.lpf_spec)
    deriv_size = len(system.derivative_spec)
    lpf_coords = _pair_coords(lpf_size)
    deriv_coords = _pair_coords(deriv_size)
    policy_uppers = [b.upper_vector() for b in policy.blocks]
    eps_solve = 1.25 * config.eps_pd

    problem = ConicProblem()
    coeff_idx = [problem.add_scalars(n_coeffs) for _ in range(n)]
    for i in range(n):
        problem.add_quad_form(coeff_idx[i], 0.5 * objective.hessian)
        for k, idx in enumerate(coeff_idx[i]):
            problem.add_lin(idx, objective.linear[i, k])
            if objective.l2 > 0:
                problem.add_quad(idx, idx, objective.l2 * objective.multiplicities[k])
            if objective.l1 > 0:
                problem.add_l1(idx, objective.l1 * objective.multiplicities[k])
        problem.add_equality({("x", coeff_idx[i][0]): 1.0}, 0.0, label=f"equilibrium[{i}]")
    problem.const = objective.const

    # trust region ||P - P0||_F <= radius via weighted deviation scalars
    tr_top = problem.add_scalar()
    problem.add_equality({("x", tr_top): 1.0}, radius, label="trust-radius")
    deviation = []
    for i in range(n):
        for k in range(n_coeffs):
            d = problem.add_scalar()
            w = float(np.sqrt(objective.multiplicities[k]))
            problem.add_equality({("x", d): 1.0, ("x", coeff_idx[i][k]): -w},
                                 -w * policy_uppers[i][k], label="trust-dev")
            deviation.append(d)
    problem.add_soc(tr_top, deviation)

    dead, live, live_pos = _live_gram_layout(system)
    shifted_vars = [problem.add_matrix(f"lpf[{r}]", lpf_size, PSD)
                    for r in range(len(lyap.blocks))]
    gram_vars = [problem.add_matrix(f"decrease[{r}]", len(live), NSD)
                 for r in range(len(lyap.blocks))]

    trace_coeffs = {}
    trace_rhs = float(len(lyap.blocks) * lpf_size)
    for r in range(len(lyap.blocks)):
        for k in range(lpf_size):
            trace_coeffs[("M", shifted_vars[r], k, k)] = 1.0
            trace_rhs -= eps_solve
    problem.add_equality(trace_coeffs, trace_rhs, label="trace-normalization")

    for r, block in enumerate(lyap.blocks):
        lpf_upper = block.upper_vector()
        for row in system.rows:
            coeffs: dict = {}
            rhs = -eps * row.eps_weight
            # bilinear(P, Q0): exact in the new policy coefficients
            for (j, f_idx), c in system.policy_side_coeffs(row, lpf_upper).items():
                key = ("x", coeff_idx[j][f_idx])
                coeffs[key] = coeffs.get(key, 0.0) + c
            # bilinear(P0, dQ): first-order potential correction, with the
            # new potential parameterized as (shifted PSD var + eps_solve I)
            for v_idx, c in system.lpf_side_coeffs(row, policy_uppers).items():
                rr, cc = lpf_coords[v_idx]
                key = ("M", shifted_vars[r], rr, cc)
                coeffs[key] = coeffs.get(key, 0.0) + c
                rhs += c * (lpf_upper[v_idx] - (eps_solve if rr == cc else 0.0))
            if row.gram_pairs is not None:
                for idx, mult in row.gram_pairs:
                    rr, cc = deriv_coords[idx]
                    if rr in dead or cc in dead:
                        continue
                    coeffs[("M", gram_vars[r], live_pos[rr], live_pos[cc])] = -mult
                label = f"sqp-match[{r}]{row.monomial}"
            else:
                label = f"sqp-residual[{r}]{row.monomial}"
            if not coeffs:
                continue
            problem.add_equality(coeffs, rhs, label=label)

    solution = solve(problem, backend=config.solver_backend)
    uppers = []
    for i in range(n):
        u = solution.scalars[coeff_idx[i]].copy()
        u[0] = 0.0
        uppers.append(u)
    return uppers


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def learn_policy(dataset: DemonstrationSet, config: LearnConfig
                 ) -> tuple[PolicyModel, LyapunovModel, StabilityCertificate, dict]:
    """Learn a certified stable policy from demonstrations.

    Alternates the two convex subproblems from a quadratic-distance initial
    potential, optionally polishes with SQP steps, and returns the best
    certified iterate; raises LearningError when no iterate certifies.
    """
    started = time.perf_counter()
    target = dataset.target.copy()
    if np.linalg.norm(target) > 0:
        dataset = preprocess(dataset)
    original = dataset

    # Learn on x / s so basis columns stay well conditioned regardless of the
    # workspace size; the models are mapped back exactly afterwards.
    s = max(0.5 * original.scale, 1e-9)
    dataset = dataset.replace(positions=original.positions / s,
                              velocities=original.velocities / s)

    eps = config.tolerance
    system = build_matching_system(config.alpha, config.beta, dataset.n,
                                   config.basis_mode, eps)
    objective = assemble_objective(dataset, config.alpha, config.l1, config.l2,
                                   config.basis_mode)
    audit_box = _audit_box_from_dataset(dataset)
    lyap = LyapunovModel.identity(dataset.n, config.beta, mode=config.lpf_mode,
                                  basis_mode=config.basis_mode)

    best = None  # (J, policy, lyap, cert)
    history = []
    prev_value = np.inf
    alternations = 0

    for alternations in range(1, config.max_alternations + 1):
        step = solve_policy_step(dataset, lyap, config, system=system,
                                 objective=objective)
        cert = certify(step.policy, lyap, step.decrease_blocks, eps_decrease=eps,
                       eps_pd=config.eps_pd, audit_box=audit_box,
                       n_audit=config.n_audit, seed=config.seed)
        entry = {"step": "policy", "objective": step.objective_value,
                 "certified": cert.certified, "verdict": cert.verdict}
        history.append(entry)
        if cert.certified and (best is None or step.objective_value < best[0]):
            best = (step.objective_value, step.policy, lyap, cert)
        if prev_value - step.objective_value < eps:
            break
        prev_value = step.objective_value

        try:
            lpf = solve_lpf_step(step.policy, config, system=system)
        except InfeasibleError:
            history.append({"step": "lpf", "accepted": False, "reason": "infeasible"})
            break
        history.append({"step": "lpf", "slack": lpf.slack,
                        "accepted": lpf.certifiable(eps)})
        if not lpf.certifiable(eps):
            break
        lyap = lpf.lyap

    sqp_accepted = 0
    if best is not None and config.sqp_iters > 0:
        best_value, policy, lyap, cert = best
        radius = 0.1 * float(np.sqrt(sum(np.sum(b.matrix ** 2) for b in policy.blocks)))
        for _ in range(config.sqp_iters):
            if radius <= 1e-12:
                break
            try:
                uppers = _sqp_step(objective, system, policy, lyap, config, radius)
            except (InfeasibleError, LearningError):
                radius *= 0.5
                continue
            candidate_value = objective.value(uppers)
            if candidate_value >= best_value - 1e-12:
                radius *= 0.5
                history.append({"step": "sqp", "objective": candidate_value,
                                "accepted": False, "reason": "no-improvement"})
                continue
            candidate = PolicyModel(
                n=dataset.n, alpha=config.alpha,
                blocks=tuple(GramPolynomial.from_upper(objective.spec, u) for u in uppers),
                target=np.zeros(dataset.n), basis_mode=config.basis_mode)
            try:
                restore = solve_lpf_step(candidate, config, system=system)
            except InfeasibleError:
                radius *= 0.5
                history.append({"step": "sqp", "objective": candidate_value,
                                "accepted": False, "reason": "restore-infeasible"})
                continue
            if not restore.certifiable(eps):
                radius *= 0.5
                history.append({"step": "sqp", "objective": candidate_value,
                                "accepted": False, "reason": "certificate"})
                continue
            candidate_cert = certify(candidate, restore.lyap, restore.decrease_blocks,
                                     eps_decrease=eps, eps_pd=config.eps_pd,
                                     audit_box=audit_box, n_audit=config.n_audit,
                                     seed=config.seed)
            if not candidate_cert.certified:
                radius *= 0.5
                history.append({"step": "sqp", "objective": candidate_value,
                                "accepted": False, "reason": candidate_cert.verdict})
                continue
            policy, lyap, cert, best_value = candidate, restore.lyap, candidate_cert, candidate_value
            best = (best_value, policy, lyap, cert)
            sqp_accepted += 1
            history.append({"step": "sqp", "objective": candidate_value,
                            "accepted": True})

    if best is None:
        last = history[-1] if history else {}
        raise LearningError(
            "no certified iterate found "
            f"(last step: {last}); consider raising beta or switching "
            "basis_mode to 'full'")

    best_value, policy, lyap, cert = best

    # Back to original coordinates, then re-certify the transformed models
    # from scratch so the returned certificate never rests on the scaled run.
    policy, lyap, blocks, eps_out = _unscale_models(policy, lyap,
                                                    cert.decrease_blocks, eps, s)
    if np.linalg.norm(target) > 0:
        policy = replace(policy, target=target)
        lyap = replace(lyap, target=target)
    lo = np.asarray(cert.audit_box[0]) * s + target
    hi = np.asarray(cert.audit_box[1]) * s + target
    cert = certify(policy, lyap, blocks, eps_decrease=eps_out,
                   eps_pd=config.eps_pd, audit_box=(tuple(lo), tuple(hi)),
                   n_audit=config.n_audit, seed=config.seed)
    if not cert.certified:
        raise LearningError(
            f"certificate failed after rescaling to original units: {cert.verdict}")

    X, Y = original.stacked()
    residuals = policy.predict_many(X + target) - Y
    train_mse = 0.5 * float(np.sum(residuals ** 2)) / X.shape[0]
    report = {
        "objective": best_value,
        "train_mse": train_mse,
        "workspace_scale": s,
        "alternations": alternations,
        "sqp_accepted": sqp_accepted,
        "history": history,
        "seconds": time.perf_counter() - started,
        "config": config.to_dict(),
    }
    return policy, lyap, cert, report
