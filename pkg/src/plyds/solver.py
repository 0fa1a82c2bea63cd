"""Conic subproblem normal form and interchangeable solver backends.

Every optimization step in the learner reduces to the same shape of problem:

    minimize    sum quad[i,j] x_i x_j + sum lin[i] x_i + const
                + sum l1_weights[i] |x_i|
    subject to  affine equalities over scalars and matrix entries,
                designated scalars nonnegative,
                designated scalar groups in second-order cones,
                symmetric matrix variables positive or negative semidefinite.

Any routine that solves this to ~1e-8 feasibility qualifies as a backend. Two
are provided: a cvxpy-based backend (interior point, the fast default) and a
self-contained first-order augmented-Lagrangian backend written on plain
numpy, so the toolkit works without any external solver.

The l1 term is removed up front by variable splitting (x = x+ - x-, both
nonnegative), so both backends only ever see smooth conic problems.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InputError, SolverError

PSD = "psd"
NSD = "nsd"

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class MatrixVarSpec:
    name: str
    size: int
    cone: str  # PSD or NSD


@dataclass
class LinearRow:
    """One affine equality: sum of coeffs times variables equals rhs.

    Keys are ('x', i) for scalar i or ('M', mat_index, r, c) with r <= c for a
    symmetric matrix entry.
    """

    coeffs: dict
    rhs: float
    label: str = ""


@dataclass
class ConicProblem:
    n_scalars: int = 0
    matrices: list = field(default_factory=list)
    equalities: list = field(default_factory=list)
    nonneg: set = field(default_factory=set)
    soc_groups: list = field(default_factory=list)  # (t_index, tuple(v_indices))
    quad: dict = field(default_factory=dict)  # (i, j) i<=j -> coeff of x_i x_j
    lin: dict = field(default_factory=dict)
    const: float = 0.0
    l1_weights: dict = field(default_factory=dict)

    # -- construction -------------------------------------------------------

    def add_scalar(self, nonneg: bool = False) -> int:
        idx = self.n_scalars
        self.n_scalars += 1
        if nonneg:
            self.nonneg.add(idx)
        return idx

    def add_scalars(self, count: int, nonneg: bool = False) -> list[int]:
        return [self.add_scalar(nonneg) for _ in range(count)]

    def add_matrix(self, name: str, size: int, cone: str) -> int:
        if cone not in (PSD, NSD):
            raise InputError(f"unknown cone {cone!r}")
        self.matrices.append(MatrixVarSpec(name, size, cone))
        return len(self.matrices) - 1

    def add_equality(self, coeffs: dict, rhs: float, label: str = "") -> None:
        self.equalities.append(LinearRow(dict(coeffs), float(rhs), label))

    def add_soc(self, t_index: int, v_indices) -> None:
        self.soc_groups.append((t_index, tuple(v_indices)))

    def add_lin(self, idx: int, coeff: float) -> None:
        if coeff != 0.0:
            self.lin[idx] = self.lin.get(idx, 0.0) + coeff

    def add_quad(self, i: int, j: int, coeff: float) -> None:
        if coeff == 0.0:
            return
        key = (i, j) if i <= j else (j, i)
        self.quad[key] = self.quad.get(key, 0.0) + coeff

    def add_quad_form(self, indices, matrix, factor: float = 1.0) -> None:
        """Add factor * u^T matrix u where u is the given scalar subvector."""
        matrix = np.asarray(matrix, dtype=float)
        for a, ia in enumerate(indices):
            for b, ib in enumerate(indices):
                self.add_quad(ia, ib, factor * matrix[a, b])

    def add_l1(self, idx: int, weight: float) -> None:
        if weight < 0:
            raise InputError("l1 weight must be nonnegative")
        if weight > 0:
            self.l1_weights[idx] = self.l1_weights.get(idx, 0.0) + weight

    # -- evaluation ---------------------------------------------------------

    def objective_value(self, scalars) -> float:
        x = np.asarray(scalars, dtype=float)
        total = self.const
        for (i, j), c in self.quad.items():
            total += c * x[i] * x[j]
        for i, c in self.lin.items():
            total += c * x[i]
        for i, w in self.l1_weights.items():
            total += w * abs(x[i])
        return float(total)

    def hessian(self) -> np.ndarray:
        """Dense H with objective quadratic part equal to 0.5 x^T H x."""
        H = np.zeros((self.n_scalars, self.n_scalars))
        for (i, j), c in self.quad.items():
            if i == j:
                H[i, i] += 2.0 * c
            else:
                H[i, j] += c
                H[j, i] += c
        return H

    def lin_vector(self) -> np.ndarray:
        c = np.zeros(self.n_scalars)
        for i, v in self.lin.items():
            c[i] = v
        return c


@dataclass
class ConicSolution:
    status: str
    objective: float
    scalars: np.ndarray
    matrices: list
    eq_residual: float
    backend: str
    iterations: int = 0

    def matrix(self, index: int) -> np.ndarray:
        return self.matrices[index]


# ---------------------------------------------------------------------------
# l1 splitting
# ---------------------------------------------------------------------------

def _split_l1(problem: ConicProblem):
    """Rewrite weighted-l1 scalars as differences of nonnegative pairs.

    Returns the smooth problem plus a map recovering the original scalar
    vector from the split one.
    """
    if not problem.l1_weights:
        return problem, lambda x: x

    split_vars = sorted(problem.l1_weights)
    for t, group in problem.soc_groups:
        touched = set(group) | {t}
        if touched & set(split_vars):
            raise InputError("l1 splitting does not support SOC over l1 variables")

    out = ConicProblem()
    out.matrices = list(problem.matrices)
    out.const = problem.const

    # Original scalar i maps either to itself or to a (plus, minus) pair.
    plain: dict[int, int] = {}
    pairs: dict[int, tuple[int, int]] = {}
    for i in range(problem.n_scalars):
        if i in problem.l1_weights:
            pairs[i] = (out.add_scalar(nonneg=True), out.add_scalar(nonneg=True))
        else:
            plain[i] = out.add_scalar(nonneg=(i in problem.nonneg))

    def expand(i: int) -> list[tuple[int, float]]:
        if i in plain:
            return [(plain[i], 1.0)]
        p, m = pairs[i]
        return [(p, 1.0), (m, -1.0)]

    for row in problem.equalities:
        coeffs: dict = {}
        for key, c in row.coeffs.items():
            if key[0] == "x":
                for idx, sgn in expand(key[1]):
                    k = ("x", idx)
                    coeffs[k] = coeffs.get(k, 0.0) + sgn * c
            else:
                coeffs[key] = coeffs.get(key, 0.0) + c
        out.add_equality(coeffs, row.rhs, row.label)

    for t, group in problem.soc_groups:
        out.add_soc(plain[t], [plain[g] for g in group])

    for i, c in problem.lin.items():
        for idx, sgn in expand(i):
            out.add_lin(idx, sgn * c)
    for (i, j), c in problem.quad.items():
        for ii, si in expand(i):
            for jj, sj in expand(j):
                out.add_quad(ii, jj, si * sj * c)
    for i, w in problem.l1_weights.items():
        p, m = pairs[i]
        out.add_lin(p, w)
        out.add_lin(m, w)

    def recover(split_x: np.ndarray) -> np.ndarray:
        x = np.zeros(problem.n_scalars)
        for i in range(problem.n_scalars):
            if i in plain:
                x[i] = split_x[plain[i]]
            else:
                p, m = pairs[i]
                x[i] = split_x[p] - split_x[m]
        return x

    return out, recover


# ---------------------------------------------------------------------------
# cvxpy backend
# ---------------------------------------------------------------------------

def _solve_cvxpy(problem: ConicProblem, eps: float, max_iters: int,
                 verbose: bool) -> ConicSolution:
    import cvxpy as cp

    x = cp.Variable(problem.n_scalars) if problem.n_scalars else None
    mats = [cp.Variable((m.size, m.size), symmetric=True) for m in problem.matrices]

    constraints = []
    nonneg = sorted(problem.nonneg)
    if nonneg:
        constraints.append(x[nonneg] >= 0)
    for var, spec in zip(mats, problem.matrices):
        constraints.append(var >> 0 if spec.cone == PSD else var << 0)
    for t, group in problem.soc_groups:
        constraints.append(cp.SOC(x[t], x[list(group)]))
    for row in problem.equalities:
        expr = 0
        for key, c in row.coeffs.items():
            if key[0] == "x":
                expr = expr + c * x[key[1]]
            else:
                _, mi, r, cidx = key
                expr = expr + c * mats[mi][r, cidx]
        constraints.append(expr == row.rhs)

    objective = cp.Constant(problem.const)
    if problem.n_scalars:
        H = problem.hessian()
        if np.any(H):
            eigvals, eigvecs = np.linalg.eigh(H)
            eigvals = np.clip(eigvals, 0.0, None)
            factor = np.sqrt(eigvals)[:, None] * eigvecs.T
            objective = objective + 0.5 * cp.sum_squares(factor @ x)
        cvec = problem.lin_vector()
        if np.any(cvec):
            objective = objective + cvec @ x

    prob = cp.Problem(cp.Minimize(objective), constraints)
    # AlmostSolved interior-point results are accepted: the callers repair and
    # independently re-verify everything they consume, so tight-but-inexact
    # iterates are more useful than a slow fallback cascade.
    attempts = [
        (cp.CLARABEL, dict(tol_feas=min(eps, 1e-9), tol_gap_abs=min(eps, 1e-9),
                           tol_gap_rel=1e-9, max_iter=max(200, min(max_iters, 50000)))),
        (cp.CLARABEL, dict()),
        (cp.SCS, dict(eps_abs=max(eps, 1e-9), eps_rel=max(eps, 1e-9),
                      max_iters=min(max_iters, 25000))),
    ]
    status = None
    for solver_choice, settings in attempts:
        try:
            with warnings.catch_warnings():
                # inaccurate solutions are expected occasionally; callers
                # repair and re-verify everything they consume
                warnings.simplefilter("ignore")
                prob.solve(solver=solver_choice, verbose=verbose, **settings)
        except cp.error.SolverError:
            continue
        status = prob.status
        if status in ("optimal", "optimal_inaccurate", "infeasible"):
            break
    if status is None:
        raise SolverError("all cvxpy solver attempts failed")

    if status in ("infeasible", "infeasible_inaccurate"):
        raise InfeasibleError("conic subproblem infeasible",
                              rows=[r.label for r in problem.equalities if r.label])
    if status not in ("optimal", "optimal_inaccurate"):
        raise SolverError(f"cvxpy backend returned status {status}")

    scalars = np.asarray(x.value).reshape(-1) if problem.n_scalars else np.zeros(0)
    matrices = []
    for var in mats:
        val = np.asarray(var.value, dtype=float)
        matrices.append(0.5 * (val + val.T))
    residual = _equality_residual(problem, scalars, matrices)
    return ConicSolution(status="optimal", objective=problem.objective_value(scalars),
                         scalars=scalars, matrices=matrices, eq_residual=residual,
                         backend="cvxpy", iterations=int(prob.solver_stats.num_iters or 0))


def _equality_residual(problem: ConicProblem, scalars, matrices) -> float:
    worst = 0.0
    for row in problem.equalities:
        total = -row.rhs
        for key, c in row.coeffs.items():
            if key[0] == "x":
                total += c * scalars[key[1]]
            else:
                _, mi, r, cidx = key
                total += c * matrices[mi][r, cidx]
        worst = max(worst, abs(total))
    return worst


# ---------------------------------------------------------------------------
# Reference first-order augmented-Lagrangian backend
# ---------------------------------------------------------------------------

class _Flattening:
    """Index map between problem variables and one flat vector.

    Matrix blocks are stored in scaled upper-triangular (svec) coordinates so
    the flat Euclidean norm agrees with the Frobenius norm and semidefinite
    projection reduces to an eigenvalue clamp.
    """

    def __init__(self, problem: ConicProblem):
        self.problem = problem
        self.ns = problem.n_scalars
        self.offsets = []
        dim = self.ns
        for spec in problem.matrices:
            self.offsets.append(dim)
            dim += spec.size * (spec.size + 1) // 2
        self.dim = dim
        self._tri = [np.triu_indices(spec.size) for spec in problem.matrices]

    def flat_index(self, key) -> tuple[int, float]:
        """Flat position and coefficient scale for a variable key."""
        if key[0] == "x":
            return key[1], 1.0
        _, mi, r, c = key
        size = self.problem.matrices[mi].size
        # row-major upper-triangular offset of (r, c)
        pos = r * size - r * (r - 1) // 2 + (c - r)
        return self.offsets[mi] + pos, (1.0 if r == c else 1.0 / _SQRT2)

    def unpack_matrix(self, z: np.ndarray, mi: int) -> np.ndarray:
        spec = self.problem.matrices[mi]
        rows, cols = self._tri[mi]
        vec = z[self.offsets[mi]:self.offsets[mi] + rows.size].copy()
        off = rows != cols
        vec[off] /= _SQRT2
        mat = np.zeros((spec.size, spec.size))
        mat[rows, cols] = vec
        mat[cols, rows] = vec
        return mat

    def pack_matrix(self, z: np.ndarray, mi: int, mat: np.ndarray) -> None:
        rows, cols = self._tri[mi]
        vec = mat[rows, cols].copy()
        off = rows != cols
        vec[off] *= _SQRT2
        z[self.offsets[mi]:self.offsets[mi] + rows.size] = vec


def _project_cones(z: np.ndarray, flat: _Flattening) -> np.ndarray:
    problem = flat.problem
    w = z.copy()
    for i in problem.nonneg:
        if w[i] < 0.0:
            w[i] = 0.0
    for t, group in problem.soc_groups:
        v = w[list(group)]
        nv = float(np.linalg.norm(v))
        tval = w[t]
        if nv <= tval:
            pass
        elif nv <= -tval:
            w[t] = 0.0
            w[list(group)] = 0.0
        else:
            alpha = 0.5 * (tval + nv)
            w[t] = alpha
            w[list(group)] = alpha * v / nv if nv > 0 else 0.0
    for mi, spec in enumerate(problem.matrices):
        mat = flat.unpack_matrix(w, mi)
        vals, vecs = np.linalg.eigh(mat)
        clipped = np.clip(vals, 0.0, None) if spec.cone == PSD else np.clip(vals, None, 0.0)
        if not np.array_equal(clipped, vals):
            mat = (vecs * clipped) @ vecs.T
        flat.pack_matrix(w, mi, mat)
    return w


def _solve_reference(problem: ConicProblem, eps: float, max_iters: int,
                     verbose: bool) -> ConicSolution:
    """Method of multipliers with cone splitting (ADMM form).

    Alternates an exact quadratic solve for the smooth part, a Euclidean
    projection onto the cone constraints, and dual ascent on both the
    equality and splitting multipliers, with residual-balanced penalty
    adaptation.
    """
    flat = _Flattening(problem)
    dim = flat.dim

    rows = problem.equalities
    A = np.zeros((len(rows), dim))
    b = np.zeros(len(rows))
    for ri, row in enumerate(rows):
        b[ri] = row.rhs
        for key, c in row.coeffs.items():
            pos, scale = flat.flat_index(key)
            A[ri, pos] += c * scale

    H = np.zeros((dim, dim))
    if problem.n_scalars:
        H[:flat.ns, :flat.ns] = problem.hessian()
    c_full = np.zeros(dim)
    c_full[:flat.ns] = problem.lin_vector()

    scale = max(1.0, float(np.abs(b).max()) if b.size else 1.0,
                float(np.abs(c_full).max()) if dim else 1.0)
    rho = 1.0
    sigma = 1.0

    def factorize():
        K = H + rho * (A.T @ A) + sigma * np.eye(dim)
        return np.linalg.cholesky(K)

    chol = factorize()
    z = np.zeros(dim)
    w = np.zeros(dim)
    u = np.zeros(len(rows))  # scaled duals for Az = b
    v = np.zeros(dim)        # scaled duals for z = w

    def cho_solve(L, rhs):
        return np.linalg.solve(L.T, np.linalg.solve(L, rhs))

    r_eq = r_split = r_dual = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        rhs = -c_full + rho * (A.T @ (b - u)) + sigma * (w - v)
        z = cho_solve(chol, rhs)
        w_prev = w
        w = _project_cones(z + v, flat)
        eq_gap = A @ z - b
        u += eq_gap
        v += z - w

        if it % 25 == 0 or it == max_iters:
            r_eq = float(np.abs(eq_gap).max()) if eq_gap.size else 0.0
            r_split = float(np.abs(z - w).max())
            r_dual = sigma * float(np.abs(w - w_prev).max())
            if max(r_eq, r_split) <= eps * scale and r_dual <= 10 * eps * scale:
                break
            if it % 500 == 0:
                primal = max(r_eq, r_split)
                if primal > 10 * r_dual and rho < 1e6:
                    rho *= 5.0
                    sigma *= 5.0
                    u /= 5.0
                    v /= 5.0
                    chol = factorize()
                elif r_dual > 10 * primal and rho > 1e-4:
                    rho /= 5.0
                    sigma /= 5.0
                    u *= 5.0
                    v *= 5.0
                    chol = factorize()

    converged = max(r_eq, r_split) <= eps * scale

    # Polish: least-norm shift of the cone-feasible iterate onto the equality
    # set; the cone violation this introduces is bounded by the shift size.
    sol = w.copy()
    if rows:
        gap = A @ sol - b
        shift = np.linalg.lstsq(A, gap, rcond=None)[0]
        sol = sol - shift

    scalars = sol[:flat.ns].copy()
    matrices = [flat.unpack_matrix(sol, mi) for mi in range(len(problem.matrices))]
    residual = _equality_residual(problem, scalars, matrices)
    status = "optimal" if converged else "inaccurate"
    if not converged and verbose:
        print(f"reference solver stopped at it={it} r_eq={r_eq:.2e} "
              f"r_split={r_split:.2e} r_dual={r_dual:.2e}")
    return ConicSolution(status=status, objective=problem.objective_value(scalars),
                         scalars=scalars, matrices=matrices, eq_residual=residual,
                         backend="reference", iterations=it)


# ---------------------------------------------------------------------------
# Front door
# ---------------------------------------------------------------------------

def available_backends() -> list[str]:
    backends = ["reference"]
    try:
        import cvxpy  # noqa: F401
        backends.insert(0, "cvxpy")
    except ImportError:
        pass
    return backends


def solve(problem: ConicProblem, backend: str = "auto", eps: float = 1e-9,
          max_iters: int = 200_000, verbose: bool = False) -> ConicSolution:
    """Solve a conic problem with the chosen backend.

    Raises InfeasibleError when the problem is provably infeasible and
    SolverError when the backend cannot reach the requested accuracy.
    """
    if backend == "auto":
        backend = available_backends()[0]
    smooth, recover = _split_l1(problem)
    if backend == "cvxpy":
        sol = _solve_cvxpy(smooth, eps=eps, max_iters=max_iters, verbose=verbose)
    elif backend == "reference":
        sol = _solve_reference(smooth, eps=eps, max_iters=max_iters, verbose=verbose)
    else:
        raise InputError(f"unknown solver backend {backend!r}")
    scalars = recover(sol.scalars)
    return ConicSolution(status=sol.status,
                         objective=problem.objective_value(scalars),
                         scalars=scalars, matrices=sol.matrices,
                         eq_residual=sol.eq_residual, backend=backend,
                         iterations=sol.iterations)
