import numpy as np
import pytest

from plyds.errors import InfeasibleError
from plyds.solver import NSD, PSD, ConicProblem, available_backends, solve

BACKENDS = available_backends()


def make_equality_qp():
    """min (x0 - 1)^2 + (x1 - 2)^2  s.t.  x0 + x1 = 1."""
    p = ConicProblem()
    x0, x1 = p.add_scalars(2)
    p.add_quad(x0, x0, 1.0)
    p.add_lin(x0, -2.0)
    p.add_quad(x1, x1, 1.0)
    p.add_lin(x1, -4.0)
    p.const = 5.0
    p.add_equality({("x", x0): 1.0, ("x", x1): 1.0}, 1.0)
    return p, np.array([0.0, 1.0])


@pytest.mark.parametrize("backend", BACKENDS)
class TestBackends:
    def test_equality_qp(self, backend):
        p, expected = make_equality_qp()
        sol = solve(p, backend=backend)
        assert np.allclose(sol.scalars, expected, atol=1e-6)
        assert sol.eq_residual <= 1e-8
        assert sol.objective == pytest.approx(2.0, abs=1e-6)

    def test_nonneg_clip(self, backend):
        # min (x + 3)^2 with x >= 0  ->  x = 0
        p = ConicProblem()
        x = p.add_scalar(nonneg=True)
        p.add_quad(x, x, 1.0)
        p.add_lin(x, 6.0)
        p.const = 9.0
        sol = solve(p, backend=backend)
        assert sol.scalars[0] == pytest.approx(0.0, abs=1e-6)

    def test_l1_soft_threshold(self, backend):
        # min 0.5 (x - a)^2 + w |x|  ->  sign(a) max(|a| - w, 0)
        for a, w in ((2.0, 0.5), (-1.0, 0.3), (0.2, 0.5)):
            p = ConicProblem()
            x = p.add_scalar()
            p.add_quad(x, x, 0.5)
            p.add_lin(x, -a)
            p.const = 0.5 * a * a
            p.add_l1(x, w)
            sol = solve(p, backend=backend)
            expected = np.sign(a) * max(abs(a) - w, 0.0)
            assert sol.scalars[0] == pytest.approx(expected, abs=1e-6)

    def test_psd_projection(self, backend):
        # min ||M - C||_F^2 over M >= 0 equals the eigenvalue clamp of C.
        rng = np.random.default_rng(4)
        raw = rng.normal(size=(3, 3))
        C = 0.5 * (raw + raw.T)
        vals, vecs = np.linalg.eigh(C)
        expected = (vecs * np.clip(vals, 0, None)) @ vecs.T

        p = ConicProblem()
        m = p.add_matrix("M", 3, PSD)
        for r in range(3):
            for c in range(r, 3):
                x = p.add_scalar()
                p.add_equality({("x", x): 1.0, ("M", m, r, c): -1.0}, 0.0)
                mult = 1.0 if r == c else 2.0
                p.add_quad(x, x, mult)
                p.add_lin(x, -2.0 * mult * C[r, c])
        sol = solve(p, backend=backend)
        assert np.allclose(sol.matrices[0], expected, atol=5e-5)

    def test_nsd_pushes_diagonal_to_zero(self, backend):
        # max M[0,0] subject to M <= 0  ->  0
        p = ConicProblem()
        m = p.add_matrix("G", 2, NSD)
        t = p.add_scalar()
        p.add_equality({("x", t): 1.0, ("M", m, 0, 0): -1.0}, 0.0)
        p.add_lin(t, -1.0)
        sol = solve(p, backend=backend)
        assert sol.scalars[0] == pytest.approx(0.0, abs=1e-6)
        assert np.linalg.eigvalsh(sol.matrices[0])[-1] <= 1e-8

    def test_psd_correlation_extreme(self, backend):
        # max s with [[1, s], [s, 1]] >= 0  ->  s = 1
        p = ConicProblem()
        s = p.add_scalar()
        m = p.add_matrix("M", 2, PSD)
        p.add_equality({("M", m, 0, 0): 1.0}, 1.0)
        p.add_equality({("M", m, 1, 1): 1.0}, 1.0)
        p.add_equality({("M", m, 0, 1): 1.0, ("x", s): -1.0}, 0.0)
        p.add_lin(s, -1.0)
        sol = solve(p, backend=backend)
        assert sol.scalars[0] == pytest.approx(1.0, abs=1e-5)

    def test_soc(self, backend):
        # min x0 + x1 with ||(x0, x1)|| <= 1
        p = ConicProblem()
        x0, x1, t = p.add_scalars(3)
        p.add_lin(x0, 1.0)
        p.add_lin(x1, 1.0)
        p.add_equality({("x", t): 1.0}, 1.0)
        p.add_soc(t, (x0, x1))
        sol = solve(p, backend=backend)
        assert sol.objective == pytest.approx(-np.sqrt(2), abs=1e-5)

    def test_feasibility_accuracy(self, backend):
        p, _ = make_equality_qp()
        sol = solve(p, backend=backend)
        assert sol.eq_residual <= 1e-8


def test_backends_agree():
    if "cvxpy" not in BACKENDS:
        pytest.skip("cvxpy not installed")
    rng = np.random.default_rng(9)
    p = ConicProblem()
    xs = p.add_scalars(4)
    target = rng.normal(size=4)
    for i, x in enumerate(xs):
        p.add_quad(x, x, 1.0)
        p.add_lin(x, -2 * target[i])
    m = p.add_matrix("M", 2, PSD)
    p.add_equality({("x", xs[0]): 1.0, ("M", m, 0, 0): -1.0}, 0.0)
    p.add_equality({("x", xs[1]): 1.0, ("M", m, 0, 1): -1.0}, 0.0)
    p.add_equality({("x", xs[2]): 1.0, ("M", m, 1, 1): -1.0}, 0.0)
    p.add_equality({("x", xs[3]): 1.0}, 0.5)
    a = solve(p, backend="cvxpy")
    b = solve(p, backend="reference")
    assert np.allclose(a.scalars, b.scalars, atol=1e-5)
    assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_infeasible_detected():
    if "cvxpy" not in BACKENDS:
        pytest.skip("cvxpy not installed")
    p = ConicProblem()
    x = p.add_scalar()
    p.add_equality({("x", x): 1.0}, 1.0, label="first")
    p.add_equality({("x", x): 1.0}, 2.0, label="second")
    with pytest.raises(InfeasibleError):
        solve(p, backend="cvxpy")


def test_objective_value_includes_l1():
    p = ConicProblem()
    x = p.add_scalar()
    p.add_l1(x, 2.0)
    p.add_lin(x, 1.0)
    assert p.objective_value([-3.0]) == pytest.approx(6.0 - 3.0)
