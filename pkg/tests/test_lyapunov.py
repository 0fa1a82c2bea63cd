import numpy as np
import pytest

from plyds.errors import InputError
from plyds.lyapunov import (
    LyapunovModel,
    aggregate_lpf,
    build_matching_system,
    certify,
    check_certificate,
    lpf_time_derivative,
    lpf_value,
    lpf_value_many,
    time_derivative_polys,
)
from plyds.policy import PolicyModel
from plyds.poly import BasisSpec, GramPolynomial, basis_vector, eval_gram_many


def policy_1d_linear(rate=-1.0, alpha=1):
    """f(x) = rate * x as a policy model (off-diagonal Gram entry rate/2)."""
    size = alpha + 1
    mat = np.zeros((size, size))
    mat[0, 1] = rate / 2.0
    mat[1, 0] = rate / 2.0
    return PolicyModel.from_matrices(1, alpha, [mat])


def policy_1d_cubic():
    """f(x) = -x - 0.1 x^3 over the degree-2 basis [1, x, x^2]."""
    mat = np.zeros((3, 3))
    mat[0, 1] = mat[1, 0] = -0.5
    mat[1, 2] = mat[2, 1] = -0.05
    return PolicyModel.from_matrices(1, 2, [mat])


def lpf_1d_quadratic(q=1.0):
    return LyapunovModel.from_matrices(1, 1, [np.array([[q]])])


class TestLpfValue:
    def test_quadratic(self):
        assert lpf_value(lpf_1d_quadratic(), [2.0]) == pytest.approx([4.0])

    def test_vanishes_at_origin(self):
        lyap = LyapunovModel.from_matrices(2, 2, [np.eye(4), 2 * np.eye(4)])
        assert np.array_equal(lpf_value(lyap, [0.0, 0.0]), [0.0, 0.0])

    def test_identity_blocks(self):
        lyap = LyapunovModel.from_matrices(2, 1, [np.eye(2), np.eye(2)])
        # oracle: sum of squares of the reduced basis entries
        b = basis_vector([1.0, 2.0], BasisSpec(2, 1, include_constant=False))
        expected = float(b @ b)
        assert lpf_value(lyap, [1.0, 2.0]) == pytest.approx([expected, expected])
        assert expected == 5.0

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            lpf_value(lpf_1d_quadratic(), [1.0, 2.0])


class TestTimeDerivative:
    def test_linear_decay(self):
        got = lpf_time_derivative(lpf_1d_quadratic(), policy_1d_linear(), [2.0])
        assert got == pytest.approx([-8.0])

    def test_zero_at_equilibrium(self):
        got = lpf_time_derivative(lpf_1d_quadratic(), policy_1d_cubic(), [0.0])
        assert got == pytest.approx([0.0])

    def test_cubic_field(self):
        # oracle: 2x * (-x - 0.1 x^3) at x = 1
        got = lpf_time_derivative(lpf_1d_quadratic(), policy_1d_cubic(), [1.0])
        assert got == pytest.approx([2 * 1 * (-1 - 0.1)])

    def test_gradient_finite_difference_oracle(self):
        rng = np.random.default_rng(5)
        lyap = LyapunovModel.from_matrices(2, 2, [np.eye(4) + 0.1, 0.5 * np.eye(4)])
        mats = [rng.normal(size=(5, 5)) * 0.1 for _ in range(2)]
        for m in mats:
            m[0, 0] = 0.0
        policy = PolicyModel.from_matrices(2, 2, [0.5 * (m + m.T) for m in mats])
        h = 1e-6
        for _ in range(20):
            x = rng.uniform(-1.5, 1.5, size=2)
            f = policy.predict(x)
            grad = np.zeros((2, 2))  # grad[i, j] = dv_i/dx_j
            for j in range(2):
                step = np.zeros(2)
                step[j] = h
                grad[:, j] = (lpf_value(lyap, x + step) - lpf_value(lyap, x - step)) / (2 * h)
            expected = grad @ f
            got = lpf_time_derivative(lyap, policy, x)
            assert got == pytest.approx(expected, rel=1e-5, abs=1e-6)


class TestMatchingSystem:
    def row_for(self, system, monomial):
        for row in system.rows:
            if row.monomial == monomial:
                return row
        raise AssertionError(f"no row for monomial {monomial}")

    def test_one_dimensional_rows(self):
        system = build_matching_system(1, 1, 1, eps_decrease=0.0)
        q, p01, p11 = 0.8, -0.4, 0.3
        lpf_upper = np.array([q])
        policy_uppers = [np.array([0.0, p01, p11])]

        row2 = self.row_for(system, (2,))
        assert system.bilinear_value(row2, policy_uppers, lpf_upper) == pytest.approx(4 * q * p01)
        assert row2.eps_weight == 1.0
        assert row2.gram_pairs == ((0, 1.0),)  # pair (x, x): diagonal entry

        row3 = self.row_for(system, (3,))
        assert system.bilinear_value(row3, policy_uppers, lpf_upper) == pytest.approx(2 * q * p11)
        assert row3.gram_pairs == ((1, 2.0),)  # pair (x, x^2): off-diagonal, doubled

        # G01 = q p11 once the doubling is accounted for
        assert system.bilinear_value(row3, policy_uppers, lpf_upper) / 2.0 == pytest.approx(q * p11)

    def test_top_degree_diagonal_forced_zero(self):
        for alpha, beta in ((1, 1), (2, 1), (3, 2)):
            system = build_matching_system(alpha, beta, 1)
            top = (2 * (alpha + beta),)
            row = self.row_for(system, top)
            assert row.terms == ()  # vdot has degree at most 2(alpha+beta) - 1
            assert row.eps_weight == 0.0
            assert row.gram_pairs is not None and len(row.gram_pairs) == 1

    def test_three_dim_residual_monomial(self):
        system = build_matching_system(1, 1, 3, basis_mode="elementwise")
        assert (1, 1, 1) in system.residual_monomials

    def test_full_mode_has_no_residuals(self):
        for n, alpha, beta in ((2, 3, 1), (3, 1, 1), (2, 2, 2)):
            system = build_matching_system(alpha, beta, n, basis_mode="full")
            assert system.residual_monomials == []

    def test_elementwise_n2_high_degree_has_residuals(self):
        system = build_matching_system(3, 1, 2, basis_mode="elementwise")
        assert (1, 6) in system.residual_monomials

    def test_bad_degrees(self):
        with pytest.raises(InputError):
            build_matching_system(0, 1, 1)
        with pytest.raises(InputError):
            build_matching_system(1, 0, 2)

    def test_determinism(self):
        a = build_matching_system(2, 1, 2)
        b = build_matching_system(2, 1, 2)
        assert a == b

    @pytest.mark.parametrize("n,alpha,beta,mode", [
        (1, 1, 1, "elementwise"),
        (1, 3, 2, "elementwise"),
        (2, 1, 1, "elementwise"),
        (2, 2, 1, "full"),
        (3, 1, 1, "full"),
    ])
    def test_matching_soundness(self, n, alpha, beta, mode):
        """Any G built from the rows reproduces vdot + eps |x|^2 pointwise."""
        eps = 1e-3
        system = build_matching_system(alpha, beta, n, basis_mode=mode, eps_decrease=eps)
        rng = np.random.default_rng(17)

        policy_spec = system.policy_spec
        mats = []
        for _ in range(n):
            m = rng.normal(size=(len(policy_spec),) * 2) * 0.3
            m = 0.5 * (m + m.T)
            m[0, 0] = 0.0
            mats.append(m)
        policy = PolicyModel.from_matrices(n, alpha, mats, basis_mode=mode)

        lpf_mat = rng.normal(size=(len(system.lpf_spec),) * 2) * 0.3
        lpf_mat = 0.5 * (lpf_mat + lpf_mat.T) + np.eye(len(system.lpf_spec))
        lyap = LyapunovModel.from_matrices(n, beta, [lpf_mat] * n, basis_mode=mode)

        policy_uppers = [b.upper_vector() for b in policy.blocks]
        lpf_upper = lyap.blocks[0].upper_vector()

        deriv_size = len(system.derivative_spec)
        gram_upper = np.zeros(deriv_size * (deriv_size + 1) // 2)
        for row in system.rows:
            value = system.bilinear_value(row, policy_uppers, lpf_upper)
            value += eps * row.eps_weight
            assert row.gram_pairs is not None, f"residual monomial {row.monomial}"
            idx, mult = row.gram_pairs[0]
            gram_upper[idx] = value / mult
        gram = GramPolynomial.from_upper(system.derivative_spec, gram_upper)

        X = rng.uniform(-2, 2, size=(1000, n))
        vdot = time_derivative_polys(lyap, policy)[0].evaluate_many(X)
        norms = np.sum(X ** 2, axis=1)
        gram_vals = eval_gram_many(gram, X)
        bound = 1e-6 * (1 + np.linalg.norm(X, axis=1) ** (2 * (alpha + beta)))
        assert np.all(np.abs(vdot + eps * norms - gram_vals) <= bound)


class TestCertificate:
    def make_linear_cert(self, rate=-1.0, eps_decrease=0.0):
        policy = policy_1d_linear(rate)
        lyap = lpf_1d_quadratic()
        deriv_spec = BasisSpec(1, 2, include_constant=False)
        gram = GramPolynomial(deriv_spec, [[2 * rate - eps_decrease * -1.0, 0], [0, 0]])
        gram = GramPolynomial(deriv_spec, [[2 * rate + eps_decrease, 0], [0, 0]])
        return policy, lyap, (gram,)

    def test_stable_linear_certified(self):
        policy, lyap, blocks = self.make_linear_cert()
        cert = certify(policy, lyap, blocks, eps_decrease=0.0,
                       audit_box=((-2,), (2,)), seed=0)
        assert cert.certified
        assert cert.matching_residual <= 1e-12
        assert cert.decrease_max_eigs == (0.0,)

    def test_unstable_linear_fails(self):
        policy = policy_1d_linear(+1.0)
        lyap = lpf_1d_quadratic()
        deriv_spec = BasisSpec(1, 2, include_constant=False)
        gram = GramPolynomial(deriv_spec, [[2.0, 0], [0, 0]])
        cert = certify(policy, lyap, (gram,), eps_decrease=0.0,
                       audit_box=((-2,), (2,)))
        assert not cert.certified
        assert cert.verdict == "failed(decrease-matrix)"

    def test_corrupted_gram_fails_matching(self):
        policy, lyap, blocks = self.make_linear_cert()
        deriv_spec = blocks[0].spec
        corrupted = GramPolynomial(deriv_spec, blocks[0].matrix - np.diag([1e-3, 0]))
        cert = certify(policy, lyap, (corrupted,), eps_decrease=0.0,
                       audit_box=((-2,), (2,)))
        assert cert.verdict == "failed(matching)"
        assert cert.matching_residual == pytest.approx(1e-3)

    def test_check_certificate_reverifies(self):
        policy, lyap, blocks = self.make_linear_cert()
        cert = certify(policy, lyap, blocks, eps_decrease=0.0,
                       audit_box=((-2,), (2,)), seed=0)
        again = check_certificate(policy, lyap, cert, seed=99)
        assert again.certified
        assert again.matching_residual == cert.matching_residual

    def test_decrease_margin_audit(self):
        eps = 1e-4
        policy, lyap, blocks = self.make_linear_cert(eps_decrease=eps)
        cert = certify(policy, lyap, blocks, eps_decrease=eps,
                       audit_box=((-3,), (3,)), seed=2)
        assert cert.certified
        assert cert.audit_decrease_passes == cert.n_audit - (cert.n_audit - cert.audit_positivity_passes)

    def test_report_is_json_ready(self):
        import json
        policy, lyap, blocks = self.make_linear_cert()
        cert = certify(policy, lyap, blocks, eps_decrease=0.0, audit_box=((-2,), (2,)))
        text = json.dumps(cert.to_report())
        assert "certified" in text


class TestAggregate:
    def test_block_sum(self):
        lyap = LyapunovModel.from_matrices(2, 1, [np.eye(2), np.eye(2)])
        total = aggregate_lpf(lyap)
        assert total.mode == "scalar"
        assert np.array_equal(total.blocks[0].matrix, 2 * np.eye(2))

    def test_scalar_input_rejected(self):
        lyap = LyapunovModel.from_matrices(2, 1, [np.eye(2)], mode="scalar")
        with pytest.raises(InputError):
            aggregate_lpf(lyap)

    def test_aggregate_value_is_row_sum(self):
        rng = np.random.default_rng(23)
        mats = []
        for _ in range(2):
            m = rng.normal(size=(4, 4))
            mats.append(m @ m.T + 0.1 * np.eye(4))
        lyap = LyapunovModel.from_matrices(2, 2, mats)
        total = aggregate_lpf(lyap)
        X = rng.uniform(-2, 2, size=(200, 2))
        assert np.allclose(lpf_value_many(total, X)[:, 0],
                           lpf_value_many(lyap, X).sum(axis=1))


class TestCholeskySOS:
    def test_factor_reproduces_value(self):
        rng = np.random.default_rng(31)
        spec = BasisSpec(2, 2, include_constant=False)
        for _ in range(20):
            m = rng.normal(size=(4, 4))
            mat = m @ m.T + 1e-9 * np.eye(4)
            lyap = LyapunovModel.from_matrices(2, 2, [mat] * 2)
            factor = np.linalg.cholesky(mat)
            X = rng.uniform(-3, 3, size=(1000, 2))
            values = lpf_value_many(lyap, X)[:, 0]
            assert np.all(values >= 0.0)
            from plyds.poly import basis_matrix
            B = basis_matrix(X, spec)
            sos = np.sum((B @ factor) ** 2, axis=1)
            assert np.allclose(sos, values, rtol=1e-9, atol=1e-12)


class TestArgminInvariance:
    def test_grid_minimum_at_origin(self):
        lyap = LyapunovModel.from_matrices(2, 1, [np.array([[2.0, 0.3], [0.3, 1.0]])] * 2)
        total = aggregate_lpf(lyap)
        grid = np.linspace(-1.3, 1.1, 101)
        XX, YY = np.meshgrid(grid, grid)
        pts = np.column_stack([XX.ravel(), YY.ravel()])
        values = lpf_value_many(total, pts)[:, 0]
        best = pts[np.argmin(values)]
        nearest = pts[np.argmin(np.sum(pts ** 2, axis=1))]
        assert np.array_equal(best, nearest)
