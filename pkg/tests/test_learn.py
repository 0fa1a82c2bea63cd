import numpy as np
import pytest

from plyds.data import DemonstrationSet, preprocess, synth_generate
from plyds.errors import InputError
from plyds.learn import (
    LearnConfig,
    assemble_objective,
    learn_policy,
    solve_lpf_step,
    solve_policy_step,
)
from plyds.lyapunov import LyapunovModel, build_matching_system, check_certificate
from plyds.policy import PolicyModel


def single_sample_set(x, v):
    pos = np.array([[[float(x)], [0.0]]])
    vel = np.array([[[float(v)], [0.0]]])
    return DemonstrationSet(positions=pos, velocities=vel, target=np.zeros(1))


def linear_policy_1d(rate):
    mat = np.zeros((2, 2))
    mat[0, 1] = mat[1, 0] = rate / 2.0
    return PolicyModel.from_matrices(1, 1, [mat])


class TestConfig:
    def test_defaults_valid(self):
        cfg = LearnConfig()
        assert cfg.alpha == 3 and cfg.beta == 1

    def test_rejects_bad_values(self):
        with pytest.raises(InputError):
            LearnConfig(alpha=0)
        with pytest.raises(InputError):
            LearnConfig(tolerance=0.0)
        with pytest.raises(InputError):
            LearnConfig(l1=-1.0)
        with pytest.raises(InputError):
            LearnConfig(lpf_mode="tensor")


class TestObjective:
    def test_exact_predictor_zero_cost(self):
        # sample (x=1, xdot=-1) with f(x) = -x
        dataset = single_sample_set(1.0, -1.0)
        obj = assemble_objective(dataset, 1, 0.0, 0.0)
        value = obj.value([linear_policy_1d(-1.0).blocks[0].upper_vector()])
        # the second sample is the pinned origin, predicted exactly as well
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_zero_policy_cost(self):
        # one informative sample (x=1, xdot=-1) plus the pinned zero sample:
        # J = (1/(2*2)) * (1 + 0)
        dataset = single_sample_set(1.0, -1.0)
        obj = assemble_objective(dataset, 1, 0.0, 0.0)
        assert obj.value([np.zeros(3)]) == pytest.approx(0.25)

    def test_l1_counts_entries_with_multiplicity(self):
        dataset = single_sample_set(1.0, -1.0)
        obj = assemble_objective(dataset, 1, 1.0, 0.0)
        upper = linear_policy_1d(-1.0).blocks[0].upper_vector()
        # |P|_1 of [[0,-0.5],[-0.5,0]] counts both off-diagonal copies
        assert obj.regularizer([upper]) == pytest.approx(1.0)

    def test_quadratic_matches_direct_mse(self):
        rng = np.random.default_rng(0)
        dataset = synth_generate("linear", n=2, n_demos=3, n_samples=50, seed=1,
                                 radius=2.0)
        obj = assemble_objective(dataset, 2, 0.0, 0.0)
        for _ in range(10):
            mats = []
            for _ in range(2):
                m = rng.normal(size=(5, 5)) * 0.2
                m = 0.5 * (m + m.T)
                m[0, 0] = 0.0
                mats.append(m)
            policy = PolicyModel.from_matrices(2, 2, mats)
            X, Y = dataset.stacked()
            direct = 0.5 * np.sum((policy.predict_many(X) - Y) ** 2) / X.shape[0]
            quad = obj.value([b.upper_vector() for b in policy.blocks])
            assert quad == pytest.approx(direct, abs=1e-9)

    def test_empty_dataset_rejected(self):
        dataset = synth_generate("linear", n=1, n_demos=2, n_samples=10, seed=0)
        shifted = dataset.replace(target=np.ones(1))
        with pytest.raises(InputError):
            assemble_objective(shifted, 1, 0.0, 0.0)


class TestPolicyStep:
    def test_recovers_linear_field(self):
        dataset = synth_generate("linear", n=1, n_demos=2, n_samples=100, seed=2,
                                 radius=2.0)
        cfg = LearnConfig(alpha=1, beta=1, l1=0.0, l2=0.0)
        lyap = LyapunovModel.identity(1, 1)
        step = solve_policy_step(dataset, lyap, cfg)
        xs = np.linspace(-2, 2, 41).reshape(-1, 1)
        sup = np.max(np.abs(step.policy.predict_many(xs) + xs))
        assert sup <= 1e-4

    def test_unstable_expert_gets_stable_fit(self):
        dataset = synth_generate("linear", n=1, n_demos=2, n_samples=100, seed=3,
                                 radius=2.0)
        flipped = dataset.replace(velocities=-dataset.velocities)  # xdot = +x
        cfg = LearnConfig(alpha=1, beta=1, l1=0.0, l2=0.0)
        lyap = LyapunovModel.identity(1, 1)
        step = solve_policy_step(flipped, lyap, cfg)
        assert step.objective_value > 0.01  # strictly positive MSE
        from plyds.lyapunov import certify
        cert = certify(step.policy, lyap, step.decrease_blocks,
                       eps_decrease=cfg.tolerance, audit_box=((-4,), (4,)))
        assert cert.certified

    def test_one_dim_closed_form(self):
        # xdot = -2x with alpha = beta = 1: recovered field -2x and the
        # derivative Gram's only live entry is -4q (v = q x^2)
        dataset = synth_generate("linear", n=1, n_demos=2, n_samples=100, seed=4,
                                 radius=2.0)
        doubled = dataset.replace(velocities=2.0 * dataset.velocities)
        system = build_matching_system(1, 1, 1, eps_decrease=0.0)
        cfg = LearnConfig(alpha=1, beta=1, l1=0.0, l2=0.0)
        lyap = LyapunovModel.identity(1, 1)
        step = solve_policy_step(doubled, lyap, cfg, system=system)
        xs = np.linspace(-2, 2, 21).reshape(-1, 1)
        assert np.max(np.abs(step.policy.predict_many(xs) + 2 * xs)) <= 1e-4
        q = lyap.blocks[0].matrix[0, 0]
        assert step.decrease_blocks[0].matrix[0, 0] == pytest.approx(-4.0 * q, abs=1e-4)
        # the top-degree diagonal is structurally zero
        assert step.decrease_blocks[0].matrix[1, 1] == pytest.approx(0.0, abs=1e-10)


class TestLpfStep:
    def test_stable_linear_has_positive_slack(self):
        cfg = LearnConfig(alpha=1, beta=1)
        res = solve_lpf_step(linear_policy_1d(-1.0), cfg)
        assert res.slack == pytest.approx(2.0, abs=1e-6)
        assert res.certifiable(cfg.tolerance)
        # trace normalization pins q = 1
        assert res.lyap.blocks[0].matrix[0, 0] == pytest.approx(1.0, abs=1e-8)

    def test_unstable_linear_negative_slack(self):
        cfg = LearnConfig(alpha=1, beta=1)
        res = solve_lpf_step(linear_policy_1d(+1.0), cfg)
        assert res.slack < 0
        assert not res.certifiable(cfg.tolerance)

    def test_zero_field_boundary(self):
        cfg = LearnConfig(alpha=1, beta=1)
        res = solve_lpf_step(linear_policy_1d(0.0), cfg)
        assert res.slack == pytest.approx(0.0, abs=1e-7)
        assert not res.certifiable(cfg.tolerance)


class TestLearnPolicy:
    def test_linear_recovery_certified(self):
        dataset = synth_generate("linear", n=2, n_demos=5, n_samples=200, seed=5,
                                 radius=2.0)
        policy, lyap, cert, report = learn_policy(dataset, LearnConfig(seed=5))
        assert cert.certified
        assert report["train_mse"] <= 1e-5
        again = check_certificate(policy, lyap, cert, seed=1234)
        assert again.certified

    def test_monotone_objective_history(self):
        dataset = synth_generate("sine", n=2, n_demos=3, n_samples=100, seed=6)
        dataset = preprocess(dataset, normalize_velocities=True)
        _, _, _, report = learn_policy(dataset, LearnConfig(seed=6, sqp_iters=0))
        values = [h["objective"] for h in report["history"] if h["step"] == "policy"]
        for earlier, later in zip(values, values[1:]):
            assert later <= earlier + 1e-9

    def test_determinism(self):
        dataset = synth_generate("linear", n=2, n_demos=4, n_samples=100, seed=7,
                                 radius=2.0)
        cfg = LearnConfig(seed=7)
        first = learn_policy(dataset, cfg)
        second = learn_policy(dataset, cfg)
        for a, b in zip(first[0].blocks, second[0].blocks):
            assert np.allclose(a.matrix, b.matrix, atol=1e-9)
        assert first[3]["objective"] == pytest.approx(second[3]["objective"], abs=1e-9)

    def test_shrinkage_with_large_l1(self):
        dataset = synth_generate("linear", n=1, n_demos=3, n_samples=100, seed=8,
                                 radius=2.0)
        base = learn_policy(dataset, LearnConfig(alpha=2, l1=0.0, l2=0.0, seed=8,
                                                 sqp_iters=0))
        heavy = learn_policy(dataset, LearnConfig(alpha=2, l1=1e2, l2=0.0, seed=8,
                                                  sqp_iters=0))
        def l1_norm(policy):
            return sum(np.abs(b.matrix).sum() for b in policy.blocks)
        assert l1_norm(heavy[0]) <= l1_norm(base[0]) + 1e-9

    def test_nonzero_target_round_trip(self):
        dataset = synth_generate("linear", n=2, n_demos=3, n_samples=80, seed=9,
                                 radius=2.0)
        target = np.array([3.0, -1.0])
        moved = dataset.replace(positions=dataset.positions + target, target=target)
        policy, lyap, cert, _ = learn_policy(moved, LearnConfig(alpha=1, seed=9))
        assert cert.certified
        assert np.allclose(policy.predict(target), [0.0, 0.0], atol=1e-10)
        # field still contracts toward the shifted target
        probe = target + np.array([0.5, 0.0])
        assert policy.predict(probe)[0] < 0

    def test_scalar_mode(self):
        dataset = synth_generate("linear", n=2, n_demos=3, n_samples=80, seed=10,
                                 radius=2.0)
        policy, lyap, cert, _ = learn_policy(dataset, LearnConfig(lpf_mode="scalar",
                                                                  seed=10))
        assert cert.certified
        assert lyap.mode == "scalar"
        assert len(lyap.blocks) == 1

    def test_full_basis_mode(self):
        dataset = synth_generate("linear", n=2, n_demos=3, n_samples=80, seed=11,
                                 radius=2.0)
        policy, lyap, cert, _ = learn_policy(
            dataset, LearnConfig(alpha=2, basis_mode="full", seed=11))
        assert cert.certified

    def test_sine_degree_ordering(self):
        dataset = synth_generate("sine", n=2, n_demos=4, n_samples=150, seed=21)
        dataset = preprocess(dataset, normalize_velocities=True)
        results = {}
        for alpha in (1, 3):
            _, _, cert, report = learn_policy(
                dataset, LearnConfig(alpha=alpha, seed=21, sqp_iters=0))
            assert cert.certified
            results[alpha] = report["train_mse"]
        assert results[3] <= results[1]

    def test_single_demonstration(self):
        dataset = synth_generate("sine", n=2, n_demos=1, n_samples=200, seed=12)
        dataset = preprocess(dataset, normalize_velocities=True)
        policy, lyap, cert, _ = learn_policy(dataset, LearnConfig(seed=12))
        assert cert.certified

    def test_reference_backend_end_to_end(self):
        dataset = synth_generate("linear", n=1, n_demos=2, n_samples=60, seed=13,
                                 radius=2.0)
        cfg = LearnConfig(alpha=1, beta=1, seed=13, sqp_iters=0,
                          solver_backend="reference")
        policy, lyap, cert, report = learn_policy(dataset, cfg)
        assert cert.certified
        assert cert.matching_residual <= 1e-8
        xs = np.linspace(-2, 2, 11).reshape(-1, 1)
        assert np.max(np.abs(policy.predict_many(xs) + xs)) <= 1e-2

    def test_backends_agree_on_policy_step(self):
        dataset = synth_generate("linear", n=1, n_demos=2, n_samples=80, seed=14,
                                 radius=2.0)
        lyap = LyapunovModel.identity(1, 1)
        results = {}
        for backend in ("cvxpy", "reference"):
            cfg = LearnConfig(alpha=2, beta=1, seed=14, solver_backend=backend)
            results[backend] = solve_policy_step(dataset, lyap, cfg)
        a, b = results["cvxpy"], results["reference"]
        assert a.objective_value == pytest.approx(b.objective_value, abs=1e-5)
        for ba, bb in zip(a.policy.blocks, b.policy.blocks):
            assert np.allclose(ba.matrix, bb.matrix, atol=1e-3)

    def test_tolerant_endpoints_still_learn(self):
        # endpoints inside the validation tolerance but not exactly at the
        # target, as in recorded rather than synthetic data
        dataset = synth_generate("linear", n=2, n_demos=3, n_samples=80, seed=15,
                                 radius=2.0)
        rng = np.random.default_rng(15)
        pos = dataset.positions.copy()
        pos[:, -1, :] += rng.uniform(-1e-4, 1e-4, size=pos[:, -1, :].shape)
        smudged = dataset.replace(positions=pos)
        from plyds.data import validate
        validate(smudged)
        policy, _, cert, _ = learn_policy(smudged, LearnConfig(alpha=1, seed=15))
        assert cert.certified

    def test_grid_negativity_of_time_derivative(self):
        from plyds.lyapunov import time_derivative_polys
        dataset = synth_generate("linear", n=2, n_demos=3, n_samples=80, seed=16,
                                 radius=2.0)
        policy, lyap, cert, _ = learn_policy(dataset, LearnConfig(seed=16))
        lo = np.asarray(cert.audit_box[0])
        hi = np.asarray(cert.audit_box[1])
        grid = np.linspace(0, 1, 101)
        XX, YY = np.meshgrid(lo[0] + grid * (hi[0] - lo[0]),
                             lo[1] + grid * (hi[1] - lo[1]))
        pts = np.column_stack([XX.ravel(), YY.ravel()])
        pts = pts[np.linalg.norm(pts, axis=1) > 1e-9]
        for deriv in time_derivative_polys(lyap, policy):
            assert np.all(deriv.evaluate_many(pts) < 0.0)
