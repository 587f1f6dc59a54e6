"""Dual objective and gradient, projected Adam ascent, and the oracle."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import brentq

import biascal as bc
from biascal.solver import _check_finite, brute_force_project
from conftest import (
    feasible_single_activity_corpus,
    make_corpus,
    posteriors_of,
    random_constraints,
    random_corpus,
)


def half_toy(male_prob=0.5, b_star=0.5, gamma=0.0):
    """One instance with a male/female pair; dual coordinate 0 acts as the
    scalar of the closed-form -log cosh objective."""
    corpus = make_corpus(
        [("i", [(0, "M", math.log(male_prob)), (0, "W", math.log(1.0 - male_prob))])],
        names=["act"],
    )
    cs = bc.ConstraintSet((0,), np.array([b_star]), gamma)
    return corpus, posteriors_of(corpus), cs


def full_batch_config(**kwargs):
    defaults = dict(mode="full_batch", convergence_tol=1e-9)
    defaults.update(kwargs)
    return bc.SolverConfig(**defaults)


class TestDualObjective:
    def test_zero_at_origin(self):
        corpus, posteriors, cs = half_toy()
        assert_allclose(bc.dual_objective(np.zeros(2), corpus, posteriors, cs), 0.0, atol=1e-12)

    def test_featureless_instance_contributes_nothing(self):
        corpus = make_corpus([("i", [(0, "-", 0.7)])], names=["act"])
        cs = bc.ConstraintSet((0,), np.array([0.4]), 0.01)
        posteriors = posteriors_of(corpus)
        for lam in ([0.0, 0.0], [3.0, 1.0], [20.0, 0.5]):
            assert_allclose(
                bc.dual_objective(np.array(lam), corpus, posteriors, cs), 0.0, atol=1e-12
            )

    def test_log_cosh_closed_form(self):
        corpus, posteriors, cs = half_toy()
        for s in (0.0, 0.3, 1.7, 4.0):
            expected = -math.log(math.cosh(0.5 * s))
            actual = bc.dual_objective(np.array([s, 0.0]), corpus, posteriors, cs)
            assert_allclose(actual, expected, atol=1e-12)

    def test_concavity_along_random_segments(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            corpus = random_corpus(rng, n_activities=2, max_instances=8)
            cs = random_constraints(rng, corpus, gamma=0.01)
            if cs is None:
                continue
            posteriors = posteriors_of(corpus)
            lam_a = rng.uniform(0, 5, cs.dimension)
            lam_b = rng.uniform(0, 5, cs.dimension)
            mid = 0.5 * (lam_a + lam_b)
            j_mid = bc.dual_objective(mid, corpus, posteriors, cs)
            chord = 0.5 * (
                bc.dual_objective(lam_a, corpus, posteriors, cs)
                + bc.dual_objective(lam_b, corpus, posteriors, cs)
            )
            assert j_mid >= chord - 1e-9


class TestDualGradient:
    def test_at_origin_equals_corpus_expectation(self):
        # the reweighted posterior at lam = 0 is the base posterior, so the
        # gradient (the derivative of the objective, verified below by finite
        # differences) reduces to the plain feature expectation
        rng = np.random.default_rng(41)
        corpus = random_corpus(rng, n_activities=2, max_instances=6)
        cs = random_constraints(rng, corpus, gamma=0.01)
        posteriors = posteriors_of(corpus)
        gradient = bc.dual_gradient(np.zeros(cs.dimension), corpus, posteriors, cs)
        assert_allclose(gradient, bc.corpus_expectation(corpus, posteriors, cs), atol=1e-12)

    def test_featureless_batch_gives_zero(self):
        corpus = make_corpus(
            [("i", [(0, "-", 0.7)]), ("j", [(0, "-", 0.1), (0, "-", 0.2)])], names=["act"]
        )
        cs = bc.ConstraintSet((0,), np.array([0.4]), 0.01)
        gradient = bc.dual_gradient(np.zeros(2), corpus, posteriors_of(corpus), cs)
        assert_allclose(gradient, np.zeros(2), atol=0)

    def test_log_cosh_derivative(self):
        corpus, posteriors, cs = half_toy()
        for s in (0.0, 0.4, 2.0):
            gradient = bc.dual_gradient(np.array([s, 0.0]), corpus, posteriors, cs)
            assert_allclose(gradient[0], -0.5 * math.tanh(0.5 * s), atol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(51)
        for _ in range(5):
            corpus = random_corpus(rng, n_activities=2, max_instances=8)
            cs = random_constraints(rng, corpus, gamma=0.01)
            if cs is None:
                continue
            posteriors = posteriors_of(corpus)
            lam = rng.uniform(0, 3, cs.dimension)
            gradient = bc.dual_gradient(lam, corpus, posteriors, cs)
            for j in range(cs.dimension):
                h = 1e-4 * (1 + abs(lam[j]))
                bump = np.zeros(cs.dimension)
                bump[j] = h
                fd = (
                    bc.dual_objective(lam + bump, corpus, posteriors, cs)
                    - bc.dual_objective(lam - bump, corpus, posteriors, cs)
                ) / (2 * h)
                assert abs(fd - gradient[j]) <= 1e-5 * max(1.0, abs(gradient[j]))

    def test_batch_scaling(self):
        rng = np.random.default_rng(61)
        corpus = random_corpus(rng, n_activities=1, max_instances=6)
        cs = bc.ConstraintSet((0,), np.array([0.4]), 0.01)
        posteriors = posteriors_of(corpus)
        lam = np.array([0.5, 0.1])
        n = len(corpus)
        full = bc.dual_gradient(lam, corpus, posteriors, cs)
        batched = sum(
            bc.dual_gradient(lam, corpus, posteriors, cs, batch=[i]) for i in range(n)
        )
        assert_allclose(batched / n, full, atol=1e-12)


class TestSolve:
    def test_feasible_input_keeps_lambda_zero(self):
        corpus, posteriors, cs = half_toy(male_prob=0.5, b_star=0.5, gamma=0.01)
        state = bc.solve(corpus, posteriors, cs, full_batch_config())
        assert np.array_equal(state.lam, np.zeros(2))

    def test_boundary_solution_matches_stationarity(self):
        # with a zero margin and a balanced target ratio the two dual
        # coordinates act through their difference only, so the optimum is a
        # ray; the difference must equal the 1-D stationarity root and the
        # calibrated ratio must sit exactly on the boundary
        corpus, posteriors, cs = half_toy(male_prob=0.7, b_star=0.5, gamma=0.0)
        state = bc.solve(corpus, posteriors, cs, full_batch_config())

        def upper_gradient(s):
            return bc.dual_gradient(np.array([s, 0.0]), corpus, posteriors, cs)[0]

        root = brentq(upper_gradient, 0.0, 10.0, xtol=1e-12)
        assert_allclose(root, math.log(7.0 / 3.0), atol=1e-10)
        assert_allclose(state.lam[0] - state.lam[1], root, atol=1e-6)
        calibrated = bc.calibrate(corpus, posteriors, cs, state.lam)
        assert_allclose(bc.bias_in_distribution(calibrated, corpus, 0), 0.5, atol=1e-6)

    def test_boundary_solution_unique_with_margin(self):
        # a positive margin lifts the ray degeneracy: the optimum pins the
        # lower-side multiplier at zero
        corpus, posteriors, cs = half_toy(male_prob=0.7, b_star=0.5, gamma=0.01)
        state = bc.solve(corpus, posteriors, cs, full_batch_config())

        def upper_gradient(s):
            return bc.dual_gradient(np.array([s, 0.0]), corpus, posteriors, cs)[0]

        root = brentq(upper_gradient, 0.0, 10.0, xtol=1e-12)
        assert_allclose(state.lam[0], root, atol=1e-5)
        assert state.lam[1] <= 1e-6

    def test_duplicated_corpus_same_solution(self):
        rng = np.random.default_rng(71)
        corpus, cs = feasible_single_activity_corpus(rng, gamma=0.01)
        doubled = bc.Corpus(
            corpus.instances
            + tuple(
                bc.Instance(f"{inst.id}_copy", inst.candidates, inst.gold)
                for inst in corpus.instances
            ),
            corpus.activities,
        )
        state_single = bc.solve(corpus, posteriors_of(corpus), cs, full_batch_config())
        state_double = bc.solve(doubled, posteriors_of(doubled), cs, full_batch_config())
        assert_allclose(state_double.lam, state_single.lam, atol=1e-6)

    def test_kkt_at_convergence(self):
        rng = np.random.default_rng(81)
        for trial in range(6):
            corpus, cs = feasible_single_activity_corpus(rng, gamma=[0.001, 0.05][trial % 2])
            posteriors = posteriors_of(corpus)
            config = full_batch_config()
            state = bc.solve(corpus, posteriors, cs, config)
            gradient = bc.dual_gradient(state.lam, corpus, posteriors, cs)
            tol = config.convergence_tol
            for j in range(cs.dimension):
                if state.lam[j] <= tol:
                    assert gradient[j] <= tol
                else:
                    assert abs(gradient[j]) <= tol

    def test_primal_feasibility_after_calibration(self):
        rng = np.random.default_rng(91)
        for trial in range(6):
            gamma = [0.001, 0.05][trial % 2]
            corpus, cs = feasible_single_activity_corpus(rng, gamma=gamma)
            posteriors = posteriors_of(corpus)
            state = bc.solve(corpus, posteriors, cs, full_batch_config())
            calibrated = bc.calibrate(corpus, posteriors, cs, state.lam)
            ratio = bc.bias_in_distribution(calibrated, corpus, 0)
            assert abs(ratio - float(cs.b_star[0])) <= gamma + 1e-6

    def test_stochastic_deterministic_given_seed(self):
        rng = np.random.default_rng(101)
        corpus, cs = feasible_single_activity_corpus(rng, gamma=0.01, max_instances=5)
        posteriors = posteriors_of(corpus)
        config = bc.SolverConfig(mode="stochastic", batch_size=2, epochs=3, seed=7)
        first = bc.solve(corpus, posteriors, cs, config)
        second = bc.solve(corpus, posteriors, cs, config)
        assert np.array_equal(first.lam, second.lam)
        assert first.step == second.step

    def test_dimension_mismatch_rejected(self):
        corpus, posteriors, cs = half_toy()
        bad_state = bc.DualState.zeros(6, 0.1)
        with pytest.raises(bc.ValidationError):
            bc.solve(corpus, posteriors, cs, full_batch_config(), initial_state=bad_state)

    def test_non_finite_gradient_diagnosed(self):
        state = bc.DualState.zeros(3, 0.1)
        gradient = np.array([0.0, float("nan"), 1.0])
        with pytest.raises(bc.SolverDivergenceError) as exc_info:
            _check_finite(state, gradient)
        assert exc_info.value.coordinate == 1


class TestCalibrate:
    def test_zero_lambda_is_identity(self):
        corpus, posteriors, cs = half_toy(male_prob=0.7)
        out = bc.calibrate(corpus, posteriors, cs, np.zeros(2))
        assert out == posteriors

    def test_matches_closed_form(self):
        corpus, posteriors, cs = half_toy(male_prob=0.7, b_star=0.5, gamma=0.0)
        s = 0.9
        out = bc.calibrate(corpus, posteriors, cs, np.array([s, 0.0]))
        male = 0.7 * math.exp(-0.5 * s)
        female = 0.3 * math.exp(0.5 * s)
        assert_allclose(out[0].probs, np.array([male, female]) / (male + female), atol=1e-12)

    def test_untouched_instances_identical(self):
        corpus = make_corpus(
            [
                ("gendered", [(0, "M", 0.3), (0, "W", -0.2)]),
                ("plain", [(1, "M", 0.1), (0, "-", 0.4)]),
            ],
            names=["act", "other"],
        )
        cs = bc.ConstraintSet((0,), np.array([0.5]), 0.001)
        posteriors = posteriors_of(corpus)
        out = bc.calibrate(corpus, posteriors, cs, np.array([1.3, 0.0]))
        assert out[1] is posteriors[1]
        assert not np.array_equal(out[0].probs, posteriors[0].probs)


class TestBruteForce:
    def test_feasible_returns_input(self):
        corpus, posteriors, cs = half_toy(male_prob=0.5, b_star=0.5, gamma=0.05)
        projected, lam = brute_force_project(corpus, posteriors, cs)
        assert np.array_equal(lam, np.zeros(2))
        assert projected == posteriors

    def test_wide_margin_returns_input(self):
        corpus, posteriors, cs = half_toy(male_prob=0.7, b_star=0.5, gamma=0.3)
        projected, lam = brute_force_project(corpus, posteriors, cs)
        assert np.array_equal(lam, np.zeros(2))
        assert projected == posteriors

    def test_agrees_with_solver_on_toy(self):
        corpus, posteriors, cs = half_toy(male_prob=0.7, b_star=0.5, gamma=0.001)
        state = bc.solve(corpus, posteriors, cs, full_batch_config())
        solver_q = bc.calibrate(corpus, posteriors, cs, state.lam)
        oracle_q, _ = brute_force_project(corpus, posteriors, cs)
        tv = 0.5 * np.abs(solver_q[0].probs - oracle_q[0].probs).sum()
        assert tv <= 1e-4
        gap = bc.kl_divergence(solver_q, posteriors) - bc.kl_divergence(oracle_q, posteriors)
        assert gap <= 1e-4

    def test_refuses_three_activities(self):
        corpus = make_corpus(
            [("i", [(0, "M", 0.0), (1, "W", 0.0), (2, "M", 0.0)])],
            names=["a", "b", "c"],
        )
        cs = bc.ConstraintSet((0, 1, 2), np.full(3, 0.5), 0.01)
        with pytest.raises(bc.OracleSizeError):
            brute_force_project(corpus, posteriors_of(corpus), cs)

    def test_refuses_large_candidate_count(self):
        instances = [
            (f"i{k}", [(0, "M", 0.0), (0, "W", 0.0), (0, "-", 0.0)]) for k in range(30)
        ]
        corpus = make_corpus(instances, names=["act"])
        cs = bc.ConstraintSet((0,), np.array([0.5]), 0.01)
        with pytest.raises(bc.OracleSizeError):
            brute_force_project(corpus, posteriors_of(corpus), cs)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        corpus, posteriors, cs = half_toy(male_prob=0.7)
        config = full_batch_config()
        state = bc.solve(corpus, posteriors, cs, config)
        path = tmp_path / "checkpoint.json"
        bc.save_checkpoint(path, state, config, cs)
        loaded = bc.load_checkpoint(path, config, cs)
        assert np.array_equal(loaded.lam, state.lam)
        assert np.array_equal(loaded.first_moment, state.first_moment)
        assert loaded.step == state.step
        assert loaded.learning_rate == state.learning_rate

    def test_config_hash_mismatch_rejected(self, tmp_path):
        corpus, posteriors, cs = half_toy(male_prob=0.7)
        config = full_batch_config()
        state = bc.solve(corpus, posteriors, cs, config)
        path = tmp_path / "checkpoint.json"
        bc.save_checkpoint(path, state, config, cs)
        other = full_batch_config(seed=99)
        with pytest.raises(bc.ValidationError, match="hash"):
            bc.load_checkpoint(path, other, cs)

    def test_resume_continues(self, tmp_path):
        rng = np.random.default_rng(111)
        corpus, cs = feasible_single_activity_corpus(rng, gamma=0.001)
        posteriors = posteriors_of(corpus)
        config = bc.SolverConfig(mode="stochastic", epochs=2, batch_size=2, seed=3)
        state = bc.solve(corpus, posteriors, cs, config)
        path = tmp_path / "checkpoint.json"
        bc.save_checkpoint(path, state, config, cs)
        resumed = bc.load_checkpoint(path, config, cs)
        more = bc.solve(corpus, posteriors, cs, config, initial_state=resumed)
        assert more.step == 2 * state.step
