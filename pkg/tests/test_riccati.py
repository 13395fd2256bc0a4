import numpy as np
import pytest

from clq import (ConstraintSpec, CostSpec, ProblemSpec, ScenarioSet,
                 SingularStageMatrixError, check_threshold,
                 fixed_point_residuals, solve_finite, solve_infinite,
                 solve_unconstrained)

from conftest import scalar_spec


def unconstrained_spec(model, costs, q_T, horizon, coupling="sign"):
    n = model.n
    return ProblemSpec(model=model, costs=costs, q_T=q_T,
                       constraints=(ConstraintSpec.unconstrained(n),),
                       horizon=horizon, x0=1.0, coupling=coupling)


class TestFiniteHorizon:
    def test_terminal_condition(self, spec3_finite):
        sol = solve_finite(spec3_finite)
        assert np.all(sol.ghat[-1] == spec3_finite.q_T)
        assert np.all(sol.gbar[-1] == spec3_finite.q_T)

    def test_values_nonnegative_and_gains_feasible(self, spec3_finite, box3):
        sol = solve_finite(spec3_finite)
        assert np.all(sol.ghat >= 0) and np.all(sol.gbar >= 0)
        for t in range(sol.horizon):
            assert box3.contains(sol.khat[t, 0])
            assert box3.contains(sol.kbar[t, 0])

    def test_one_step_single_scenario_closed_form(self):
        # T=1, unconstrained, single scenario (a, b), R=r, S=0, terminal 1:
        # G_0 = q_0 + a^2 - (a b)^2 / (r + b^2)
        a, b, r, q0 = 1.3, 0.7, 2.0, 0.4
        model = ScenarioSet(a=[a], b=[[b]], p=[1.0])
        spec = unconstrained_spec(model, (CostSpec([[r]], [0.0], q0),), 1.0, 1)
        sol = solve_unconstrained(spec)
        expected = q0 + a * a - (a * b) ** 2 / (r + b * b)
        assert sol.ghat[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_deterministic_hand_value(self):
        # a=1, b=1, R=1, S=0, q=0, q_T=1, T=1: G_0 = 1 - 1/2 = 0.5, K_0 = -0.5
        model = ScenarioSet(a=[1.0], b=[[1.0]], p=[1.0])
        spec = unconstrained_spec(model, (CostSpec([[1.0]], [0.0], 0.0),), 1.0, 1)
        sol = solve_unconstrained(spec)
        assert sol.ghat[0, 0] == pytest.approx(0.5, rel=1e-12)
        assert sol.khat[0, 0, 0] == pytest.approx(-0.5, rel=1e-12)

    def test_zero_costs_zero_solution(self, model3):
        spec = unconstrained_spec(model3, (CostSpec.zero(3),) * 3, 0.0, 3)
        sol = solve_unconstrained(spec)
        np.testing.assert_allclose(sol.ghat, 0.0, atol=1e-15)
        np.testing.assert_allclose(sol.khat, 0.0, atol=1e-12)

    def test_merge_with_unconstrained_set(self, model3, cost3):
        spec = unconstrained_spec(model3, (cost3,) * 3, 1.0, 3)
        closed = solve_unconstrained(spec)
        iterative = solve_finite(spec)
        np.testing.assert_allclose(iterative.ghat, closed.ghat, atol=1e-8)
        np.testing.assert_allclose(iterative.gbar, closed.ghat, atol=1e-8)
        np.testing.assert_allclose(iterative.khat, -iterative.kbar, atol=1e-6)

    def test_singular_stage_matrix(self):
        # R + E[G B'B] = 0 while the linear term S is nonzero: no stationary
        # point exists and the closed form must refuse
        model = ScenarioSet(a=[1.0], b=[[0.0]], p=[1.0])
        spec = unconstrained_spec(model, (CostSpec([[0.0]], [1.0], 0.0),), 1.0, 1)
        with pytest.raises(SingularStageMatrixError):
            solve_unconstrained(spec)

    def test_singular_but_consistent_stage_is_fine(self):
        model = ScenarioSet(a=[1.0], b=[[1.0]], p=[1.0])
        spec = unconstrained_spec(model, (CostSpec([[0.0]], [0.0], 0.0),), 0.0, 1)
        sol = solve_unconstrained(spec)
        assert sol.ghat[0, 0] == 0.0 and sol.khat[0, 0, 0] == 0.0

    def test_constrained_dominates_unconstrained(self, model3, cost3, box3):
        con_spec = ProblemSpec(model=model3, costs=(cost3,) * 4, q_T=1.0,
                               constraints=(box3,), horizon=4, x0=1.0)
        unc_spec = unconstrained_spec(model3, (cost3,) * 4, 1.0, 4)
        sol_c = solve_finite(con_spec)
        sol_u = solve_unconstrained(unc_spec)
        assert np.all(sol_c.ghat >= sol_u.ghat - 1e-9)
        assert np.all(sol_c.gbar >= sol_u.gbar - 1e-9)

    def test_time_homogeneity(self, model3, cost3, box3):
        # i.i.d. costs, zero terminal: solutions for horizons T and T+k are
        # shifted copies of one another
        def run(T):
            spec = ProblemSpec(model=model3, costs=(cost3,) * T, q_T=0.0,
                               constraints=(box3,), horizon=T, x0=1.0)
            return solve_finite(spec)

        base = run(6)
        longer = run(10)
        k = 4
        np.testing.assert_allclose(longer.ghat[k:], base.ghat, atol=1e-9)
        np.testing.assert_allclose(longer.gbar[k:], base.gbar, atol=1e-9)

    def test_monotone_in_horizon(self, model3, cost3, box3):
        prev_h, prev_b = -1.0, -1.0
        for T in range(1, 11):
            spec = ProblemSpec(model=model3, costs=(cost3,) * T, q_T=0.0,
                               constraints=(box3,), horizon=T, x0=1.0)
            sol = solve_finite(spec)
            assert sol.ghat[0, 0] >= prev_h - 1e-10
            assert sol.gbar[0, 0] >= prev_b - 1e-10
            prev_h, prev_b = sol.ghat[0, 0], sol.gbar[0, 0]

    def test_markov_state_dimension(self, spec3_markov):
        sol = solve_finite(spec3_markov)
        assert sol.ghat.shape == (5, 5)
        assert sol.khat.shape == (4, 5, 3)
        assert np.all(sol.ghat[:-1] > 0)


class TestInfiniteHorizon:
    def test_benchmark_fixed_point_sign(self, spec3_infinite):
        fp = solve_infinite(spec3_infinite)
        assert fp.converged and not fp.diverged
        rh, rb = fixed_point_residuals(fp)
        assert rh <= 1e-7 and rb <= 1e-7
        # iterates are nondecreasing in both components
        diffs = np.diff(fp.iterates, axis=0)
        assert np.all(diffs >= -1e-12)

    def test_fixed_point_stable_under_extra_sweep(self, spec3_infinite):
        from clq.objective import ObjectiveContext
        from clq.solver import minimize
        fp = solve_infinite(spec3_infinite, eps=1e-10)
        model, cost, con = fp.model, fp.cost, fp.constraint
        ctx = ObjectiveContext.build(model, cost, None,
                                     y_next=fp.ghat_star, z_next=fp.gbar_star)
        gh = minimize(ctx, "ghat", con).value
        gb = minimize(ctx, "gbar", con).value
        assert abs(gh - fp.ghat_star) <= 1e-9
        assert abs(gb - fp.gbar_star) <= 1e-9

    def test_divergence_flag(self):
        fp = solve_infinite(scalar_spec(3.0, 4.0))
        assert fp.diverged and not fp.converged
        assert fp.khat_star is None
        assert np.max(fp.iterates) > 1e6

    def test_lower_coupling_dichotomy(self):
        conv = solve_infinite(scalar_spec(2.0, 3.0), coupling="lower")
        div = solve_infinite(scalar_spec(3.0, 4.0), coupling="lower")
        assert conv.converged and not conv.diverged
        assert div.diverged

    def test_rejects_finite_spec(self, spec3_finite):
        with pytest.raises(ValueError):
            solve_infinite(spec3_finite)

    def test_rejects_markov(self, spec3_markov, markov3, cost3, box3):
        spec = ProblemSpec(model=markov3, costs=(cost3,), q_T=0.0,
                           constraints=(box3,), horizon=None, x0=1.0)
        with pytest.raises(ValueError):
            solve_infinite(spec)


class TestThreshold:
    def test_scalar_benchmark(self):
        rep = check_threshold(scalar_spec(2.0, 3.0))
        assert rep.classical_threshold == pytest.approx(0.4014, abs=1e-4)
        assert rep.eta == pytest.approx(0.53, abs=1e-12)
        assert rep.k_set_bounded

    def test_sufficient_condition_box34(self):
        rep = check_threshold(scalar_spec(3.0, 4.0))
        # E[A^2] = 0.402, eta = E[B^2] = 0.53, K_max = 4
        assert rep.k_max == pytest.approx(4.0, abs=1e-12)
        assert rep.sufficient_lhs == pytest.approx(0.402 + 0.53 * 4.0, abs=1e-9)
        assert not rep.holds

    def test_contractive_deterministic_system(self):
        model = ScenarioSet(a=[0.8], b=[[1.0]], p=[1.0])
        con = ConstraintSpec.box([0.0], [0.0])   # gain pinned at zero
        spec = ProblemSpec(model=model, costs=(CostSpec([[1.0]], [0.0], 1.0),),
                           q_T=0.0, constraints=(con,), horizon=None, x0=1.0)
        rep = check_threshold(spec)
        assert rep.k_max == 0.0
        assert rep.sufficient_lhs == pytest.approx(0.64, abs=1e-12)
        assert rep.holds

    def test_unbounded_set_requires_user_bound(self, model1):
        spec = ProblemSpec(model=model1, costs=(CostSpec([[1.0]], [0.0], 1.0),),
                           q_T=0.0, constraints=(ConstraintSpec.nonneg(1),),
                           horizon=None, x0=1.0)
        rep = check_threshold(spec)
        assert not rep.k_set_bounded and np.isinf(rep.k_max) and not rep.holds
        rep2 = check_threshold(spec, k_max=0.5)
        assert rep2.sufficient_lhs == pytest.approx(0.402 + 0.53 * 0.5)
        assert rep2.holds
