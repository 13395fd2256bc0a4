import numpy as np
import pytest

from clq import (ConstraintSpec, CostSpec, InfeasibleError, ScenarioSet,
                 SolverConfig, UnboundedBelowError, ValuePair,
                 brute_force_oracle, minimize, project)
from clq.objective import ObjectiveContext, unconstrained_gain
from clq.solver import DimensionTooLargeError, NonBoxConstraintError

from conftest import random_psd_cost, random_scenario_set


def ctx_of(model, cost, y, z):
    return ObjectiveContext.build(model, cost, ValuePair(y, z))


class TestProjection:
    def test_box_clipping(self):
        con = ConstraintSpec.box([0.0, -1.0], [1.0, 1.0])
        np.testing.assert_allclose(project(con, [2.0, -3.0]), [1.0, -1.0])
        np.testing.assert_allclose(project(con, [0.4, 0.2]), [0.4, 0.2])

    def test_general_polyhedron(self):
        rng = np.random.default_rng(0)
        con = ConstraintSpec([[1.0, 1.0], [-1.0, 2.0], [0.0, -1.0]],
                             [1.0, 0.5, 0.0])
        for _ in range(50):
            v = rng.normal(size=2) * 3
            K = project(con, v)
            assert con.contains(K, tol=1e-9)
            # optimality: projection differences vs a few feasible points
            for _ in range(10):
                w = project(con, rng.normal(size=2) * 3)
                assert np.linalg.norm(v - K) <= np.linalg.norm(v - w) + 1e-9

    def test_projection_idempotent(self):
        con = ConstraintSpec([[1.0, 1.0], [-1.0, 2.0]], [1.0, 0.5])
        v = np.array([5.0, 5.0])
        K = project(con, v)
        np.testing.assert_allclose(project(con, K), K, atol=1e-10)


class TestMinimize:
    def test_benchmark_last_stage(self, model3, cost3, box3):
        ctx = ctx_of(model3, cost3, 1.0, 1.0)
        res = minimize(ctx, "ghat", box3)
        assert res.converged
        np.testing.assert_allclose(res.K_opt, [0.108, 0.100, 0.231], atol=2e-3)
        assert res.value == pytest.approx(1.881, abs=1e-3)
        res_b = minimize(ctx, "gbar", box3)
        np.testing.assert_allclose(res_b.K_opt, [0.100, 0.458, 0.100], atol=2e-3)

    def test_unconstrained_closed_form(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n = int(rng.integers(1, 4))
            model = random_scenario_set(rng, n=n)
            cost = random_psd_cost(rng, n)
            G = float(rng.uniform(0.2, 2.0))
            ctx = ctx_of(model, cost, G, G)
            m = model.moments()
            K_closed = -np.linalg.solve(cost.R + G * m.ebtb, G * m.eab + cost.S)
            res = minimize(ctx, "ghat", ConstraintSpec.unconstrained(n))
            np.testing.assert_allclose(res.K_opt, K_closed, atol=1e-7)

    def test_projected_gradient_fixed_point(self, model3, cost3, box3):
        ctx = ctx_of(model3, cost3, 1.881, 1.76)
        res = minimize(ctx, "gbar", box3)
        assert res.pg_residual <= 1e-9
        assert res.kkt_residual <= 1e-8
        assert box3.contains(res.K_opt)

    def test_unique_minimizer_from_different_starts(self, model3, cost3, box3):
        ctx = ctx_of(model3, cost3, 1.881, 1.76)
        starts = [np.full(3, 0.1), np.full(3, 0.5), np.array([0.1, 0.5, 0.3])]
        sols = [minimize(ctx, "ghat", box3, x0=s).K_opt for s in starts]
        for s in sols[1:]:
            np.testing.assert_allclose(s, sols[0], atol=1e-6)

    def test_monotone_descent(self, model3, cost3, box3):
        cfg = SolverConfig(history=True)
        ctx = ctx_of(model3, cost3, 1.881, 1.76)
        res = minimize(ctx, "ghat", box3, cfg, x0=np.full(3, 0.5))
        hist = np.array(res.f_history)
        assert np.all(np.diff(hist) <= 1e-12)

    def test_active_rows_reported(self, model3, cost3, box3):
        ctx = ctx_of(model3, cost3, 1.881, 1.76)
        res = minimize(ctx, "gbar", box3)
        # K = (0.1, ~0.48, 0.1): lower bounds on coordinates 0 and 2 are tight
        lo, hi = box3.box_bounds()
        tight = np.isclose(res.K_opt, lo) | np.isclose(res.K_opt, hi)
        assert tight.sum() == len(res.active_rows)

    def test_unbounded_below(self):
        model = ScenarioSet(a=[0.0, 0.0], b=[[1.0], [-1.0]], p=[0.5, 0.5])
        cost = CostSpec([[0.0]], [-1.0], 0.0)   # linear decreasing term
        ctx = ctx_of(model, cost, 0.0, 0.0)
        con = ConstraintSpec([[-1.0]], [-1.0])  # K >= 1, open above
        with pytest.raises(UnboundedBelowError):
            minimize(ctx, "ghat", con)

    def test_infeasible_set(self, model1):
        cost = CostSpec([[1.0]], [0.0], 1.0)
        ctx = ctx_of(model1, cost, 1.0, 1.0)
        con = ConstraintSpec([[1.0], [-1.0]], [-1.0, 0.0])
        with pytest.raises(InfeasibleError):
            minimize(ctx, "ghat", con)


class TestOracle:
    def test_constant_objective(self):
        model = ScenarioSet(a=[0.0, 0.0], b=[[1.0], [-1.0]], p=[0.5, 0.5])
        cost = CostSpec([[0.0]], [0.0], 0.7)
        ctx = ctx_of(model, cost, 0.0, 0.0)
        con = ConstraintSpec.box([0.0], [1.0])
        res = brute_force_oracle(ctx, "ghat", con, resolution=1e-2)
        assert res.value == pytest.approx(0.7, abs=1e-12)
        assert con.contains(res.K_opt)

    def test_single_scenario_interior_optimum(self):
        model = ScenarioSet(a=[0.5], b=[[1.0]], p=[1.0])
        cost = CostSpec([[1.0]], [0.0], 0.0)
        G = 1.0
        ctx = ctx_of(model, cost, G, G)
        m = model.moments()
        K_closed = -np.linalg.solve(cost.R + G * m.ebtb, G * m.eab + cost.S)
        con = ConstraintSpec.box([-1.0], [1.0])
        assert -1 < K_closed[0] < 1
        res = brute_force_oracle(ctx, "ghat", con, resolution=1e-4)
        assert res.K_opt[0] == pytest.approx(K_closed[0], abs=2e-4)

    def test_n2_toy_matches_minimize(self):
        rng = np.random.default_rng(2)
        model = random_scenario_set(rng, n=2, b_scale=0.3)
        cost = random_psd_cost(rng, 2)
        ctx = ctx_of(model, cost, 0.8, 0.5)
        con = ConstraintSpec.box([-0.2, -0.2], [0.2, 0.2])
        grid = brute_force_oracle(ctx, "ghat", con, resolution=1e-3)
        pg = minimize(ctx, "ghat", con)
        np.testing.assert_allclose(pg.K_opt, grid.K_opt, atol=2e-3)
        assert abs(pg.value - grid.value) <= 1e-6

    def test_rejects_non_box(self):
        model = ScenarioSet(a=[0.5, -0.5], b=[[1.0, 0.0], [0.0, 1.0]], p=[0.5, 0.5])
        cost = CostSpec(np.eye(2), np.zeros(2), 0.0)
        ctx = ctx_of(model, cost, 1.0, 1.0)
        con = ConstraintSpec([[1.0, 1.0]], [1.0])
        with pytest.raises(NonBoxConstraintError):
            brute_force_oracle(ctx, "ghat", con)
        unbounded = ConstraintSpec.nonneg(2)
        with pytest.raises(NonBoxConstraintError):
            brute_force_oracle(ctx, "ghat", unbounded)

    def test_rejects_large_dimension(self):
        rng = np.random.default_rng(3)
        model = random_scenario_set(rng, n=4)
        cost = random_psd_cost(rng, 4)
        ctx = ctx_of(model, cost, 1.0, 1.0)
        con = ConstraintSpec.box([0.0] * 4, [1.0] * 4)
        with pytest.raises(DimensionTooLargeError):
            brute_force_oracle(ctx, "ghat", con)


class TestWarmStart:
    def test_closed_form_start_feasible_after_projection(self, model3, cost3, box3):
        ctx = ctx_of(model3, cost3, 1.881, 1.76)
        K0 = unconstrained_gain(ctx, "ghat")
        assert K0 is not None
        assert box3.contains(project(box3, K0))
