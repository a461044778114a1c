import numpy as np
import pytest

from socfem import (
    InvalidStateError,
    OptimizerConfig,
    Trajectory,
    assemble,
    constraint_integral,
    contraction_certificate,
    example1,
    gp_iterate,
    make_interval_mesh,
    make_time_grid,
    sample,
    select_multiplier,
)
from socfem.analysis import Resolution, setup
from socfem.optimizer import GradientProjection


@pytest.fixture(scope="module")
def coarse():
    prob = example1()
    system, grid = setup(prob, Resolution(16, 16))
    return prob, system, grid


class TestConstraintIntegral:
    def test_zero(self, coarse):
        _, system, grid = coarse
        assert constraint_integral(Trajectory.zeros(grid, system.n), system, grid) == 0.0

    def test_constant_in_time(self, coarse):
        _, system, grid = coarse
        rng = np.random.default_rng(0)
        v = rng.normal(size=system.n)
        traj = Trajectory(np.tile(v, (grid.N + 1, 1)), grid)
        expected = grid.T * (system.ones_load @ v)
        assert constraint_integral(traj, system, grid) == pytest.approx(expected, rel=1e-13)

    def test_exact_state_means_near_delta(self, coarse):
        prob, system, grid = coarse
        pts = system.mesh.interior_nodes
        vals = np.stack([prob.exact_x(t, pts, 0.0) for t in grid.times])
        integral = constraint_integral(Trajectory(vals, grid), system, grid)
        # right-endpoint rule + interpolation leave an O(h + tau) gap
        assert abs(integral - prob.spec.delta) <= grid.tau + system.mesh.h**2


class TestSelectMultiplier:
    def test_feasible_half_step(self):
        assert select_multiplier(0.1, 0.2, 0.5, 1.0) == 0.0

    def test_formula(self):
        assert select_multiplier(0.25, 0.2, 0.5, 1.0) == pytest.approx(0.1, rel=1e-15)

    def test_nonpositive_denominator(self):
        with pytest.raises(InvalidStateError):
            select_multiplier(0.25, 0.2, 0.5, 0.0)
        with pytest.raises(InvalidStateError):
            select_multiplier(0.25, 0.2, -1.0, 1.0)


class TestCertificate:
    def test_first_branch(self):
        assert contraction_certificate(1.0, 1.0, 0.2) == pytest.approx(0.8, rel=1e-14)

    def test_second_branch(self):
        f = 0.09 * 2.0 * (1.0 + 2.0 * np.e) - 0.3 * 4.0 + 1.0
        assert 0.0 < f < 1.0
        assert contraction_certificate(1.0, 1.0, 0.3) == pytest.approx(np.sqrt(f), rel=1e-13)

    def test_rejection(self):
        assert 0.5 >= 2.0 / (1.0 + 2.0 * np.e)
        assert contraction_certificate(1.0, 1.0, 0.5) is None
        assert contraction_certificate(1.0, 1.0, -0.1) is None


class TestProjection:
    def test_active_case_pins_integral(self, coarse):
        prob, system, grid = coarse
        loop = GradientProjection(prob.spec, system, grid)
        rng = np.random.default_rng(1)
        control = Trajectory(rng.normal(size=(grid.N + 1, system.n)), grid)
        u_proj, x_proj, mu = loop.project(control)
        if mu > 0.0:
            integral = constraint_integral(x_proj, system, grid)
            assert abs(integral - prob.spec.delta) <= 1e-8
        assert constraint_integral(x_proj, system, grid) <= prob.spec.delta + 1e-8

    def test_feasible_control_untouched(self, coarse):
        prob, system, grid = coarse
        loop = GradientProjection(prob.spec, system, grid)
        control = Trajectory(np.full((grid.N + 1, system.n), -5.0), grid)
        u_proj, _, mu = loop.project(control)
        assert mu == 0.0
        assert np.array_equal(u_proj.values, control.values)

    def test_nonexpansiveness(self, coarse):
        prob, system, grid = coarse
        loop = GradientProjection(prob.spec, system, grid)
        rng = np.random.default_rng(2)
        for _ in range(20):
            v = Trajectory(rng.normal(size=(grid.N + 1, system.n)), grid)
            p = Trajectory(rng.normal(size=(grid.N + 1, system.n)), grid)
            pv, _, _ = loop.project(v)
            pp, _, _ = loop.project(p)
            lhs = loop.step_norm(pv.values - pp.values)
            rhs = loop.step_norm(v.values - p.values)
            assert lhs <= rhs + 1e-9


class TestGpIterate:
    def test_converges_and_stays_feasible(self, coarse):
        prob, system, grid = coarse
        res = gp_iterate(prob.spec, system, grid, OptimizerConfig(eps0=1e-6))
        assert res.converged
        assert res.mu >= 0.0
        for rec in res.records:
            assert rec.constraint_integral <= prob.spec.delta + 1e-8
            assert rec.step_error >= 0.0
            assert rec.mu >= 0.0

    def test_fixed_point_exits_immediately(self, coarse):
        prob, system, grid = coarse
        first = gp_iterate(prob.spec, system, grid, OptimizerConfig(eps0=1e-10, max_iter=400))
        assert first.converged
        again = gp_iterate(
            prob.spec, system, grid, OptimizerConfig(eps0=1e-8, u0=first.control)
        )
        assert again.iterations == 1
        assert again.records[0].step_error <= 1e-8

    def test_slack_constraint_keeps_mu_zero(self, coarse):
        prob, system, grid = coarse
        from dataclasses import replace

        spec = replace(prob.spec, delta=10.0)
        res = gp_iterate(spec, system, grid, OptimizerConfig(eps0=1e-8))
        assert res.converged
        assert all(rec.mu == 0.0 for rec in res.records)
        integral = res.records[-1].constraint_integral
        assert abs(integral - 1 / np.pi) <= grid.tau + system.mesh.h

    def test_monotone_cost_with_certified_rho(self, coarse):
        prob, system, grid = coarse
        res = gp_iterate(prob.spec, system, grid, OptimizerConfig(rho=0.2, eps0=1e-9))
        costs = [rec.cost for rec in res.records]
        assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))

    def test_max_iter_reports_nonconverged(self, coarse):
        prob, system, grid = coarse
        res = gp_iterate(prob.spec, system, grid, OptimizerConfig(eps0=1e-14, max_iter=3))
        assert not res.converged
        assert res.iterations == 3

    def test_adjoint_consistent_with_optimality(self, coarse):
        # at convergence alpha*u + ytilde + mu*mtilde = 0, so the full
        # adjoint equals -alpha*u
        prob, system, grid = coarse
        res = gp_iterate(prob.spec, system, grid, OptimizerConfig(eps0=1e-11, max_iter=400))
        gap = res.adjoint_mean.values[: grid.N] + prob.spec.alpha * res.control.values[: grid.N]
        assert np.abs(gap).max() <= 1e-9

    def test_monte_carlo_estimator_matches_mean_field_without_noise(self):
        prob = example1(beta=0.0)  # zero noise: every path equals the mean
        system, grid = setup(prob, Resolution(12, 12))
        ens = sample(8, grid, seed=4)
        mf = gp_iterate(prob.spec, system, grid, OptimizerConfig(eps0=1e-8))
        mc = gp_iterate(
            prob.spec, system, grid, OptimizerConfig(eps0=1e-8),
            estimator="monte-carlo", ensemble=ens,
        )
        assert mc.iterations == mf.iterations
        assert np.abs(mc.control.values - mf.control.values).max() <= 1e-10
        assert mc.mu == pytest.approx(mf.mu, rel=1e-8)

    def test_monte_carlo_requires_ensemble(self, coarse):
        prob, system, grid = coarse
        with pytest.raises(ValueError):
            gp_iterate(
                prob.spec, system, grid, OptimizerConfig(), estimator="monte-carlo"
            )

    def test_unknown_estimator(self, coarse):
        prob, system, grid = coarse
        with pytest.raises(ValueError):
            gp_iterate(prob.spec, system, grid, OptimizerConfig(), estimator="exact")


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs", [dict(rho=0.0), dict(eps0=0.0), dict(max_iter=0)]
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerConfig(**kwargs)
