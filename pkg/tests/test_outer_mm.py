import numpy as np
import pytest

from dist_alm import (ConfigurationError, InnerConfig,
                      MultiplierEstimate, OuterConfig, PreconditionError,
                      StructureError, ToyParams, default_start, dual_update,
                      eval_constraints, generate_toy, run_inner, run_outer,
                      toy_initial_guess)
from conftest import mu_like, zvec


class TestDualUpdate:
    def test_arithmetic(self, one_agent):
        mu = mu_like(one_agent, [1.0])
        out = dual_update(mu, 10.0, np.array([0.1]))
        np.testing.assert_allclose(out.flatten(), [2.0])

    def test_feasible_point_leaves_mu_unchanged(self, one_agent):
        mu = mu_like(one_agent, [0.7])
        out = dual_update(mu, 123.0, np.array([0.0]))
        np.testing.assert_array_equal(out.flatten(), [0.7])

    def test_vector_case_preserves_partition(self):
        mu = MultiplierEstimate([np.zeros(1), np.zeros(1)], np.zeros(0))
        out = dual_update(mu, 0.1, np.array([-1.0, 0.5]))
        np.testing.assert_allclose(out.part(0), [-0.1])
        np.testing.assert_allclose(out.part(1), [0.05])

    def test_length_mismatch(self, one_agent):
        with pytest.raises(StructureError):
            dual_update(mu_like(one_agent, [0.0]), 1.0, np.zeros(2))


class TestSchedule:
    def test_closed_form_matches_bitwise(self):
        cfg = OuterConfig(rho0=2.0, beta=3.0, eps0=0.5, eta=1e-9)
        for k in range(11):
            rho, eps = cfg.schedule(k)
            assert rho == 2.0 * 3.0 ** k
            assert eps == min(0.5, 0.5 / (2.0 ** k * 3.0 ** (k * (k - 1) // 2)))

    def test_eps_capped_when_rho0_below_one(self):
        cfg = OuterConfig(rho0=0.1, beta=100.0, eps0=1e-2, eta=1e-9)
        _, eps1 = cfg.schedule(1)
        assert eps1 == 1e-2  # the uncapped update would increase eps
        _, eps2 = cfg.schedule(2)
        assert eps2 < 1e-2

    def test_paper_rho_sequence(self):
        cfg = OuterConfig(rho0=0.1, beta=100.0, eps0=1e-2, eta=1e-9)
        rhos = [cfg.schedule(k)[0] for k in range(3)]
        np.testing.assert_allclose(rhos, [0.1, 10.0, 1000.0], rtol=1e-12)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            OuterConfig(rho0=0.0, beta=10.0, eps0=1.0, eta=1e-6)
        with pytest.raises(ConfigurationError):
            OuterConfig(rho0=1.0, beta=1.0, eps0=1.0, eta=1e-6)
        with pytest.raises(ConfigurationError):
            OuterConfig(rho0=1.0, beta=2.0, eps0=1.0, eta=1e-6,
                        constraint_norm="three")


class TestRunOuter:
    def outer_cfg(self, **kw):
        base = dict(rho0=1.0, beta=10.0, eps0=0.1, eta=1e-8, max_outer=30)
        base.update(kw)
        return OuterConfig(**base)

    def inner_cfg(self, **kw):
        base = dict(tau=1e-14, max_sweeps=5000)
        base.update(kw)
        return InnerConfig(**base)

    def test_feasible_critical_start_converges_immediately(self, one_agent):
        state, status = run_outer(one_agent, self.outer_cfg(), self.inner_cfg(),
                                  zvec([1.0]), mu_like(one_agent, [-1.0]))
        assert status == "converged"
        assert state.k == 1 and state.trace[0].sweeps == 0
        np.testing.assert_array_equal(state.z.block(0), [1.0])
        np.testing.assert_array_equal(state.mu.flatten(), [-1.0])

    def test_one_agent_analytic_kkt(self, one_agent):
        state, status = run_outer(one_agent,
                                  self.outer_cfg(eta=1e-6), self.inner_cfg(),
                                  zvec([2.0]), MultiplierEstimate.zeros(one_agent))
        assert status == "converged"
        x = state.z.block(0)[0]
        mu = state.mu.part(0)[0]
        assert abs(x - 1.0) <= 1e-4
        assert abs(mu + 1.0) <= 1e-4

    def test_trace_appended_once_per_iteration(self, one_agent):
        state, _ = run_outer(one_agent, self.outer_cfg(eta=1e-6),
                             self.inner_cfg(), zvec([2.0]))
        assert [t.k for t in state.trace] == list(range(state.k))
        assert state.trace[-1].cum_sweeps == sum(t.sweeps for t in state.trace)

    def test_matches_manual_inner_dual_chain(self, one_agent):
        cfg = self.outer_cfg(eta=1e-30, max_outer=3)
        icfg = self.inner_cfg()
        state, _ = run_outer(one_agent, cfg, icfg, zvec([2.0]))
        z = zvec([2.0])
        mu = MultiplierEstimate.zeros(one_agent)
        for k in range(3):
            rho, eps = cfg.schedule(k)
            inner = run_inner(one_agent, z, mu, rho, icfg, eps_target=eps)
            z = inner.z
            mu = dual_update(mu, rho, eval_constraints(one_agent, z))
        np.testing.assert_array_equal(state.z.flatten(), z.flatten())
        np.testing.assert_array_equal(state.mu.flatten(), mu.flatten())

    def test_dual_estimates_approach_analytic_multiplier(self, one_agent):
        cfg = self.outer_cfg(eta=1e-12, max_outer=8)
        icfg = self.inner_cfg()
        z = zvec([2.0])
        mu = MultiplierEstimate.zeros(one_agent)
        dists = []
        for k in range(6):
            rho, eps = cfg.schedule(k)
            inner = run_inner(one_agent, z, mu, rho, icfg, eps_target=eps)
            z = inner.z
            h_val = eval_constraints(one_agent, z)
            mu = dual_update(mu, rho, h_val)  # mu_tilde of this iteration
            dists.append(abs(mu.flatten()[0] + 1.0))
        for prev, cur in zip(dists[2:], dists[3:]):
            assert cur <= prev + 1e-12

    def test_iteration_cap_status(self, one_agent):
        state, status = run_outer(one_agent, self.outer_cfg(max_outer=1, eta=1e-12),
                                  self.inner_cfg(), zvec([2.0]))
        assert status == "iteration_cap"
        assert state.k == 1

    def test_inner_failure_status_on_zero_budget(self, one_agent):
        state, status = run_outer(one_agent,
                                  self.outer_cfg(max_outer=2, eta=1e-12),
                                  self.inner_cfg(), zvec([2.0]),
                                  sweep_budgets=[0, 0])
        assert status == "inner_failure"
        assert all(not t.inner_achieved for t in state.trace)

    def test_default_start_is_box_midpoint(self, one_agent):
        z = default_start(one_agent)
        np.testing.assert_array_equal(z.block(0), [0.0])

    def test_infeasible_start_rejected(self, one_agent):
        with pytest.raises(PreconditionError):
            run_outer(one_agent, self.outer_cfg(), self.inner_cfg(), zvec([2.5]))

    def test_wrong_mu_dimension_rejected(self, one_agent):
        with pytest.raises(StructureError):
            run_outer(one_agent, self.outer_cfg(), self.inner_cfg(), zvec([2.0]),
                      MultiplierEstimate([np.zeros(2)], np.zeros(0)))

    def test_converged_toy_is_feasible(self):
        params = ToyParams(n_agents=5, block_dim=3, scale=2.0, seed=33)
        problem = generate_toy(params)
        z0, mu0 = toy_initial_guess(params, problem)
        cfg = OuterConfig(rho0=0.1, beta=100.0, eps0=1e-2, eta=1e-6, max_outer=6)
        icfg = InnerConfig(tau=1e-12, max_sweeps=3000)
        state, status = run_outer(problem, cfg, icfg, z0, mu0,
                                  with_certificates=False)
        assert status == "converged"
        assert state.trace[-1].h_inf <= 1e-6
        assert problem.feasible(state.z, slack=1e-10)

    def test_converged_oracle_is_approximately_kkt(self, one_agent):
        # on the one-agent problem the eps schedule stays reachable, so the
        # returned point satisfies both halves of the approximate KKT claim
        state, status = run_outer(one_agent, self.outer_cfg(), self.inner_cfg(),
                                  zvec([2.0]))
        assert status == "converged"
        last = state.trace[-1]
        assert last.h_inf <= self.outer_cfg().eta
        assert last.residual <= last.eps and last.inner_achieved
