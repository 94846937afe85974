import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dist_alm import (AgentSpec, BlockVector, MultiplierEstimate, NlpProblem,
                      Polytope, PreconditionError, RefusalError, ToyParams,
                      brute_force_min, criticality_residual, fd_gradient_check,
                      generate_toy, kkt_report, regularity_check)
from conftest import linear_agent, mu_like, one_agent_problem, quadratic_agent, zvec


def gradient_probe_problem(c_vec, lo, hi):
    """Linear cost so the augmented-Lagrangian gradient is exactly c_vec."""
    return NlpProblem(agents=(linear_agent(c_vec, lo, hi),))


class TestCriticalityResidual:
    def test_interior_point_full_gradient(self):
        problem = gradient_probe_problem([3.0, -4.0], [-10, -10], [10, 10])
        res = criticality_residual(problem, zvec([0.0, 0.0]),
                                   MultiplierEstimate.zeros(problem), 1.0)
        assert res == pytest.approx(5.0, abs=1e-12)

    def test_outward_gradient_at_upper_bound_absorbed(self):
        problem = gradient_probe_problem([-3.0], [-2.0], [2.0])
        res = criticality_residual(problem, zvec([2.0]),
                                   MultiplierEstimate.zeros(problem), 1.0)
        assert res == pytest.approx(0.0, abs=1e-12)

    def test_inward_gradient_at_upper_bound_remains(self):
        problem = gradient_probe_problem([3.0], [-2.0], [2.0])
        res = criticality_residual(problem, zvec([2.0]),
                                   MultiplierEstimate.zeros(problem), 1.0)
        assert res == pytest.approx(3.0, abs=1e-12)

    def test_zero_at_analytic_kkt_point(self):
        problem = one_agent_problem()
        res = criticality_residual(problem, zvec([1.0]),
                                   mu_like(problem, [-1.0]), 13.0)
        assert res <= 1e-10

    def test_point_outside_polytope_rejected(self):
        problem = gradient_probe_problem([1.0], [-1.0], [1.0])
        with pytest.raises(PreconditionError):
            criticality_residual(problem, zvec([1.5]),
                                 MultiplierEstimate.zeros(problem), 1.0)

    @settings(max_examples=40, deadline=None)
    @given(
        g=st.tuples(st.floats(-4, 4), st.floats(-4, 4)),
        x=st.tuples(st.floats(-1, 1), st.floats(-1, 1)),
    )
    def test_box_closed_form_matches_nnls(self, g, x):
        lo, hi = [-1.0, -1.0], [1.0, 1.0]
        as_box = gradient_probe_problem(g, lo, hi)
        eye = np.eye(2)
        rows = Polytope(a_mat=np.vstack([eye, -eye]),
                        b_vec=np.array([1.0, 1.0, 1.0, 1.0]))
        as_rows = NlpProblem(agents=(
            AgentSpec(cost=as_box.agents[0].cost,
                      cost_grad=as_box.agents[0].cost_grad,
                      feasible_set=rows),
        ))
        z = zvec(np.clip(x, lo, hi))
        mu_box = MultiplierEstimate.zeros(as_box)
        r_box = criticality_residual(as_box, z, mu_box, 1.0)
        r_rows = criticality_residual(as_rows, z, mu_box, 1.0)
        assert r_rows == pytest.approx(r_box, abs=1e-9)

    def test_activating_constraints_never_increases_distance(self):
        problem = gradient_probe_problem([-3.0, 1.0], [-2.0, -2.0], [2.0, 2.0])
        mu = MultiplierEstimate.zeros(problem)
        interior = criticality_residual(problem, zvec([0.0, 0.0]), mu, 1.0)
        at_bound = criticality_residual(problem, zvec([2.0, 0.0]), mu, 1.0)
        assert at_bound <= interior + 1e-12


class TestFdGradientCheck:
    def test_quadratic_is_exact_to_roundoff(self):
        problem = NlpProblem(agents=(
            quadratic_agent([[3.0, 0.5], [0.5, 1.0]], [-2, -2], [2, 2]),
        ))
        err = fd_gradient_check(problem, zvec([0.3, -0.7]),
                                MultiplierEstimate.zeros(problem), 1.0, h=1e-5)
        assert err <= 1e-7

    def test_linear_cost_is_exact(self):
        problem = gradient_probe_problem([2.0, -1.0], [-5, -5], [5, 5])
        err = fd_gradient_check(problem, zvec([0.1, 0.2]),
                                MultiplierEstimate.zeros(problem), 1.0)
        assert err <= 1e-10

    def test_toy_instance_under_1e5(self):
        params = ToyParams(n_agents=3, block_dim=3, scale=2.0, seed=21)
        problem = generate_toy(params)
        rng = np.random.default_rng(2)
        z = BlockVector([rng.uniform(-1.0, 1.0, 3) for _ in range(3)])
        mu = mu_like(problem, rng.uniform(-1, 1, problem.r))
        assert fd_gradient_check(problem, z, mu, rho=4.0) <= 1e-5

    def test_boundary_margin_precondition(self):
        problem = gradient_probe_problem([1.0], [-1.0], [1.0])
        with pytest.raises(PreconditionError):
            fd_gradient_check(problem, zvec([1.0]),
                              MultiplierEstimate.zeros(problem), 1.0)


class TestBruteForce:
    def test_one_agent_analytic_optimum(self):
        problem = one_agent_problem()
        z_best, value = brute_force_min(problem, grid_step=1e-3,
                                        feasibility_band=1e-2)
        x = z_best.block(0)[0]
        # the band |x^2 - 1| <= 1e-2 spans ~5e-3 around +-1 in x, and the
        # grid minimum legitimately sits at the band edge
        assert min(abs(x - 1.0), abs(x + 1.0)) <= 5.1e-3
        assert value == pytest.approx(1.0, abs=1e-2)

    def test_tight_band_pins_the_manifold(self):
        problem = one_agent_problem()
        z_best, value = brute_force_min(problem, grid_step=1e-3,
                                        feasibility_band=2e-3)
        x = z_best.block(0)[0]
        assert min(abs(x - 1.0), abs(x + 1.0)) <= 1e-3 + 1e-12
        assert value == pytest.approx(1.0, abs=2.1e-3)

    def test_quadratic_on_box_matches_qp(self):
        from dist_alm import ProxQp, solve_prox_qp

        m_mat = np.array([[3.0, 0.0], [0.0, 1.0]])
        g = np.array([0.3, -0.2])
        problem = NlpProblem(agents=(
            AgentSpec(
                cost=lambda x: float(g @ x + 0.5 * x @ m_mat @ x),
                cost_grad=lambda x: g + m_mat @ x,
                feasible_set=Polytope.box([-0.3, -0.3], [0.3, 0.3]),
            ),
        ))
        _, grid_val = brute_force_min(problem, grid_step=1e-3)
        qp = ProxQp(g=g, m_mat=m_mat, center=np.zeros(2),
                    feasible_set=Polytope.box([-0.3, -0.3], [0.3, 0.3]))
        x_qp, _, _ = solve_prox_qp(qp)
        assert abs(qp.objective(x_qp) - grid_val) <= 1e-3

    def test_lagrangian_mode(self):
        problem = one_agent_problem()
        z_best, value = brute_force_min(problem, grid_step=1e-3,
                                        mu=mu_like(problem, [0.0]), rho=1.0)
        # L_1(x, 0) = 0.5 x^4 + 0.5, minimised at 0
        assert abs(z_best.block(0)[0]) <= 1e-3 + 1e-12
        assert value == pytest.approx(0.5, abs=1e-2)

    def test_dimension_refusal(self):
        params = ToyParams(n_agents=2, block_dim=3, scale=4.0, seed=0)
        with pytest.raises(RefusalError):
            brute_force_min(generate_toy(params), 1e-2, feasibility_band=1e-1)

    def test_empty_band_refusal(self):
        # d=1 at scale 2: the sphere radius exceeds the box, band is empty
        params = ToyParams(n_agents=2, block_dim=1, scale=2.0, seed=0)
        with pytest.raises(RefusalError):
            brute_force_min(generate_toy(params), 1e-3, feasibility_band=1e-2)

    def test_band_required_with_constraints(self):
        from dist_alm import ConfigurationError

        with pytest.raises(ConfigurationError):
            brute_force_min(one_agent_problem(), 1e-3)


class TestRegularity:
    def test_nonzero_scalar_gradient_is_regular(self):
        problem = one_agent_problem()
        assert regularity_check(problem, zvec([1.0]))

    def test_zero_gradient_is_not_regular(self):
        problem = one_agent_problem()
        assert not regularity_check(problem, zvec([0.0]))

    def test_toy_feasible_point_is_regular(self):
        params = ToyParams(n_agents=4, block_dim=3, scale=2.0, seed=9)
        problem = generate_toy(params)
        coord = params.sphere_radius / np.sqrt(3.0)
        z = BlockVector([np.full(3, coord) for _ in range(4)])
        assert regularity_check(problem, z)

    def test_more_rows_than_variables(self):
        problem = NlpProblem(agents=(
            AgentSpec(
                cost=lambda x: 0.0, cost_grad=lambda x: np.zeros(1),
                feasible_set=Polytope.box([-1.0], [1.0]),
                constraint=lambda x: np.array([x[0], x[0] + 1.0]),
                constraint_jac=lambda x: np.array([[1.0], [1.0]]),
                constraint_dim=2,
            ),
        ))
        assert not regularity_check(problem, zvec([0.0]))

    def test_scale_invariance_of_the_boolean(self):
        base = one_agent_problem()
        for c in (1e-3, 1.0, 1e4):
            scaled = NlpProblem(agents=(
                AgentSpec(
                    cost=base.agents[0].cost,
                    cost_grad=base.agents[0].cost_grad,
                    feasible_set=base.agents[0].feasible_set,
                    constraint=lambda x, _c=c: _c * np.array([x[0] ** 2 - 1.0]),
                    constraint_jac=lambda x, _c=c: _c * np.array([[2.0 * x[0]]]),
                    constraint_dim=1,
                ),
            ))
            assert regularity_check(scaled, zvec([1.0])) == \
                regularity_check(base, zvec([1.0]))
            assert regularity_check(scaled, zvec([0.0])) == \
                regularity_check(base, zvec([0.0]))


class TestKktReport:
    def test_multipliers_nonnegative_and_complementary(self):
        problem = gradient_probe_problem([-3.0, 1.0], [-2.0, -2.0], [2.0, 2.0])
        report = kkt_report(problem, zvec([2.0, 0.0]),
                            MultiplierEstimate.zeros(problem), 1.0)
        assert np.all(report.multipliers >= -1e-12)
        active = set(report.active_rows.tolist())
        for row, lam in enumerate(report.multipliers):
            if row not in active:
                assert lam == 0.0
        # outward gradient at the active upper bound is fully absorbed
        assert report.multipliers[0] == pytest.approx(3.0, abs=1e-12)
        assert report.stationarity == pytest.approx(1.0, abs=1e-12)
