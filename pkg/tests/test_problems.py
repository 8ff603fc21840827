import numpy as np
import pytest

from proxmetric.problems import (HOVER_THRUST, QUAD_Q, QUAD_R, PriceCsvError, PortfolioFamily,
                                 QuadcopterModel, ToyFamily, ingest_prices_csv, portfolio_instance,
                                 quadcopter_instance, rollout, synth_portfolio_family, toy_instance)
from proxmetric.qp import active_set_oracle_solve, kkt_check, reformulate
from proxmetric.solvers import solve_to_tolerance


def test_toy_instance_rows():
    p = toy_instance(0.5, -1.0)
    assert p.n == 2 and p.m_eq == 0 and p.k_in == 4
    assert np.array_equal(p.Q, 2 * np.eye(2)) and not p.q.any()
    x = np.array([0.2, 0.3])
    # x + y >= p1, x + y <= p1 + 1, x - y <= 1 - p2, x - y >= -p2
    expected = [0.5 - 0.5, 0.5 - 1.5, -0.1 - 2.0, 1.0 + 0.1]
    assert np.allclose(p.W @ x + p.c, expected)


def test_toy_examples():
    assert np.allclose(active_set_oracle_solve(toy_instance(0, 0)).x_star, 0)
    assert np.allclose(active_set_oracle_solve(toy_instance(1, 1)).x_star, [0.5, 0.5])


def test_toy_sweep_traces_constraints():
    for p in np.linspace(-1.25, 1.25, 11):
        rec = active_set_oracle_solve(toy_instance(p, p))
        if np.linalg.norm(rec.x_star) > 1e-9:
            assert rec.active_mask.any()


def test_toy_family_sampling():
    params = ToyFamily().sample(np.random.default_rng(0), 500)
    assert params.shape == (500, 2)
    assert params.min() >= -2 and params.max() <= 2


def test_synth_portfolio_family():
    fam = synth_portfolio_family(20, seed=3)
    assert np.linalg.eigvalsh(fam.Sigma).min() >= 0.05
    again = synth_portfolio_family(20, seed=3)
    assert np.array_equal(fam.Sigma, again.Sigma) and np.array_equal(fam.base_mu, again.base_mu)
    with pytest.raises(ValueError):
        synth_portfolio_family(1)


@pytest.mark.parametrize("budget", [1.0, 10.0])
def test_portfolio_instance(budget):
    fam = synth_portfolio_family(8, budget=budget, seed=1)
    p = fam.sample(np.random.default_rng(0), 1)[0]
    prob = portfolio_instance(fam, p)
    assert np.allclose(prob.Q, 2 * fam.Sigma) and np.allclose(prob.q, -p)
    assert prob.m_eq == 1 and prob.k_in == 8
    x = active_set_oracle_solve(prob).x_star
    assert x.sum() == pytest.approx(budget)


def test_portfolio_symmetric_optimum():
    n, budget = 6, 10.0
    fam = PortfolioFamily(np.eye(n), np.zeros(n), 0.1, budget)
    p = np.full(n, 2 * budget / n)
    x = active_set_oracle_solve(portfolio_instance(fam, p)).x_star
    assert np.allclose(x, budget / n)


def test_ingest_prices(tmp_path):
    f = tmp_path / "prices.csv"
    f.write_text("A,B\n1,1\n2,3\n")
    Sigma, mu = ingest_prices_csv(f)
    assert np.allclose(mu, [1, 2])
    assert np.allclose(Sigma, 1e-8 * np.eye(2))
    f.write_text("A,B\n5,2\n5,2\n5,2\n")
    assert np.array_equal(ingest_prices_csv(f)[1], [0.0, 0.0])


@pytest.mark.parametrize("body", ["A,B\n1,1\n2\n", "A,B\n1,1\n", "A,B\n1,x\n2,3\n", ""])
def test_ingest_prices_errors(tmp_path, body):
    f = tmp_path / "prices.csv"
    f.write_text(body)
    with pytest.raises(PriceCsvError):
        ingest_prices_csv(f)


def test_quadcopter_appendix_values():
    assert np.array_equal(QUAD_Q, [0, 0, 10, 10, 10, 10, 0, 0, 0, 5, 5, 5])
    assert np.array_equal(QUAD_R, [0.1] * 4)
    m = QuadcopterModel()
    assert np.allclose(m.u_a, -0.9916) and np.allclose(m.u_b, 2.4084)
    assert np.allclose(m.u_a, 9.6 - HOVER_THRUST)
    assert list(m.bounded_states) == [0, 1]


def test_quadcopter_counts():
    m = QuadcopterModel(horizon=10)
    n, eq, ineq = m.counts
    assert (n, eq, ineq) == (176, 132, 132)
    prob = quadcopter_instance(m, np.zeros(12))
    assert (prob.n, prob.m_eq, prob.k_in) == (n, eq, ineq)
    assert reformulate(prob).d == n + ineq


def test_quadcopter_equalities_reproduce_rollout():
    m = QuadcopterModel(horizon=5)
    rng = np.random.default_rng(0)
    p = m.sample(rng, 1)[0]
    controls = rng.uniform(-0.5, 0.5, (m.horizon + 1, 4))
    states = rollout(m, p, controls)
    x = np.concatenate([states.ravel(), controls.ravel()])
    assert np.array_equal(x[m.state_slice(2)], states[1])
    assert np.array_equal(x[m.control_slice(3)], controls[3])
    prob = quadcopter_instance(m, p)
    assert np.max(np.abs(prob.L @ x - prob.b)) <= 1e-10


def test_quadcopter_reference_fixed_point():
    m = QuadcopterModel(horizon=5)
    prob = quadcopter_instance(m, np.zeros(12))
    sq = reformulate(prob)
    x, done, _ = solve_to_tolerance(sq)
    assert done and np.max(np.abs(x)) < 1e-6
    assert prob.objective(x) == pytest.approx(0.0, abs=1e-10)


def test_quadcopter_sampled_instances_feasible():
    m = QuadcopterModel(horizon=5)
    params = m.sample(np.random.default_rng(1), 5)
    assert np.all(np.abs(params[:, :2]) <= np.pi / 6) and np.all(np.abs(params[:, 2:]) <= 0.8)
    for p in params:
        prob = quadcopter_instance(m, p)
        x, done, _ = solve_to_tolerance(reformulate(prob))
        assert done and kkt_check(prob, x, 1e-6)
