"""Bundle loop invariants, certificates, and end-to-end planted solves."""

import json

import numpy as np
import pytest

from pfbundle import (
    DualPoint,
    OperatingLimits,
    SolverConfig,
    ThreePhaseNetwork,
    build_problem,
    init_state,
    leading_eigenpair,
    penalty_value,
    recover_primal,
    solve,
    step,
)
from pfbundle.oracle import dense_penalty_value


def generous_limits(n_buses):
    m = 3 * n_buses
    return OperatingLimits(
        p_upper=np.full(m, 50.0),
        p_lower=np.full(m, -50.0),
        q_upper=np.full(m, 50.0),
        q_lower=np.full(m, -50.0),
        v_upper=np.full(m, 50.0),
        v_lower=np.zeros(m),
    )


def network_with_flat_matrix(H):
    """Two-bus network whose assembled admittance equals the Hermitian H."""
    blocks = {
        (0, 0): H[0:3, 0:3].copy(),
        (0, 1): H[0:3, 3:6].copy(),
        (1, 0): H[3:6, 0:3].copy(),
        (1, 1): H[3:6, 3:6].copy(),
    }
    net = ThreePhaseNetwork(n_buses=2, blocks=blocks, topology="constructed")
    net.validate()
    return net


def psd_with_null_vector(v_unit, rng, eigenvalues=(1.0, 2.0, 3.0, 4.0, 5.0)):
    """Hermitian PSD matrix with the given unit null vector and known spectrum."""
    dim = v_unit.size
    cols = [v_unit]
    while len(cols) < dim:
        w = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        for q in cols:
            w = w - np.vdot(q, w) * q
        norm = np.linalg.norm(w)
        if norm > 1e-8:
            cols.append(w / norm)
    H = np.zeros((dim, dim), dtype=complex)
    for lam, q in zip(eigenvalues, cols[1:]):
        H += lam * np.outer(q, q.conj())
    return 0.5 * (H + H.conj().T)


def test_solver_config_validation():
    with pytest.raises(ValueError, match="rho"):
        SolverConfig(rho=0.0).validate()
    with pytest.raises(ValueError, match="eta"):
        SolverConfig(eta=1.0).validate()
    with pytest.raises(ValueError, match="eps"):
        SolverConfig(eps=0.0).validate()
    with pytest.raises(ValueError, match="beta"):
        SolverConfig(beta=-1.0).validate()
    with pytest.raises(ValueError, match="max_iters"):
        SolverConfig(max_iters=0).validate()
    cfg = SolverConfig()
    assert (cfg.rho, cfg.eta, cfg.eps, cfg.beta) == (4.0, 0.1, 1e-5, 0.1)
    assert json.dumps(cfg.to_dict())


def test_init_state_builds_linear_model(two_bus, two_bus_planted):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    state = init_state(problem, SolverConfig())
    assert len(state.cuts) == 3
    kinds = [c.kind for c in state.cuts]
    assert kinds == ["fixed", "current", "aggregate"]
    for cut in state.cuts:
        assert cut.intercept == 0.0
        np.testing.assert_array_equal(cut.slope, problem.fixed_slope)
    np.testing.assert_array_equal(
        state.center[: problem.n_box], np.full(problem.n_box, 0.05)
    )
    f_dense, _, _ = dense_penalty_value(
        problem, DualPoint(flat=state.center, n_buses=2)
    )
    assert state.f_center == pytest.approx(f_dense, abs=1e-8)


def test_manual_stepping_invariants(ten_bus, ten_bus_planted):
    problem = build_problem(ten_bus, ten_bus_planted.limits, ten_bus_planted.u)
    config = SolverConfig()
    state = init_state(problem, config)
    prev_center_value = state.f_center
    while not state.converged and state.iteration < config.max_iters:
        record = step(state)
        scale = 1.0 + abs(prev_center_value)
        assert record.delta >= -1e-12 * scale
        if record.serious:
            assert record.f_candidate <= prev_center_value - config.eta * record.delta
            assert state.f_center == record.f_candidate
        else:
            assert state.f_center == prev_center_value
        assert record.prox_seconds >= 0.0
        assert record.case_used in ("vertex", "edge", "interior", "fallback")
        prev_center_value = state.f_center
    assert state.converged
    assert state.history[-1].delta <= config.eps
    # Center values never increase across the run.
    centers = [r.f_center for r in state.history]
    assert all(b <= a + 1e-15 for a, b in zip(centers, centers[1:]))


def test_cut_refresh_makes_model_tight_at_candidate(two_bus, two_bus_planted):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    config = SolverConfig()
    state = init_state(problem, config)
    record = step(state)
    if not state.converged:
        # The refreshed current cut touches the sampled value at the
        # candidate, and the aggregate reproduces the model optimum there.
        z = state.center if record.serious else None
        # Recover the candidate: it is where the current cut was anchored.
        # Its value there must match the unclipped objective sample.
        cur = state.cuts[1]
        agg = state.cuts[2]
        x = DualPoint(flat=np.asarray(
            state.center if record.serious else state.center), n_buses=2)
        if record.serious:
            _, f_lambda, _ = dense_penalty_value(problem, x)
            assert cur.value(state.center) == pytest.approx(f_lambda, abs=1e-8)
            assert agg.value(state.center) == pytest.approx(
                record.model_value, abs=1e-9
            )


def test_final_cuts_minorize_the_objective(two_bus, two_bus_planted):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    state = init_state(problem, SolverConfig())
    for _ in range(6):
        if state.converged:
            break
        step(state)
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.uniform(0.0, problem.beta, size=problem.n_box)
        tail = rng.normal(size=9)
        flat = np.concatenate([y, tail])
        f, _, _ = dense_penalty_value(problem, DualPoint(flat=flat, n_buses=2))
        for cut in state.cuts:
            assert cut.value(flat) <= f + 1e-9 * (1.0 + abs(f))


def test_two_bus_planted_reaches_analytic_value(two_bus, two_bus_planted, tight_config):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    report = solve(problem, tight_config)
    assert report.converged
    assert report.verdict == "feasible"
    assert report.f_best == pytest.approx(two_bus_planted.f_star, abs=1e-9)
    cert = report.certificate
    assert cert.slack_total <= 1e-8
    assert cert.top_block_err <= 1e-6
    assert cert.comp_res <= cert.comp_tol
    assert cert.eigen_gap >= 0.1
    assert cert.duality_gap <= 1e-6
    # The certificate voltage reproduces the planted profile up to phase.
    v = cert.voltage
    target = two_bus_planted.voltage
    phase = np.vdot(v, target) / abs(np.vdot(v, target))
    assert np.abs(phase * v - target).max() <= 1e-3


def test_ten_bus_planted_reaches_analytic_value(ten_bus, ten_bus_planted, tight_config):
    problem = build_problem(ten_bus, ten_bus_planted.limits, ten_bus_planted.u)
    report = solve(problem, tight_config)
    assert report.converged
    assert report.verdict == "feasible"
    assert report.f_best == pytest.approx(ten_bus_planted.f_star, abs=1e-8)
    assert report.certificate.top_block_err <= 1e-6


def test_infeasible_instance_is_not_certified(two_bus, two_bus_infeasible):
    problem = build_problem(two_bus, two_bus_infeasible.limits, two_bus_infeasible.u)
    report = solve(problem, SolverConfig())
    assert report.converged
    assert report.verdict == "infeasible_or_undecided"
    assert report.certificate.slack_total > 1e-3


def test_recovery_reproduces_known_null_vector():
    rng = np.random.default_rng(11)
    slack = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])
    tail = np.array([0.3 - 0.2j, -0.1 + 0.4j, 0.25 + 0.05j])
    target = np.concatenate([slack, tail])
    v_unit = target / np.linalg.norm(target)
    H = psd_with_null_vector(v_unit, rng)
    net = network_with_flat_matrix(H)
    problem = build_problem(net, generous_limits(2), np.zeros(6))
    x = DualPoint(flat=np.zeros(problem.n_flat), n_buses=2)
    cert = recover_primal(problem, x, rng, SolverConfig())
    assert cert.recovered
    # The rescaling aligns the slack block exactly with the reference
    # voltage, reproducing the planted vector to near machine precision.
    assert np.abs(cert.voltage - target).max() <= 1e-10
    assert cert.top_block_err <= 1e-10
    assert abs(cert.lambda_min) <= 1e-10
    assert cert.eigen_gap == pytest.approx(1.0, abs=1e-8)
    assert cert.verdict == "feasible"
    assert cert.duality_gap == np.inf  # no dual value supplied


def test_recovery_flags_zero_slack_block():
    rng = np.random.default_rng(12)
    tail = np.array([0.5 + 0.1j, -0.3 + 0.2j, 0.8 - 0.4j])
    target = np.concatenate([np.zeros(3), tail])
    v_unit = target / np.linalg.norm(target)
    H = psd_with_null_vector(v_unit, rng)
    net = network_with_flat_matrix(H)
    problem = build_problem(net, generous_limits(2), np.zeros(6))
    x = DualPoint(flat=np.zeros(problem.n_flat), n_buses=2)
    cert = recover_primal(problem, x, rng, SolverConfig())
    assert not cert.recovered
    assert cert.verdict == "infeasible_or_undecided"
    assert "zero slack block" in cert.detail
    assert cert.voltage is None


def test_penalty_vanishes_at_convergence(two_bus, two_bus_planted, tight_config):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    report = solve(problem, tight_config)
    x = DualPoint(flat=report.center, n_buses=2)
    f, _, lam = dense_penalty_value(problem, x)
    # At the solution the eigenvalue penalty is inactive (or vanishing), so
    # the penalized value coincides with the plain dual objective.
    assert problem.alpha * max(lam, 0.0) <= 1e-6
    linear = float(problem.fixed_slope @ report.center)
    assert abs(f - linear) <= 1e-6


def test_penalty_equals_plain_dual_objective_where_inactive(two_bus, two_bus_planted):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    C = 0.5 * (problem.Y.toarray() + problem.Y.toarray().conj().T)
    S = C[:3, :3] - C[:3, 3:] @ np.linalg.solve(C[3:, 3:], C[3:, :3])
    gamma = -S + 0.1 * np.eye(3)
    x = problem.point(np.zeros(problem.n_box), gamma)
    eig = leading_eigenpair(problem, x, np.random.default_rng(0))
    f, f_lambda = penalty_value(problem, x, eig)
    assert eig.value < 0.0
    # With the positive part clipped to zero the penalized value equals the
    # plain dual objective bitwise.
    assert f == float(problem.fixed_slope @ x.flat)
    assert f_lambda < f
    f_dense, _, lam = dense_penalty_value(problem, x)
    assert lam < 0.0
    assert f_dense == pytest.approx(f, abs=1e-10)


def test_solve_reports_are_serializable_and_consistent(two_bus, two_bus_planted):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    report = solve(problem, SolverConfig())
    assert report.iterations == len(report.history)
    assert report.serious_steps == sum(1 for r in report.history if r.serious)
    assert report.wall_seconds > 0.0
    doc = report.to_dict()
    encoded = json.dumps(doc)
    decoded = json.loads(encoded)
    assert decoded["verdict"] == report.verdict
    assert decoded["certificate"]["slack_total"] == report.certificate.slack_total
    assert len(decoded["history"]) == report.iterations
    assert len(decoded["center"]) == problem.n_flat


def test_iteration_budget_exhaustion_is_reported(two_bus, two_bus_planted):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    report = solve(problem, SolverConfig(max_iters=1, eps=1e-14))
    assert not report.converged
    assert report.verdict == "not_converged"
    assert any("model gap" in w for w in report.warnings)


def test_config_alpha_overrides_problem_alpha(two_bus, two_bus_planted):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    override = 3.0 * problem.alpha
    report = solve(problem, SolverConfig(alpha=override))
    assert report.converged
    strong = build_problem(
        two_bus, two_bus_planted.limits, two_bus_planted.u, alpha=override
    )
    f_dense, _, _ = dense_penalty_value(
        strong, DualPoint(flat=report.center, n_buses=2)
    )
    assert report.f_best == pytest.approx(f_dense, abs=1e-8)


def test_small_alpha_triggers_dominance_warning(two_bus, two_bus_planted):
    problem = build_problem(two_bus, two_bus_planted.limits, two_bus_planted.u)
    report = solve(problem, SolverConfig(alpha=0.5))
    assert any("does not dominate" in w for w in report.warnings)
