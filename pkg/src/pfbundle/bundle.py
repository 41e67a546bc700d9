"""Three-cut proximal bundle loop with rank-one primal recovery.

Each iteration solves the prox subproblem over a fixed, a current, and an
aggregate cut, evaluates the penalized dual at the candidate with a single
extreme-eigenpair call, applies the descent test to move the stability
center, and rebuilds the current and aggregate cuts at the candidate.  After
the loop a unit eigenvector at the bottom of the dual matrix's spectrum is
rescaled against the slack-bus voltage to propose a rank-one operating point,
and the certificate checks (limit slack, eigenvalue complementarity, spectral
separation) decide the verdict.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .operators import (
    DualPoint,
    EigenFailure,
    PenaltyObjective,
    apply_constraint_rank1,
    dual_matrix,
    leading_eigenpair,
    penalty_subgradient,
    penalty_value,
    svec3,
)
from .prox import Cut, ProxSolution, solve_prox


@dataclass(frozen=True)
class SolverConfig:
    """Tunable knobs of the bundle loop and the certificate thresholds."""

    rho: float = 4.0
    eta: float = 0.1
    eps: float = 1e-5
    beta: float = 0.1
    alpha: float | None = None
    max_iters: int = 2000
    eig_tol: float = 1e-9
    max_krylov: int = 60
    max_restarts: int = 50
    dense_threshold: int = 300
    feas_tol: float = 1e-6
    comp_scale: float = 1e-6
    gap_tol: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "eta": self.eta,
            "eps": self.eps,
            "beta": self.beta,
            "alpha": self.alpha,
            "max_iters": self.max_iters,
            "eig_tol": self.eig_tol,
            "max_krylov": self.max_krylov,
            "max_restarts": self.max_restarts,
            "dense_threshold": self.dense_threshold,
            "feas_tol": self.feas_tol,
            "comp_scale": self.comp_scale,
            "gap_tol": self.gap_tol,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class IterationRecord:
    """Per-iteration trace row of the bundle loop."""

    iteration: int
    f_center: float
    f_candidate: float
    model_value: float
    delta: float
    serious: bool
    case_used: str
    kkt_residual: float
    lambda_neg: float
    eig_matvecs: int
    prox_seconds: float
    step_norm: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "f_center": self.f_center,
            "f_candidate": self.f_candidate,
            "model_value": self.model_value,
            "delta": self.delta,
            "serious": self.serious,
            "case_used": self.case_used,
            "kkt_residual": self.kkt_residual,
            "lambda_neg": self.lambda_neg,
            "eig_matvecs": self.eig_matvecs,
            "prox_seconds": self.prox_seconds,
            "step_norm": self.step_norm,
        }


@dataclass
class BundleState:
    """Mutable loop state: center, its value, the three cuts, and the trace."""

    problem: PenaltyObjective
    config: SolverConfig
    rng: np.random.Generator
    center: np.ndarray
    f_center: float
    cuts: list
    iteration: int = 0
    converged: bool = False
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def init_state(problem: PenaltyObjective, config: SolverConfig) -> BundleState:
    """Start at the box midpoint with all three cuts set to the linear part.

    The linear part of the objective is a global minorant (the penalty term is
    nonnegative), so the initial model is valid before any eigenpair has been
    computed.  The center value does require one eigenpair evaluation.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    x0 = problem.start_point()
    eig = leading_eigenpair(
        problem,
        x0,
        rng,
        tol=config.eig_tol,
        max_krylov=config.max_krylov,
        max_restarts=config.max_restarts,
        dense_threshold=config.dense_threshold,
    )
    f0, _ = penalty_value(problem, x0, eig)
    slope = problem.fixed_slope
    cuts = [
        Cut(0.0, slope, "fixed"),
        Cut(0.0, slope.copy(), "current"),
        Cut(0.0, slope.copy(), "aggregate"),
    ]
    return BundleState(
        problem=problem,
        config=config,
        rng=rng,
        center=np.array(x0.flat, dtype=float),
        f_center=f0,
        cuts=cuts,
        history=[],
    )


def step(state: BundleState) -> IterationRecord:
    """One bundle iteration: prox candidate, descent test, cut refresh.

    The candidate is evaluated with a single eigenpair call that also yields
    the subgradient slope.  The stopping predicate (model gap at most eps) is
    checked by the caller on the returned record after the center update has
    been applied, matching the loop ordering in solve().
    """
    problem = state.problem
    config = state.config
    state.iteration += 1

    t0 = time.perf_counter()
    prox: ProxSolution = solve_prox(
        state.center, state.cuts, config.rho, config.beta, problem.n_box
    )
    prox_seconds = time.perf_counter() - t0
    z = prox.z
    a = np.array([c.intercept for c in state.cuts])
    S = np.vstack([c.slope for c in state.cuts])
    model_value = float((a + S @ z).max())
    delta = state.f_center - model_value

    zpt = DualPoint(flat=z, n_buses=problem.n_buses)
    eig = leading_eigenpair(
        problem,
        zpt,
        state.rng,
        tol=config.eig_tol,
        max_krylov=config.max_krylov,
        max_restarts=config.max_restarts,
        dense_threshold=config.dense_threshold,
    )
    f_z, f_lambda_z = penalty_value(problem, zpt, eig)
    g = penalty_subgradient(problem, eig)

    serious = f_z <= state.f_center - config.eta * delta
    step_norm = float(np.linalg.norm(z - state.center))
    if serious:
        state.center = np.array(z, copy=True)
        state.f_center = f_z

    record = IterationRecord(
        iteration=state.iteration,
        f_center=state.f_center,
        f_candidate=f_z,
        model_value=model_value,
        delta=delta,
        serious=serious,
        case_used=prox.case_used,
        kkt_residual=prox.kkt_residual,
        lambda_neg=eig.value,
        eig_matvecs=eig.matvecs,
        prox_seconds=prox_seconds,
        step_norm=step_norm,
    )
    state.history.append(record)

    if delta <= config.eps:
        state.converged = True
        return record

    # Aggregate: the weight-combined cut, whose value at z equals the model
    # optimum up to roundoff; combining minorants keeps it a minorant.
    agg_slope = S.T @ prox.theta
    agg_intercept = float(prox.theta @ a)
    cur_intercept = f_lambda_z - float(g @ z)
    state.cuts = [
        state.cuts[0],
        Cut(cur_intercept, g, "current"),
        Cut(agg_intercept, agg_slope, "aggregate"),
    ]
    return record


@dataclass(frozen=True)
class PrimalCertificate:
    """Rank-one candidate extracted from the bottom of the dual spectrum."""

    recovered: bool
    verdict: str
    voltage: np.ndarray | None = field(default=None, repr=False)
    slack_total: float = float("inf")
    top_block_err: float = float("inf")
    comp_res: float = float("inf")
    comp_tol: float = 0.0
    eigen_gap: float = 0.0
    lambda_min: float = float("nan")
    primal_objective: float = float("nan")
    duality_gap: float = float("inf")
    detail: str = ""

    def to_dict(self) -> dict:
        out = {
            "recovered": self.recovered,
            "verdict": self.verdict,
            "slack_total": self.slack_total,
            "top_block_err": self.top_block_err,
            "comp_res": self.comp_res,
            "comp_tol": self.comp_tol,
            "eigen_gap": self.eigen_gap,
            "lambda_min": self.lambda_min,
            "primal_objective": self.primal_objective,
            "duality_gap": self.duality_gap,
            "detail": self.detail,
        }
        if self.voltage is not None:
            out["voltage"] = [[float(c.real), float(c.imag)] for c in self.voltage]
        return out


def recover_primal(
    problem: PenaltyObjective,
    x: DualPoint,
    rng: np.random.Generator,
    config: SolverConfig,
    f_value: float | None = None,
) -> PrimalCertificate:
    """Rescale the bottom eigenvector of H(x) into a voltage candidate.

    The eigenvector's slack block is aligned with the reference voltage by a
    least-squares complex scalar; the scaled vector induces a rank-one matrix
    whose limit violations, complementarity residual against H, and spectral
    separation drive the verdict.  When f_value is given the certificate also
    reports the scaled duality gap between -f_value and the primal objective.
    """
    H = dual_matrix(problem, x)
    eig = leading_eigenpair(
        problem,
        x,
        rng,
        tol=config.eig_tol,
        max_krylov=config.max_krylov,
        max_restarts=config.max_restarts,
        dense_threshold=config.dense_threshold,
        H=H,
    )
    v0 = eig.vector
    lam_min = -eig.value
    gap = float("nan") if eig.value2 is None else eig.value - eig.value2

    head = v0[:3]
    head_sq = float(np.vdot(head, head).real)
    if head_sq < 1e-16:
        return PrimalCertificate(
            recovered=False,
            verdict="infeasible_or_undecided",
            lambda_min=lam_min,
            eigen_gap=gap,
            detail="eigenvector has a numerically zero slack block",
        )
    scale = complex(np.vdot(head, problem.slack_voltage)) / head_sq
    voltage = scale * v0

    rows = apply_constraint_rank1(problem, voltage) + problem.m_vec
    slack = np.clip(rows, 0.0, None)
    slack_total = float(slack.sum())
    top_block = np.outer(voltage[:3], voltage[:3].conj())
    top_block_err = float(np.linalg.norm(top_block - problem.M1))
    hv = H @ voltage
    comp_res = float(np.linalg.norm(hv) * np.linalg.norm(voltage))
    h_norm = float(np.sqrt(np.vdot(H.data, H.data).real)) if H.nnz else 0.0
    comp_tol = config.comp_scale * h_norm

    primal_obj = problem.beta * slack_total + float(
        np.vdot(voltage, problem.C @ voltage).real
    )
    duality_gap = float("inf")
    if f_value is not None:
        duality_gap = abs(f_value + primal_obj) / (1.0 + abs(primal_obj))

    ok = (
        slack_total <= config.feas_tol
        and comp_res <= comp_tol
        and np.isfinite(gap)
        and gap >= config.gap_tol
    )
    return PrimalCertificate(
        recovered=True,
        verdict="feasible" if ok else "infeasible_or_undecided",
        voltage=voltage,
        slack_total=slack_total,
        top_block_err=top_block_err,
        comp_res=comp_res,
        comp_tol=comp_tol,
        eigen_gap=gap,
        lambda_min=lam_min,
        primal_objective=primal_obj,
        duality_gap=duality_gap,
    )


@dataclass(frozen=True)
class SolveReport:
    """Everything a run produced: trace, final value, certificate, warnings."""

    n_buses: int
    config: SolverConfig
    converged: bool
    iterations: int
    serious_steps: int
    f_best: float
    final_delta: float
    certificate: PrimalCertificate
    center: np.ndarray = field(repr=False)
    history: tuple = field(repr=False, default=())
    warnings: tuple = ()
    wall_seconds: float = 0.0

    @property
    def verdict(self) -> str:
        if not self.converged:
            return "not_converged"
        return self.certificate.verdict

    def to_dict(self) -> dict:
        return {
            "n_buses": self.n_buses,
            "config": self.config.to_dict(),
            "converged": self.converged,
            "iterations": self.iterations,
            "serious_steps": self.serious_steps,
            "f_best": self.f_best,
            "final_delta": self.final_delta,
            "verdict": self.verdict,
            "certificate": self.certificate.to_dict(),
            "center": [float(t) for t in self.center],
            "warnings": list(self.warnings),
            "wall_seconds": self.wall_seconds,
            "history": [r.to_dict() for r in self.history],
        }


def solve(problem: PenaltyObjective, config: SolverConfig | None = None) -> SolveReport:
    """Run the bundle loop to the model-gap tolerance and recover a certificate."""
    if config is None:
        config = SolverConfig()
    if config.alpha is not None and config.alpha != problem.alpha:
        problem = replace(problem, alpha=float(config.alpha))
    t0 = time.perf_counter()
    state = init_state(problem, config)
    final_delta = float("inf")
    try:
        while state.iteration < config.max_iters and not state.converged:
            record = step(state)
            final_delta = record.delta
    except EigenFailure as exc:
        state.warnings.append(f"eigen solver failed at iteration {state.iteration}: {exc}")

    if not state.converged:
        state.warnings.append(
            f"model gap {final_delta:.3e} above eps {config.eps:.1e}"
            f" after {state.iteration} iterations"
        )

    center_pt = DualPoint(flat=state.center, n_buses=problem.n_buses)
    certificate = recover_primal(
        problem, center_pt, state.rng, config, f_value=state.f_center
    )
    if certificate.recovered and certificate.voltage is not None:
        trace_w = float(np.vdot(certificate.voltage, certificate.voltage).real)
        if problem.alpha <= trace_w:
            state.warnings.append(
                f"penalty weight alpha={problem.alpha:.3g} does not dominate the"
                f" recovered trace {trace_w:.3g}; raise alpha and re-run"
            )

    serious_steps = sum(1 for r in state.history if r.serious)
    return SolveReport(
        n_buses=problem.n_buses,
        config=config,
        converged=state.converged,
        iterations=state.iteration,
        serious_steps=serious_steps,
        f_best=state.f_center,
        final_delta=final_delta,
        certificate=certificate,
        center=np.array(state.center, copy=True),
        history=tuple(state.history),
        warnings=tuple(state.warnings),
        wall_seconds=time.perf_counter() - t0,
    )
