"""Proximal step over a three-cut model: vertex, edge, then interior case.

The subproblem minimizes the max of three affine cuts plus a quadratic
anchored at the current center, over a box on the multiplier part (the
Hermitian tail is unconstrained).  Its dual is a quadratic program over the
weight simplex, solved sequentially: single-cut supports first, then pairs by
a breakpoint sweep of the piecewise-linear equal-height function, then the
full support by a semismooth Newton iteration with a support-enumeration
fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .oracle import qp_support_enumeration

_EDGES = ((0, 1), (0, 2), (1, 2))

# Case-acceptance slack, relative to the cut-value scale.  Loose acceptance
# bleeds straight into the model decrease and caps the reachable accuracy, so
# this sits near roundoff; a wrong rejection only falls through to the next
# case (worst case the enumeration fallback), never to a wrong answer.
_CASE_TOL = 1e-12


@dataclass(frozen=True)
class Cut:
    """Affine minorant intercept + slope . x in flat coordinates."""

    intercept: float
    slope: np.ndarray = field(repr=False)
    kind: str = ""

    def value(self, flat: np.ndarray) -> float:
        return self.intercept + float(self.slope @ flat)


@dataclass(frozen=True)
class NewtonParams:
    max_iters: int = 200
    ftol_scale: float = 1e-10
    damping_init: float = 1e-8
    damping_max: float = 1e-2
    backtrack_floor: float = 1e-16


@dataclass(frozen=True)
class ProxSolution:
    z: np.ndarray = field(repr=False)
    theta: np.ndarray
    case_used: str
    kkt_residual: float
    objective: float
    diagnostics: dict = field(default_factory=dict)


def project_box(flat: np.ndarray, beta: float, n_box: int) -> np.ndarray:
    """Clip the multiplier part into [0, beta]; the Hermitian tail is free."""
    out = np.array(flat, dtype=float, copy=True)
    np.clip(out[:n_box], 0.0, beta, out=out[:n_box])
    return out


def _cut_arrays(cuts) -> tuple:
    a = np.array([c.intercept for c in cuts], dtype=float)
    S = np.vstack([c.slope for c in cuts])
    return a, S


def _primal_objective(center, a, S, rho, z) -> float:
    diff = z - center
    return float((a + S @ z).max() + 0.5 * rho * (diff @ diff))


def _kkt_residual(center, a, S, rho, beta, n_box, z, theta) -> float:
    zhat = project_box(center - (S.T @ theta) / rho, beta, n_box)
    proj_err = float(np.abs(z - zhat).max())
    simp_err = abs(float(theta.sum()) - 1.0) + float(max(0.0, -theta.min()))
    vals = a + S @ z
    top = float(vals.max())
    comp_err = float((theta * (top - vals)).max()) / (1.0 + abs(top))
    return max(proj_err, simp_err, comp_err)


def vertex_case(center, a, S, rho, beta, n_box):
    """First single-cut support whose cut stays on top at its own prox point."""
    for i in range(3):
        z = project_box(center - S[i] / rho, beta, n_box)
        vals = a + S @ z
        top = float(vals.max())
        if vals[i] >= top - _CASE_TOL * (1.0 + abs(top)):
            theta = np.zeros(3)
            theta[i] = 1.0
            return z, theta, i
    return None


def edge_root(center, a, S, i, j, rho, beta, n_box):
    """Root of the equal-height function of cuts i and j along their edge.

    The difference of cut values along the edge is piecewise linear and
    nonincreasing in the weight s of cut i; its breakpoints are the weights
    where a box coordinate of the projected point hits a bound.  A single
    left-to-right sweep tracks the slope through those clamp toggles and
    solves the active segment in closed form.  Returns s in (0, 1) or None.
    """
    dh = S[i] - S[j]
    w0 = center - S[j] / rho
    dhb = dh[:n_box]
    w0b = w0[:n_box]
    slope_free = (dh[n_box:] @ dh[n_box:]) / rho   # the free tail never clamps

    z0 = project_box(w0, beta, n_box)
    vals0 = a + S @ z0
    phi0 = float(vals0[i] - vals0[j])
    if phi0 < 0.0:
        return None

    nz = dhb != 0.0
    dnz = dhb[nz]
    wnz = w0b[nz]
    with np.errstate(divide="ignore", invalid="ignore"):
        s_zero = rho * wnz / dnz
        s_beta = rho * (wnz - beta) / dnz
    # Toggle sign: does the coordinate become free (+) or clamped (-) there?
    gain = dnz * dnz / rho
    ev_s = np.concatenate([s_zero, s_beta])
    ev_delta = np.concatenate([np.where(dnz > 0, -gain, gain),
                               np.where(dnz > 0, gain, -gain)])
    inside = (ev_s > 0.0) & (ev_s < 1.0)
    ev_s = ev_s[inside]
    ev_delta = ev_delta[inside]

    free0 = ((wnz > 0.0) | ((wnz == 0.0) & (dnz < 0.0))) & (
        (wnz < beta) | ((wnz == beta) & (dnz > 0.0))
    )
    slope0 = float(gain[free0].sum()) + slope_free

    if ev_s.size:
        grid = np.unique(ev_s)
        deltas = np.zeros(grid.size)
        np.add.at(deltas, np.searchsorted(grid, ev_s), ev_delta)
        bounds = np.concatenate([[0.0], grid, [1.0]])
        seg_slope = slope0 + np.concatenate([[0.0], np.cumsum(deltas)])
    else:
        bounds = np.array([0.0, 1.0])
        seg_slope = np.array([slope0])
    seg_len = np.diff(bounds)
    ends = phi0 - np.cumsum(seg_slope * seg_len)
    if ends[-1] > 0.0:
        return None
    p = int(np.argmax(ends <= 0.0))
    start_val = phi0 if p == 0 else float(ends[p - 1])
    if start_val < 0.0:
        return None
    if seg_slope[p] > 0.0:
        s_star = bounds[p] + start_val / seg_slope[p]
        s_star = min(max(s_star, bounds[p]), bounds[p + 1])
    else:
        s_star = 0.5 * (bounds[p] + bounds[p + 1])
    if not 0.0 < s_star < 1.0:
        return None
    return float(s_star)


def edge_case(center, a, S, rho, beta, n_box):
    """First two-cut support with an interior equal-height root that dominates."""
    for i, j in _EDGES:
        s = edge_root(center, a, S, i, j, rho, beta, n_box)
        if s is None:
            continue
        theta = np.zeros(3)
        theta[i] = s
        theta[j] = 1.0 - s
        z = project_box(center - (S.T @ theta) / rho, beta, n_box)
        vals = a + S @ z
        common = max(float(vals[i]), float(vals[j]))
        m = 3 - i - j
        if vals[m] <= common + _CASE_TOL * (1.0 + abs(common)):
            return z, theta, (i, j)
    return None


def interior_newton(center, a, S, rho, beta, n_box, params: NewtonParams = NewtonParams()):
    """Semismooth Newton on the two equal-height equations of the full support.

    The residual stacks the height differences of cuts 1 and 2 against cut 3
    at the projected point; the generalized Jacobian masks out clamped box
    coordinates.  Levenberg damping is escalated when the 2x2 system is
    ill-conditioned and steps are backtracked to stay strictly inside the
    simplex.  Returns (theta, z, iterations) or None when the iteration must
    hand off to the enumeration fallback.
    """
    d1 = S[0] - S[2]
    d2 = S[1] - S[2]
    c1 = a[0] - a[2]
    c2 = a[1] - a[2]
    base = center - S[2] / rho
    d1b, d2b = d1[:n_box], d2[:n_box]
    g11_tail = float(d1[n_box:] @ d1[n_box:])
    g12_tail = float(d1[n_box:] @ d2[n_box:])
    g22_tail = float(d2[n_box:] @ d2[n_box:])

    def evaluate(t1, t2):
        w = base - (t1 * d1 + t2 * d2) / rho
        z = project_box(w, beta, n_box)
        F = np.array([c1 + float(d1 @ z), c2 + float(d2 @ z)])
        return w, z, F, float(np.linalg.norm(F))

    t1, t2 = 1.0 / 3.0, 1.0 / 3.0
    w, z, F, normF = evaluate(t1, t2)
    stop = params.ftol_scale * (1.0 + float(np.abs(a).sum()))
    damping = 0.0
    stalls = 0
    for it in range(1, params.max_iters + 1):
        if normF <= stop:
            theta = np.array([t1, t2, 1.0 - t1 - t2])
            return theta, z, it - 1
        mask = (w[:n_box] > 0.0) & (w[:n_box] < beta)
        m1 = d1b[mask]
        m2 = d2b[mask]
        g11 = float(m1 @ m1) + g11_tail
        g12 = float(m1 @ m2) + g12_tail
        g22 = float(m2 @ m2) + g22_tail
        solved = False
        mu = damping
        while True:
            j11 = -(g11 / rho) - mu
            j22 = -(g22 / rho) - mu
            j12 = -(g12 / rho)
            det = j11 * j22 - j12 * j12
            scale = max(abs(j11), abs(j22), abs(j12), 1e-30)
            if abs(det) > 1e-14 * scale * scale:
                p1 = (-F[0] * j22 + F[1] * j12) / det
                p2 = (F[0] * j12 - F[1] * j11) / det
                solved = True
                break
            mu = params.damping_init if mu == 0.0 else mu * 10.0
            if mu > params.damping_max:
                break
        if not solved:
            return None
        tau = 1.0
        accepted = False
        while tau >= params.backtrack_floor:
            n1, n2 = t1 + tau * p1, t2 + tau * p2
            if n1 > 0.0 and n2 > 0.0 and n1 + n2 < 1.0:
                wn, zn, Fn, normn = evaluate(n1, n2)
                if normn <= (1.0 - 1e-4 * tau) * normF:
                    t1, t2, w, z, F, normF = n1, n2, wn, zn, Fn, normn
                    accepted = True
                    break
            tau *= 0.5
        if not accepted:
            stalls += 1
            damping = params.damping_init if damping == 0.0 else min(
                damping * 10.0, params.damping_max
            )
            if stalls >= 3:
                return None
    return None


def solve_prox(
    center: np.ndarray,
    cuts,
    rho: float,
    beta: float,
    n_box: int,
    newton: NewtonParams = NewtonParams(),
) -> ProxSolution:
    """Solve the three-cut proximal subproblem by the sequential case chain.

    Args:
        center: flat anchor point of the quadratic term.
        cuts: three Cut objects (order fixes tie-breaking).
        rho: prox weight.
        beta: multiplier box upper bound.
        n_box: number of leading box-constrained coordinates.

    Returns a ProxSolution whose diagnostics record which cases ran, the
    Newton iteration count, and whether the enumeration fallback fired.
    """
    a, S = _cut_arrays(cuts)
    tried = []

    tried.append("vertex")
    hit = vertex_case(center, a, S, rho, beta, n_box)
    if hit is not None:
        z, theta, idx = hit
        return _finish(center, a, S, rho, beta, n_box, z, theta, "vertex", tried,
                       {"support": (idx,)})

    tried.append("edge")
    hit = edge_case(center, a, S, rho, beta, n_box)
    if hit is not None:
        z, theta, pair = hit
        return _finish(center, a, S, rho, beta, n_box, z, theta, "edge", tried,
                       {"support": pair})

    tried.append("interior")
    hit = interior_newton(center, a, S, rho, beta, n_box, newton)
    if hit is not None:
        theta, z, iters = hit
        return _finish(center, a, S, rho, beta, n_box, z, theta, "interior", tried,
                       {"support": (0, 1, 2), "newton_iters": iters})

    tried.append("fallback")
    ref = qp_support_enumeration(center, a, S, rho, beta, n_box)
    return _finish(center, a, S, rho, beta, n_box, ref.z, ref.theta, "fallback", tried,
                   {"support": ref.support, "newton_fallback": True})


def _finish(center, a, S, rho, beta, n_box, z, theta, case, tried, extra):
    diagnostics = {"cases_tried": tuple(tried)}
    diagnostics.update(extra)
    return ProxSolution(
        z=z,
        theta=theta,
        case_used=case,
        kkt_residual=_kkt_residual(center, a, S, rho, beta, n_box, z, theta),
        objective=_primal_objective(center, a, S, rho, z),
        diagnostics=diagnostics,
    )
