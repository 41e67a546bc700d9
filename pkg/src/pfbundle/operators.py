"""Vectorized constraint maps, the penalized dual objective, and its eigensolver.

The dual variable is x = (y, Gamma): y is a nonnegative box-bounded vector of
length 18N stacking six multiplier blocks (active power upper/lower, reactive
upper/lower, squared-voltage upper/lower), and Gamma is a Hermitian 3x3 matrix
attached to the slack-bus voltage block.  Internally x is flattened to a real
vector of length 18N + 9 whose Euclidean inner product reproduces
y1.y2 + trace(Gamma1 @ Gamma2): the Hermitian part is stored as
(diagonal, sqrt(2) * Re upper, sqrt(2) * Im upper).

The dual matrix is H(x) = C + Astar(y) + embed(Gamma), with C the Hermitian
part of the admittance matrix.  The penalized objective adds
alpha * max(lambda_max(-H), 0) to the linear dual objective, which removes the
semidefinite constraint on H at the price of one extreme eigenpair per
evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .network import OperatingLimits, ThreePhaseNetwork, assemble_admittance

_SQRT2 = np.sqrt(2.0)
_OFFDIAG = ((0, 1), (0, 2), (1, 2))

# y-block order: P+ P- Q+ Q- V+ V-
BLOCK_NAMES = ("p_up", "p_dn", "q_up", "q_dn", "v_up", "v_dn")


class EigenFailure(RuntimeError):
    """Extreme eigenpair iteration did not reach the requested residual."""


def box_dim(n_buses: int) -> int:
    return 18 * n_buses


def flat_dim(n_buses: int) -> int:
    return 18 * n_buses + 9


def y_block(y: np.ndarray, index: int, n_buses: int) -> np.ndarray:
    m = 3 * n_buses
    return y[index * m : (index + 1) * m]


def svec3(mat: np.ndarray) -> np.ndarray:
    """Isometric real embedding of a Hermitian 3x3 matrix (9 numbers)."""
    out = np.empty(9)
    out[0:3] = mat.diagonal().real
    for k, (i, j) in enumerate(_OFFDIAG):
        out[3 + k] = _SQRT2 * mat[i, j].real
        out[6 + k] = _SQRT2 * mat[i, j].imag
    return out


def smat3(vec: np.ndarray) -> np.ndarray:
    """Inverse of svec3."""
    mat = np.zeros((3, 3), dtype=complex)
    mat[0, 0], mat[1, 1], mat[2, 2] = vec[0], vec[1], vec[2]
    for k, (i, j) in enumerate(_OFFDIAG):
        z = (vec[3 + k] + 1j * vec[6 + k]) / _SQRT2
        mat[i, j] = z
        mat[j, i] = z.conjugate()
    return mat


@dataclass(frozen=True)
class DualPoint:
    """Dual iterate (y, Gamma) stored as one flat real vector."""

    flat: np.ndarray
    n_buses: int

    def __post_init__(self):
        if self.flat.shape != (flat_dim(self.n_buses),):
            raise ValueError(
                f"flat vector has shape {self.flat.shape}, expected"
                f" ({flat_dim(self.n_buses)},)"
            )

    @property
    def y(self) -> np.ndarray:
        return self.flat[: box_dim(self.n_buses)]

    @property
    def gamma(self) -> np.ndarray:
        return smat3(self.flat[box_dim(self.n_buses) :])

    @classmethod
    def from_parts(cls, y: np.ndarray, gamma: np.ndarray, n_buses: int) -> "DualPoint":
        return cls(np.concatenate([np.asarray(y, float), svec3(gamma)]), n_buses)


def limit_offset_vector(u: np.ndarray, limits: OperatingLimits) -> np.ndarray:
    """Stack the six limit offsets so the capacity rows read A(W) + m <= z."""
    u = np.asarray(u, dtype=float)
    return np.concatenate(
        [
            -u - limits.p_upper,
            u + limits.p_lower,
            -limits.q_upper,
            limits.q_lower,
            -limits.v_upper,
            limits.v_lower,
        ]
    )


@dataclass(frozen=True)
class PenaltyObjective:
    """Immutable problem data for the penalized dual objective."""

    n_buses: int
    Y: sp.csr_matrix = field(repr=False)
    Yh: sp.csr_matrix = field(repr=False)
    C: sp.csr_matrix = field(repr=False)
    m_vec: np.ndarray = field(repr=False)
    slack_voltage: np.ndarray = field(repr=False)
    M1: np.ndarray = field(repr=False)
    alpha: float
    beta: float
    limits: OperatingLimits = field(repr=False)
    u: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return 3 * self.n_buses

    @property
    def n_box(self) -> int:
        return box_dim(self.n_buses)

    @property
    def n_flat(self) -> int:
        return flat_dim(self.n_buses)

    @property
    def fixed_slope(self) -> np.ndarray:
        """Slope of the linear dual objective in flat coordinates."""
        return np.concatenate([-self.m_vec, svec3(self.M1)])

    def point(self, y: np.ndarray, gamma: np.ndarray) -> DualPoint:
        return DualPoint.from_parts(y, gamma, self.n_buses)

    def start_point(self) -> DualPoint:
        """Midpoint of the multiplier box with a zero Hermitian part."""
        y0 = np.full(self.n_box, 0.5 * self.beta)
        return DualPoint.from_parts(y0, np.zeros((3, 3), complex), self.n_buses)


def build_problem(
    network: ThreePhaseNetwork,
    limits: OperatingLimits,
    u: np.ndarray,
    alpha: float | None = None,
    beta: float = 0.1,
) -> PenaltyObjective:
    """Assemble problem data; alpha defaults to twice the summed upper voltage band."""
    network.validate()
    limits.validate(network.n_buses)
    u = np.asarray(u, dtype=float)
    if u.shape != (3 * network.n_buses,):
        raise ValueError(f"injection has shape {u.shape}, expected ({3 * network.n_buses},)")
    if not np.all(np.isfinite(u)):
        raise ValueError("injection contains non-finite entries")
    if beta <= 0:
        raise ValueError("beta must be positive")
    Y = assemble_admittance(network)
    Yh = Y.conj().T.tocsr()
    C = (0.5 * (Y + Yh)).tocsr()
    v1 = network.slack_voltage
    if alpha is None:
        alpha = 2.0 * float(limits.v_upper.sum())
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return PenaltyObjective(
        n_buses=network.n_buses,
        Y=Y,
        Yh=Yh,
        C=C,
        m_vec=limit_offset_vector(u, limits),
        slack_voltage=v1,
        M1=np.outer(v1, v1.conj()),
        alpha=float(alpha),
        beta=float(beta),
        limits=limits,
        u=u,
    )


def apply_constraint_rank1(problem: PenaltyObjective, v: np.ndarray) -> np.ndarray:
    """Evaluate the capacity map on the rank-one matrix v v^H.

    Uses one sparse matvec: the injection is diag(v v^H Y^H) = v * conj(Y v),
    so the six stacked rows are [Re S, -Re S, Im S, -Im S, |v|^2, -|v|^2].
    """
    v = np.asarray(v, dtype=complex)
    s = v * np.conj(problem.Y @ v)
    d = (v.real * v.real) + (v.imag * v.imag)
    return np.concatenate([s.real, -s.real, s.imag, -s.imag, d, -d])


def constraint_adjoint_matrix(problem: PenaltyObjective, y: np.ndarray) -> sp.csr_matrix:
    """Hermitian matrix representing the adjoint of the capacity map at y.

    With w = (y_P+ - y_P-) + i (y_Q+ - y_Q-) and c = y_V+ - y_V-, the adjoint
    is 0.5 * (Y^H diag(conj(w)) + diag(w) Y) + diag(c); both summands are exact
    conjugate transposes of each other, so the result is Hermitian by
    construction.
    """
    y = np.asarray(y, dtype=float)
    n = problem.n_buses
    w = (y_block(y, 0, n) - y_block(y, 1, n)) + 1j * (
        y_block(y, 2, n) - y_block(y, 3, n)
    )
    c = y_block(y, 4, n) - y_block(y, 5, n)
    left = problem.Yh.multiply(np.conj(w)[np.newaxis, :])   # Y^H diag(conj(w))
    right = problem.Y.multiply(w[:, np.newaxis])            # diag(w) Y
    out = 0.5 * (left + right) + sp.diags(c.astype(complex))
    return out.tocsr()


def slack_block_matrix(gamma: np.ndarray, n_buses: int) -> sp.csr_matrix:
    """Embed a Hermitian 3x3 block at the slack-bus corner of a 3N x 3N matrix."""
    gamma = np.asarray(gamma, dtype=complex)
    rows, cols = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    return sp.coo_matrix(
        (gamma.ravel(), (rows.ravel(), cols.ravel())),
        shape=(3 * n_buses, 3 * n_buses),
    ).tocsr()


def dual_matrix(problem: PenaltyObjective, x: DualPoint) -> sp.csr_matrix:
    """H(x) = C + adjoint(y) + embedded Gamma, sparse Hermitian."""
    out = problem.C + constraint_adjoint_matrix(problem, x.y)
    out = out + slack_block_matrix(x.gamma, problem.n_buses)
    return out.tocsr()


# ---------------------------------------------------------------------------
# extreme eigenpair


@dataclass(frozen=True)
class EigenResult:
    """Extreme eigenpair of the negated dual matrix.

    value is lambda_max(-H); vector is a unit eigenvector; residual is the
    explicitly recomputed ||(-H) v - value * v||; value2 is the next Ritz
    value (a separation diagnostic); matvecs counts operator applications.
    """

    value: float
    vector: np.ndarray = field(repr=False)
    residual: float
    value2: float | None = None
    matvecs: int = 0


def _normalize_phase(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    pivot = v[k]
    if np.abs(pivot) == 0.0:
        return v
    return v * (np.conj(pivot) / np.abs(pivot))


def lanczos_extreme(
    matvec,
    dim: int,
    rng: np.random.Generator,
    tol: float = 1e-9,
    max_krylov: int = 60,
    max_restarts: int = 50,
):
    """Largest eigenpair of a Hermitian operator by restarted Lanczos.

    Full reorthogonalization keeps the basis clean; each restart continues
    from the best Ritz vector.  Returns (value, vector, residual, value2,
    matvecs); raises EigenFailure if the residual never reaches tol.
    """
    m = int(min(dim, max_krylov))
    counter = [0]

    def apply(vec):
        counter[0] += 1
        return matvec(vec)

    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    v = v / np.linalg.norm(v)
    best = None
    for _ in range(max_restarts + 1):
        Q = np.empty((dim, m), dtype=complex)
        alphas = np.empty(m)
        betas = np.empty(m)
        q = v
        used = 0
        for j in range(m):
            Q[:, j] = q
            w = apply(q)
            alphas[j] = float(np.real(np.vdot(q, w)))
            w = w - alphas[j] * q
            if j > 0:
                w = w - betas[j - 1] * Q[:, j - 1]
            # Two reorthogonalization passes against the whole basis.
            for _ in range(2):
                w = w - Q[:, : j + 1] @ (Q[:, : j + 1].conj().T @ w)
            used = j + 1
            beta = float(np.linalg.norm(w))
            betas[j] = beta
            if beta < 1e-14 * max(1.0, abs(alphas[j])):
                break
            q = w / beta
        T = np.diag(alphas[:used])
        if used > 1:
            off = betas[: used - 1]
            T = T + np.diag(off, 1) + np.diag(off, -1)
        evals, evecs = np.linalg.eigh(T)
        ritz = float(evals[-1])
        ritz2 = float(evals[-2]) if used > 1 else None
        y = evecs[:, -1]
        vec = Q[:, :used] @ y
        vec = vec / np.linalg.norm(vec)
        resid = float(np.linalg.norm(apply(vec) - ritz * vec))
        if best is None or resid < best[2]:
            best = (ritz, vec, resid, ritz2)
        if resid <= tol:
            value, vec, resid, ritz2 = best
            return value, _normalize_phase(vec), resid, ritz2, counter[0]
        v = vec
    raise EigenFailure(
        f"no convergence after {max_restarts} restarts:"
        f" best residual {best[2]:.3e} (tol {tol:.1e}, dim {dim})"
    )


def leading_eigenpair(
    problem: PenaltyObjective,
    x: DualPoint,
    rng: np.random.Generator,
    tol: float = 1e-9,
    max_krylov: int = 60,
    max_restarts: int = 50,
    dense_threshold: int = 300,
    H: sp.csr_matrix | None = None,
) -> EigenResult:
    """lambda_max(-H(x)) with eigenvector, matrix-free with a dense fallback.

    The sparse matrix H is assembled once and applied through matvecs only.
    If Lanczos stalls and the dimension is at most dense_threshold the pair
    is recomputed densely; beyond that the failure propagates.
    """
    if H is None:
        H = dual_matrix(problem, x)
    dim = problem.dim

    def matvec(vec):
        return -(H @ vec)

    try:
        value, vec, resid, ritz2, matvecs = lanczos_extreme(
            matvec, dim, rng, tol=tol, max_krylov=max_krylov, max_restarts=max_restarts
        )
        return EigenResult(value=value, vector=vec, residual=resid, value2=ritz2,
                           matvecs=matvecs)
    except EigenFailure:
        if dim > dense_threshold:
            raise
        evals, evecs = np.linalg.eigh(-H.toarray())
        vec = _normalize_phase(np.ascontiguousarray(evecs[:, -1]))
        value = float(evals[-1])
        resid = float(np.linalg.norm(-(H @ vec) - value * vec))
        value2 = float(evals[-2]) if dim > 1 else None
        return EigenResult(value=value, vector=vec, residual=resid, value2=value2,
                           matvecs=dim)


# ---------------------------------------------------------------------------
# penalized objective


def penalty_value(problem: PenaltyObjective, x: DualPoint, eig: EigenResult):
    """(f, f_lambda): penalized value with and without the positive part."""
    linear = float(problem.fixed_slope @ x.flat)
    f_lambda = linear + problem.alpha * eig.value
    f = linear + problem.alpha * max(eig.value, 0.0)
    return f, f_lambda


def penalty_subgradient(
    problem: PenaltyObjective,
    eig: EigenResult,
    x: DualPoint | None = None,
    residual_tol: float | None = None,
) -> np.ndarray:
    """Flat subgradient slope of the unclipped penalized objective.

    The slope is the linear part minus alpha times the capacity map applied to
    the eigenvector's rank-one matrix.  When x is given the eigenpair is
    revalidated against H(x) so a stale pair is rejected.
    """
    v = eig.vector
    if x is not None:
        tol = residual_tol if residual_tol is not None else 1e-6
        H = dual_matrix(problem, x)
        resid = float(np.linalg.norm(-(H @ v) - eig.value * v))
        if resid > tol:
            raise ValueError(
                f"stale eigenpair: residual {resid:.3e} against the given point"
                f" exceeds {tol:.1e}"
            )
    a_q = apply_constraint_rank1(problem, v)
    q_block = np.outer(v[:3], v[:3].conj())
    y_slope = -problem.m_vec - problem.alpha * a_q
    gamma_slope = svec3(problem.M1 - problem.alpha * q_block)
    return np.concatenate([y_slope, gamma_slope])
