"""Instance construction with a known optimum for calibration and demos.

The loss-minimizing voltage profile pins the whole problem down: centering
the power and magnitude bands around the operating point it induces makes
that profile the unique optimal operating point, with an analytic optimal
value, while shrinking the magnitude caps below the reference magnitude
makes the slack bus itself violate its band and yields a certified-negative
instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .network import OperatingLimits, ThreePhaseNetwork, assemble_admittance


@dataclass(frozen=True)
class PlantedInstance:
    """Limits + injection built around a reference voltage profile."""

    voltage: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    limits: OperatingLimits
    f_star: float
    feasible: bool


def loss_min_profile(network: ThreePhaseNetwork) -> np.ndarray:
    """Voltage minimizing total dissipation subject to the fixed slack block.

    Splitting the Hermitian part of the admittance by the slack phases, the
    minimizer solves the trailing block against the coupling column.  Requires
    the trailing block to be positive definite, which holds for any network
    with shunt loading on every bus.
    """
    network.validate()
    Y = assemble_admittance(network)
    C = (0.5 * (Y + Y.conj().T)).tocsr()
    v1 = network.slack_voltage
    if network.n_buses == 1:
        return np.array(v1, dtype=complex)
    C22 = C[3:, 3:].tocsc()
    C21 = C[3:, :3].tocsc()
    tail = spla.spsolve(C22, -(C21 @ v1))
    return np.concatenate([v1, np.atleast_1d(tail)])


def plant_feasible(
    network: ThreePhaseNetwork,
    p_margin: float = 2.0,
    q_margin: float = 1.5,
    v_margin: float = 0.35,
) -> PlantedInstance:
    """Bands centered on the loss-minimizing profile with strict margins.

    Every limit row is strictly slack at the reference profile, so the
    recovered operating point should report zero limit violation, and the
    optimal value is the negated dissipation of the profile.
    """
    if min(p_margin, q_margin, v_margin) <= 0:
        raise ValueError("margins must be positive")
    v = loss_min_profile(network)
    Y = assemble_admittance(network)
    s = v * np.conj(Y @ v)
    u = s.real.copy()
    q = s.imag.copy()
    d = (v.real * v.real) + (v.imag * v.imag)
    dim = u.size
    # Active-power bounds are offsets around the set point; reactive and
    # magnitude bounds are absolute, so those are centered on the profile.
    limits = OperatingLimits(
        p_upper=np.full(dim, p_margin),
        p_lower=np.full(dim, -p_margin),
        q_upper=q + q_margin,
        q_lower=q - q_margin,
        v_upper=d + v_margin,
        v_lower=np.clip(d - v_margin, 0.0, None),
    )
    C = 0.5 * (Y + Y.conj().T)
    f_star = -float(np.real(np.vdot(v, C @ v)))
    return PlantedInstance(voltage=v, u=u, limits=limits, f_star=f_star, feasible=True)


def plant_infeasible(
    network: ThreePhaseNetwork,
    v_cap: float = 0.5,
    p_margin: float = 2.0,
    q_margin: float = 1.5,
) -> PlantedInstance:
    """Magnitude caps below the squared slack voltage: provably no solution.

    The slack block is fixed at unit squared magnitude per phase, so a cap
    below one is violated by every candidate matrix and the certified slack
    stays bounded away from zero.
    """
    if not 0.0 < v_cap < 1.0:
        raise ValueError("v_cap must lie in (0, 1) to cut off the slack bus")
    base = plant_feasible(network, p_margin=p_margin, q_margin=q_margin)
    dim = 3 * network.n_buses
    limits = OperatingLimits(
        p_upper=base.limits.p_upper,
        p_lower=base.limits.p_lower,
        q_upper=base.limits.q_upper,
        q_lower=base.limits.q_lower,
        v_upper=np.full(dim, float(v_cap)),
        v_lower=np.zeros(dim),
    )
    return PlantedInstance(
        voltage=base.voltage,
        u=base.u,
        limits=limits,
        f_star=float("nan"),
        feasible=False,
    )
