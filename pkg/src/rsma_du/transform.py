"""Fractional-programming quadratic transform for the WSR problem.

Each SINR ratio inside a log is replaced by the concave surrogate
1 + 2 Re{conj(z) a} - |z|^2 b, which is tight at z* = a/b.  One scalar z_k
per private stream; a single z_0 tied to the weakest (reference) user for the
common stream.  With the auxiliaries fixed the surrogate is concave in the
beamformers, which is what the inner ascent exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LN2, BeamformerSet, ProblemInstance, RateAllocation, _crosstalk


class NonPositivePhiError(ValueError):
    """A surrogate value hit zero or below; step sizes are too aggressive."""

    def __init__(self, which: str, value: float):
        self.which = which
        self.value = value
        super().__init__(f"surrogate term {which} is non-positive ({value:.6g})")


@dataclass
class AuxState:
    """Quadratic-transform auxiliaries: z0 for the common stream, z_k per user."""

    z0: complex
    z: np.ndarray


@dataclass
class SurrogateTerms:
    """Surrogate values phi0 / phi_k; log2 of these replaces the rate logs."""

    phi0: float
    phi: np.ndarray

    def min_value(self) -> float:
        return min(self.phi0, float(self.phi.min()))


def _interference(inst: ProblemInstance, stacked: np.ndarray):
    """Per-user private-interference denominators b_k and the common one b_0.

    b_k = sigma_k^2 + sum_{j != k} |h_k^H v_j|^2 (private streams only);
    b_0 = sigma_r^2 + sum_j |h_r^H v_j|^2 at the reference user.
    Returns (t, b, b0) with t the crosstalk matrix.
    """
    t = _crosstalk(inst, stacked)
    p = np.abs(t) ** 2
    u = inst.num_users
    own = p[np.arange(u), 1 + np.arange(u)]
    b = inst.noise_var + p[:, 1:].sum(axis=1) - own
    r = inst.ref_user
    b0 = inst.noise_var[r] + p[r, 1:].sum()
    return t, b, b0


def update_aux(inst: ProblemInstance, beams: BeamformerSet) -> AuxState:
    """Closed-form optimal auxiliaries for the current beamformers."""
    t, b, b0 = _interference(inst, beams.stacked())
    u = inst.num_users
    z = t[np.arange(u), 1 + np.arange(u)] / b
    z0 = t[inst.ref_user, 0] / b0
    return AuxState(complex(z0), z)


def surrogate_terms(
    inst: ProblemInstance, beams: BeamformerSet, aux: AuxState
) -> SurrogateTerms:
    """Evaluate phi_k and phi0 at arbitrary (beams, aux).

    phi_k = 1 + 2 Re{conj(z_k) h_k^H v_k} - |z_k|^2 b_k and likewise phi0
    with the common-stream numerator and denominator at the reference user.
    At aux = update_aux(beams) these collapse to 1 + SINR.
    """
    t, b, b0 = _interference(inst, beams.stacked())
    u = inst.num_users
    own = t[np.arange(u), 1 + np.arange(u)]
    phi = 1.0 + 2.0 * np.real(np.conj(aux.z) * own) - np.abs(aux.z) ** 2 * b
    tr0 = t[inst.ref_user, 0]
    phi0 = 1.0 + 2.0 * (np.conj(aux.z0) * tr0).real - abs(aux.z0) ** 2 * b0
    return SurrogateTerms(float(phi0), phi)


def penalized_objective(
    inst: ProblemInstance,
    beams: BeamformerSet,
    alloc: RateAllocation,
    aux: AuxState,
    lam: float,
) -> float:
    """L = sum_k f_k (rc_k + log2 phi_k) - lam (sum_k rc_k - log2 phi0).

    The penalty couples the common-rate budget into the objective; lam > 0.
    Raises NonPositivePhiError naming the offending term when a log argument
    is not positive (callers keep phi positive via step-size control).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    terms = surrogate_terms(inst, beams, aux)
    if terms.phi0 <= 0.0:
        raise NonPositivePhiError("phi0", terms.phi0)
    bad = np.flatnonzero(terms.phi <= 0.0)
    if bad.size:
        k = int(bad[0])
        raise NonPositivePhiError(f"phi[{k}]", float(terms.phi[k]))
    rc = alloc.rc
    value = float(np.dot(inst.weights, rc + np.log2(terms.phi)))
    value -= lam * (float(rc.sum()) - np.log2(terms.phi0))
    return value
