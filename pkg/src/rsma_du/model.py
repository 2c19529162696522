"""System model for downlink multi-user MISO rate-splitting.

A base station with M antennas serves U single-antenna users.  It transmits a
common stream through beamformer v_0 (decoded by everyone) on top of one
private stream per user through v_1..v_U.  Every user first decodes the common
stream treating all private streams as noise, then its own private stream
treating the other private streams as noise.

This module holds the problem containers plus the rate / objective /
feasibility arithmetic everything else is built on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

LN2 = math.log(2.0)

#: default slack used by feasibility checks
FEAS_TOL = 1e-9


def dbm_to_watts(power_dbm: float) -> float:
    """Convert a power level in dBm to watts."""
    return 10.0 ** ((power_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Scenario-level knobs from which problem instances are sampled.

    ``p_max_dbm`` is the total transmit power and ``p_c_dbm`` the static
    circuit consumption; the per-instance beamforming budget is the
    difference of the two in watts.  ``p0_upper`` bounds the per-beam
    minimum-power draw P_0 ~ U(0, p0_upper).
    """

    num_users: int = 3
    num_antennas: int = 12
    p_max_dbm: float = 33.0
    p_c_dbm: float = 30.0
    p0_upper: float = 0.125
    channel_variance: float = 10.0
    noise_variance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")
        if self.channel_variance <= 0:
            raise ValueError("channel_variance must be positive")
        if self.noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        if self.p0_upper < 0:
            raise ValueError("p0_upper must be nonnegative")
        budget = self.power_budget()
        if budget <= 0:
            raise ValueError("p_max_dbm must exceed p_c_dbm")
        # even the largest admissible P_0 must leave the budget feasible
        if (self.num_users + 1) * self.p0_upper >= budget:
            raise ValueError("p0_upper too large for the power budget")

    def power_budget(self) -> float:
        """Beamforming power budget in watts (total minus circuit power)."""
        return dbm_to_watts(self.p_max_dbm) - dbm_to_watts(self.p_c_dbm)

    def to_dict(self) -> dict:
        return {
            "num_users": self.num_users,
            "num_antennas": self.num_antennas,
            "p_max_dbm": self.p_max_dbm,
            "p_c_dbm": self.p_c_dbm,
            "p0_upper": self.p0_upper,
            "channel_variance": self.channel_variance,
            "noise_variance": self.noise_variance,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        return cls(**d)


@dataclass
class ProblemInstance:
    """One concrete beamforming problem.

    channels      : (U, M) complex, row k = h_k
    weights       : (U,) rate weights f_k, normalised to sum to one
    noise_var     : (U,) per-user noise variances sigma_k^2
    p0            : minimum power each beam must carry
    power_budget  : total transmit power available to the U+1 beams
    ref_user      : index of the weakest user (smallest ||h_k||); the common
                    rate is anchored to this user's surrogate during solving
    """

    channels: np.ndarray
    weights: np.ndarray
    noise_var: np.ndarray
    p0: float
    power_budget: float
    ref_user: int

    @property
    def num_users(self) -> int:
        return self.channels.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.channels.shape[1]

    def validate(self) -> None:
        h, f, nv = self.channels, self.weights, self.noise_var
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise ValueError("channels must be a (U, M) matrix")
        u = h.shape[0]
        if f.shape != (u,) or nv.shape != (u,):
            raise ValueError("weights/noise_var must have shape (U,)")
        if not np.iscomplexobj(h):
            raise ValueError("channels must be complex")
        if np.any(f < 0) or not math.isclose(float(f.sum()), 1.0, abs_tol=1e-9):
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(nv <= 0):
            raise ValueError("noise variances must be positive")
        if self.p0 < 0:
            raise ValueError("p0 must be nonnegative")
        if self.power_budget <= (u + 1) * self.p0:
            raise ValueError("power budget must exceed (U+1) * p0")
        if not 0 <= self.ref_user < u:
            raise ValueError("ref_user out of range")

    def with_channels(self, channels: np.ndarray) -> "ProblemInstance":
        """Copy with new channels; the weakest-user anchor is recomputed."""
        ref = int(np.argmin(np.linalg.norm(channels, axis=1)))
        return replace(self, channels=channels, ref_user=ref)


def make_instance(channels, weights, noise_var, p0, power_budget) -> ProblemInstance:
    """Assemble and validate a ProblemInstance; picks the weakest-user anchor."""
    h = np.ascontiguousarray(channels, dtype=np.complex128)
    f = np.ascontiguousarray(weights, dtype=np.float64)
    nv = np.ascontiguousarray(noise_var, dtype=np.float64)
    ref = int(np.argmin(np.linalg.norm(h, axis=1)))
    inst = ProblemInstance(h, f, nv, float(p0), float(power_budget), ref)
    inst.validate()
    return inst


@dataclass
class BeamformerSet:
    """Common beam v0 (M,) plus private beams v (U, M)."""

    v0: np.ndarray
    v: np.ndarray

    @classmethod
    def from_stacked(cls, stacked: np.ndarray) -> "BeamformerSet":
        return cls(stacked[0].copy(), stacked[1:].copy())

    def stacked(self) -> np.ndarray:
        """(U+1, M) array with the common beam in row 0."""
        return np.vstack([self.v0[None, :], self.v])

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.v0) ** 2) + np.sum(np.abs(self.v) ** 2))

    def copy(self) -> "BeamformerSet":
        return BeamformerSet(self.v0.copy(), self.v.copy())


@dataclass
class RateAllocation:
    """Per-user shares rc_k of the common rate (all nonnegative)."""

    rc: np.ndarray

    def total(self) -> float:
        return float(self.rc.sum())

    def copy(self) -> "RateAllocation":
        return RateAllocation(self.rc.copy())


@dataclass
class RateReport:
    """Achievable rates at a beamformer set.

    common_rates  : (U,) rate at which each user could decode the common stream
    private_rates : (U,) private-stream rates
    min_common    : min over common_rates; the common stream must be sent at
                    this rate so every user can decode it
    min_common_user : first index attaining the minimum
    """

    common_rates: np.ndarray
    private_rates: np.ndarray
    min_common: float
    min_common_user: int


def _crosstalk(inst: ProblemInstance, stacked: np.ndarray) -> np.ndarray:
    """T[k, j] = h_k^H v_j with column 0 the common beam."""
    return inst.channels.conj() @ stacked.T


def compute_rates(inst: ProblemInstance, beams: BeamformerSet) -> RateReport:
    """Common and private achievable rates (bits/s/Hz) for every user."""
    t = _crosstalk(inst, beams.stacked())
    p = np.abs(t) ** 2
    # all private streams interfere with the common stream
    denom_c = inst.noise_var + p[:, 1:].sum(axis=1)
    common = np.log2(1.0 + p[:, 0] / denom_c)
    own = p[np.arange(inst.num_users), 1 + np.arange(inst.num_users)]
    denom_p = denom_c - own
    private = np.log2(1.0 + own / denom_p)
    k = int(np.argmin(common))
    return RateReport(common, private, float(common[k]), k)


def wsr(inst: ProblemInstance, beams: BeamformerSet, alloc: RateAllocation) -> float:
    """Weighted sum rate  sum_k f_k (rc_k + rp_k)."""
    report = compute_rates(inst, beams)
    return float(np.dot(inst.weights, alloc.rc + report.private_rates))


@dataclass
class FeasibilityReport:
    power_ok: bool
    min_power_ok: bool
    common_ok: bool
    rc_nonneg: bool

    @property
    def feasible(self) -> bool:
        return self.power_ok and self.min_power_ok and self.common_ok and self.rc_nonneg


def check_feasibility(
    inst: ProblemInstance,
    beams: BeamformerSet,
    alloc: RateAllocation,
    tol: float = FEAS_TOL,
) -> FeasibilityReport:
    """Check the constraint set within slack ``tol``.

    Power budget, per-beam minimum power, decodability of the common rate
    (sum rc_k <= min_k common rate) and nonnegativity of the shares.
    """
    stacked = beams.stacked()
    per_beam = np.sum(np.abs(stacked) ** 2, axis=1)
    report = compute_rates(inst, beams)
    return FeasibilityReport(
        power_ok=bool(per_beam.sum() <= inst.power_budget + tol),
        min_power_ok=bool(np.all(per_beam >= inst.p0 - tol)),
        common_ok=bool(alloc.rc.sum() <= report.min_common + tol),
        rc_nonneg=bool(np.all(alloc.rc >= -tol)),
    )
