"""Projected-gradient machinery for the penalized WSR objective.

Contains the analytic gradients of L, the plain ascent step, the power and
common-rate projections, and two solvers built from them:

* ``solve_pgd``   — single-loop PGD: refresh auxiliaries every iteration,
                    take one ascent step, project.
* ``solve_fp_oracle`` — classic FP alternation: freeze auxiliaries, run an
                    inner projected gradient ascent to (near) convergence on
                    the concave surrogate, refresh auxiliaries, repeat.  Used
                    to produce training labels, hence "oracle".

Gradient convention: for the real objective L and complex variable x, the
returned gradient G satisfies d/dt L(x + t d)|_{t=0} = Re{G^H d}; stacking
[Re G; Im G] is the ordinary real gradient.  (The z factors enter the
beamformer gradients unconjugated — that is what this identity forces for
the surrogate as defined in ``surrogate_terms``.)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backends
from .model import (
    LN2,
    BeamformerSet,
    ProblemInstance,
    RateAllocation,
    check_feasibility,
    compute_rates,
    wsr,
)
from .transform import AuxState, NonPositivePhiError, _interference, surrogate_terms


@dataclass
class GradientParts:
    """Raw direction terms before the 1/phi weighting is applied.

    zeta[k]    : numerator direction of user k's own surrogate.
    beta[j, k] : interference pull of user j's surrogate on v_k (diag unused).
    o[k]       : common-stream penalty pull on v_k (already carries 1/phi0).
    """

    zeta: np.ndarray
    beta: np.ndarray
    o: np.ndarray


@dataclass
class GradientSet:
    g_rc: np.ndarray
    g_v0: np.ndarray
    g_v: np.ndarray
    parts: Optional[GradientParts] = None


@dataclass
class StepSizes:
    """Per-variable ascent step sizes (all strictly positive)."""

    alpha_rc: np.ndarray
    alpha_v0: float
    alpha_v: np.ndarray

    @classmethod
    def uniform(cls, num_users: int, value: float = 1e-3) -> "StepSizes":
        return cls(
            np.full(num_users, value), float(value), np.full(num_users, value)
        )

    def validate(self) -> None:
        if (
            np.any(self.alpha_rc <= 0)
            or self.alpha_v0 <= 0
            or np.any(self.alpha_v <= 0)
        ):
            raise ValueError("step sizes must be strictly positive")


@dataclass
class SolverOptions:
    """Knobs shared by both solvers.

    lam        : penalty factor coupling the common-rate constraint into L.
    steps      : StepSizes; None means uniform 1e-3 for the instance's U.
    max_iters  : outer-iteration cap.
    tol        : stop when |WSR_{i+1} - WSR_i| < tol.
    inner_iters: inner-ascent budget per outer iteration (oracle only).
    inner_step : step size of that inner ascent.
    step_decay : geometric per-iteration step decay for solve_pgd (1 = off).
    rc_mode    : common-rate projection mode used by solve_pgd.
    seed       : RNG seed for the random initialization.
    """

    lam: float = 1.0
    steps: Optional[StepSizes] = None
    max_iters: int = 2000
    tol: float = 1e-8
    inner_iters: int = 500
    inner_step: float = 1e-3
    step_decay: float = 1.0
    rc_mode: str = "simplified"
    seed: int = 0

    def validate(self) -> None:
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.max_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration budgets must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 < self.step_decay <= 1:
            raise ValueError("step_decay must lie in (0, 1]")
        if self.rc_mode not in ("simplified", "proportional"):
            raise ValueError("rc_mode must be 'simplified' or 'proportional'")
        if self.steps is not None:
            self.steps.validate()

    def resolved_steps(self, num_users: int) -> StepSizes:
        if self.steps is None:
            return StepSizes.uniform(num_users)
        return self.steps

    @classmethod
    def oracle_defaults(cls, seed: int = 0) -> "SolverOptions":
        """Stopping precision 1e-2 on |dWSR| per outer FP iteration."""
        return cls(max_iters=100, tol=1e-2, inner_iters=500, seed=seed)


@dataclass
class SolverTrace:
    wsr_per_iter: np.ndarray
    feasible_per_iter: np.ndarray
    iterations_used: int
    converged: bool

    def rows(self):
        """(iter, wsr, feasible) tuples, CSV-friendly."""
        return [
            (i, float(w), bool(fl))
            for i, (w, fl) in enumerate(
                zip(self.wsr_per_iter, self.feasible_per_iter)
            )
        ]


def gradients(
    inst: ProblemInstance,
    beams: BeamformerSet,
    aux: AuxState,
    lam: float,
    include_parts: bool = False,
) -> GradientSet:
    """Analytic gradients of the penalized objective L at (beams, rc, aux).

    g_rc is constant in the beams: f_k - lam.  The beamformer gradients
    decompose into the own-stream pull zeta_k/phi_k, interference pulls
    beta_{j,k}/phi_j from every other user's surrogate, and the
    common-stream penalty pull o_k.
    """
    terms = surrogate_terms(inst, beams, aux)
    if terms.phi0 <= 0.0:
        raise NonPositivePhiError("phi0", terms.phi0)
    bad = np.flatnonzero(terms.phi <= 0.0)
    if bad.size:
        k = int(bad[0])
        raise NonPositivePhiError(f"phi[{k}]", float(terms.phi[k]))

    h = inst.channels
    f = inst.weights
    u = inst.num_users
    r = inst.ref_user
    t, _, _ = _interference(inst, beams.stacked())
    z, z0 = aux.z, aux.z0

    g_rc = f - lam
    g_v0 = (2.0 * lam * z0 / (terms.phi0 * LN2)) * h[r]

    zeta = (2.0 * f * z / LN2)[:, None] * h
    # beta[j, k] = -2 |z_j|^2 f_j (h_j^H v_k) h_j / ln2
    cross = (-2.0 * np.abs(z) ** 2 * f / LN2)[:, None] * t[:, 1:]
    np.fill_diagonal(cross, 0.0)
    o = (-2.0 * lam * np.abs(z0) ** 2 / (terms.phi0 * LN2)) * t[r, 1:][:, None] * h[r]

    g_v = zeta / terms.phi[:, None] + (cross / terms.phi[:, None]).T @ h + o

    parts = None
    if include_parts:
        beta = cross[:, :, None] * h[:, None, :]
        parts = GradientParts(zeta, beta, o)
    return GradientSet(g_rc, g_v0, g_v, parts)


def ascent_step(
    beams: BeamformerSet,
    alloc: RateAllocation,
    grads: GradientSet,
    steps: StepSizes,
):
    """One plain ascent step; returns the pre-projection (beams, rc) pair.

    The tilde rc is a bare array because it may go negative before the
    common-rate projection restores feasibility.
    """
    tilde = BeamformerSet(
        beams.v0 + steps.alpha_v0 * grads.g_v0,
        beams.v + steps.alpha_v[:, None] * grads.g_v,
    )
    tilde_rc = alloc.rc + steps.alpha_rc * grads.g_rc
    return tilde, tilde_rc


def project_beamformers(
    tilde: BeamformerSet, power_budget: float, p0: float
) -> BeamformerSet:
    """Scale each beam along its own direction onto the power constraint set.

    Rows keep their direction; squared norms become
    a*_k = (max(n_k, p0) - p0) / sum * (budget - (U+1) p0) + p0,
    which sums to the budget exactly and respects the per-beam minimum.
    When every row is at or below p0 the surplus is split equally.
    """
    if p0 < 0:
        raise ValueError("p0 must be nonnegative")
    stacked = tilde.stacked()
    n_beams = stacked.shape[0]
    if power_budget <= n_beams * p0:
        raise ValueError("power budget must exceed (U+1) * p0")
    n = np.sum(np.abs(stacked) ** 2, axis=1)
    zero = n == 0.0
    has_zero = bool(zero.any())
    if has_zero:
        if p0 > 0:
            raise ValueError(
                "zero beamformer row %d cannot meet the minimum power"
                % int(np.flatnonzero(zero)[0])
            )
        if np.all(zero):
            raise ValueError("all beamformer rows are zero; no directions")
    abar = np.maximum(n, p0) - p0
    surplus = power_budget - n_beams * p0
    total = abar.sum()
    if total > 0.0:
        a_star = abar / total * surplus + p0
    else:
        a_star = np.full(n_beams, power_budget / n_beams)
    if not has_zero:
        scale = np.sqrt(a_star / n)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(zero, 0.0, np.sqrt(a_star / np.where(zero, 1.0, n)))
    return BeamformerSet.from_stacked(stacked * scale[:, None])


def project_common_rate(
    tilde_rc: Optional[np.ndarray],
    inst: ProblemInstance,
    beams: BeamformerSet,
    mode: str = "simplified",
) -> RateAllocation:
    """Map rate shares back onto {rc >= 0, sum rc <= min common capacity}.

    simplified: hand the whole budget min_c to the highest-weight user
    (lowest index on ties) — optimal for the linear WSR objective.
    proportional: split min_c proportionally to the clipped tilde shares,
    falling back to simplified when they are all nonpositive.
    """
    report = compute_rates(inst, beams)
    m = report.min_common
    u = inst.num_users
    rc = np.zeros(u)
    if mode == "simplified":
        rc[int(np.argmax(inst.weights))] = m
    elif mode == "proportional":
        if tilde_rc is None:
            raise ValueError("proportional mode needs the pre-projection shares")
        pos = np.maximum(np.asarray(tilde_rc, dtype=np.float64), 0.0)
        s = pos.sum()
        if s > 0.0:
            rc = pos / s * m
        else:
            rc[int(np.argmax(inst.weights))] = m
    else:
        raise ValueError("mode must be 'simplified' or 'proportional'")
    return RateAllocation(rc)


def init_beamformers(inst: ProblemInstance, rng: np.random.Generator):
    """Random feasible starting point: CSCG entries, projected, rc projected."""
    shape = (inst.num_users + 1, inst.num_antennas)
    raw = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    beams = project_beamformers(
        BeamformerSet.from_stacked(raw), inst.power_budget, inst.p0
    )
    alloc = project_common_rate(None, inst, beams, "simplified")
    return beams, alloc


def mrt_beamformers(inst: ProblemInstance):
    """Matched-filter baseline: each beam points along its user's channel
    (the common beam along the weakest user's), equal power split."""
    h = inst.channels
    dirs = h / np.linalg.norm(h, axis=1, keepdims=True)
    stacked = np.vstack([dirs[inst.ref_user][None, :], dirs])
    power = inst.power_budget / (inst.num_users + 1)
    beams = BeamformerSet.from_stacked(stacked * np.sqrt(power))
    alloc = project_common_rate(None, inst, beams, "simplified")
    return beams, alloc


def _instance_arrays(inst: ProblemInstance):
    return (
        np.ascontiguousarray(inst.channels, dtype=np.complex128),
        np.ascontiguousarray(inst.weights, dtype=np.float64),
        np.ascontiguousarray(inst.noise_var, dtype=np.float64),
        int(inst.ref_user),
        float(inst.p0),
        float(inst.power_budget),
    )


def solve_pgd(
    inst: ProblemInstance,
    opts: SolverOptions,
    init: Optional[BeamformerSet] = None,
):
    """Single-loop PGD on L: aux refresh, ascent step, both projections.

    Stops when the per-iteration WSR change drops below opts.tol or the
    iteration cap is hit.  Deterministic given (inst, opts, init).
    """
    opts.validate()
    inst.validate()
    kern = backends.get_backend()
    h, f, nv, ref, p0, budget = _instance_arrays(inst)
    if init is None:
        rng = np.random.default_rng(opts.seed)
        beams, alloc = init_beamformers(inst, rng)
    else:
        beams = project_beamformers(init, budget, p0)
        alloc = project_common_rate(None, inst, beams, "simplified")
    steps = opts.resolved_steps(inst.num_users)
    steps.validate()
    v_out, rc_out, wsr_trace, feas_trace, converged = kern.pgd_run(
        h,
        f,
        nv,
        ref,
        p0,
        budget,
        np.ascontiguousarray(beams.stacked()),
        np.ascontiguousarray(alloc.rc, dtype=np.float64),
        float(opts.lam),
        np.ascontiguousarray(steps.alpha_rc, dtype=np.float64),
        float(steps.alpha_v0),
        np.ascontiguousarray(steps.alpha_v, dtype=np.float64),
        float(opts.step_decay),
        1 if opts.rc_mode == "proportional" else 0,
        int(opts.max_iters),
        float(opts.tol),
    )
    trace = SolverTrace(
        wsr_trace, feas_trace.astype(bool), len(wsr_trace), bool(converged)
    )
    return BeamformerSet.from_stacked(v_out), RateAllocation(rc_out), trace


def solve_fp_oracle(
    inst: ProblemInstance,
    opts: SolverOptions,
    init: Optional[BeamformerSet] = None,
):
    """FP alternation used as the labeling oracle.

    Each outer iteration freezes the auxiliaries, maximizes the concave
    surrogate over the beams by inner projected gradient ascent, refreshes
    the auxiliaries, and re-projects the common rate.  A candidate that
    fails to improve the WSR is discarded and the loop stops, so the
    recorded trace is non-decreasing by construction.

    The inner ascent weights the common-stream surrogate by max_k f_k: the
    simplified rc projection hands the whole common budget to the
    highest-weight user, so that is the weight the common rate earns in the
    WSR.
    """
    opts.validate()
    inst.validate()
    kern = backends.get_backend()
    h, f, nv, ref, p0, budget = _instance_arrays(inst)
    if init is None:
        rng = np.random.default_rng(opts.seed)
        beams, alloc = init_beamformers(inst, rng)
    else:
        beams = project_beamformers(init, budget, p0)
        alloc = project_common_rate(None, inst, beams, "simplified")
    lam_inner = float(f.max())

    best = wsr(inst, beams, alloc)
    wsr_hist: list[float] = []
    feas_hist: list[bool] = []
    converged = False
    from .transform import update_aux  # local import avoids a cycle at module load

    for _ in range(opts.max_iters):
        aux = update_aux(inst, beams)
        v_new = kern.inner_pga(
            h,
            f,
            nv,
            ref,
            p0,
            budget,
            np.ascontiguousarray(beams.stacked()),
            np.ascontiguousarray(aux.z, dtype=np.complex128),
            complex(aux.z0),
            lam_inner,
            float(opts.inner_step),
            int(opts.inner_iters),
        )
        cand_beams = BeamformerSet.from_stacked(v_new)
        cand_alloc = project_common_rate(None, inst, cand_beams, "simplified")
        cand = wsr(inst, cand_beams, cand_alloc)
        if cand < best:
            converged = True
            break
        beams, alloc = cand_beams, cand_alloc
        improved = cand - best
        best = cand
        wsr_hist.append(best)
        feas_hist.append(check_feasibility(inst, beams, alloc).feasible)
        if improved < opts.tol:
            converged = True
            break

    trace = SolverTrace(
        np.asarray(wsr_hist, dtype=np.float64),
        np.asarray(feas_hist, dtype=bool),
        len(wsr_hist),
        converged,
    )
    return beams, alloc, trace
