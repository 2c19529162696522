"""Shared helpers: small random problem builders and finite-difference tools.

The builders deliberately do not reuse the package's dataset sampler, so
fixture bugs and sampler bugs cannot cancel each other out.
"""

import numpy as np

from rsma_du.model import BeamformerSet, ProblemInstance, RateAllocation
from rsma_du.pgd import project_beamformers


def rand_instance(u=3, m=12, seed=0, p0=0.05, budget=1.0, var=10.0, noise=1.0):
    rng = np.random.default_rng(seed)
    h = np.sqrt(var / 2.0) * (
        rng.standard_normal((u, m)) + 1j * rng.standard_normal((u, m))
    )
    raw = rng.uniform(0.1, 1.0, u)
    f = raw / raw.sum()
    ref = int(np.argmin(np.linalg.norm(h, axis=1)))
    inst = ProblemInstance(h, f, np.full(u, noise), p0, budget, ref)
    inst.validate()
    return inst


def rand_beams(inst, seed=0, feasible=True):
    rng = np.random.default_rng(seed)
    shape = (inst.num_users + 1, inst.num_antennas)
    raw = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    beams = BeamformerSet.from_stacked(raw)
    if feasible:
        beams = project_beamformers(beams, inst.power_budget, inst.p0)
    return beams


def rand_alloc(inst, beams, seed=0):
    from rsma_du.model import compute_rates

    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, inst.num_users)
    m = compute_rates(inst, beams).min_common
    return RateAllocation(raw / raw.sum() * m)


def fd_complex_grad(func, arr, h=1e-6):
    """Central-difference gradient of a real scalar w.r.t. a complex array.

    Perturbs real and imaginary parts separately; returns the complex
    gradient G = dL/dRe + i dL/dIm, which satisfies dL = Re{G^H d}.
    ``func`` must read ``arr`` (mutated in place) on every call.
    """
    g = np.zeros_like(arr, dtype=np.complex128)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = func()
        flat[i] = orig - h
        fm = func()
        dre = (fp - fm) / (2.0 * h)
        flat[i] = orig + 1j * h
        fp = func()
        flat[i] = orig - 1j * h
        fm = func()
        dim = (fp - fm) / (2.0 * h)
        flat[i] = orig
        gf[i] = dre + 1j * dim
    return g


def fd_real_grad(func, arr, h=1e-6):
    """Central-difference gradient of a real scalar w.r.t. a real array."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = func()
        flat[i] = orig - h
        fm = func()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(approx, exact):
    num = np.linalg.norm(np.asarray(approx) - np.asarray(exact))
    den = max(np.linalg.norm(np.asarray(exact)), 1e-30)
    return num / den
