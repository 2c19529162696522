"""Pure-numpy reference implementation of the hot kernels.

Semantics here are authoritative; the Cython backend mirrors these routines
loop-for-loop.  All four kernels operate on raw arrays: channels h (U, M),
stacked beamformers V (U+1, M) with the common beam in row 0, and the
crosstalk matrix T[k, j] = h_k^H V_j with column 0 the common beam.

Backward passes use the convention that for a complex tensor x with adjoint
g, the loss perturbation is dL = sum Re{conj(g) * dx}.
"""

from __future__ import annotations

import numpy as np

LN2 = np.log(2.0)

#: slack used for the in-kernel feasibility bookkeeping
_FTOL = 1e-9

#: positivity floor for surrogate values during the frozen-aux inner ascent
_PHI_FLOOR = 1e-12


def _project(vt: np.ndarray, p0: float, budget: float) -> np.ndarray:
    """Direction-preserving projection onto the power constraint set."""
    nb = vt.shape[0]
    n = np.sum(np.abs(vt) ** 2, axis=1)
    zero = n == 0.0
    if np.any(zero):
        if p0 > 0.0:
            raise ValueError(
                "zero beamformer row %d cannot meet the minimum power"
                % int(np.flatnonzero(zero)[0])
            )
        if np.all(zero):
            raise ValueError("all beamformer rows are zero; no directions")
    abar = np.maximum(n, p0) - p0
    total = abar.sum()
    if total > 0.0:
        a_star = abar / total * (budget - nb * p0) + p0
    else:
        a_star = np.full(nb, budget / nb)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(zero, 0.0, np.sqrt(a_star / np.where(zero, 1.0, n)))
    return vt * scale[:, None]


def _rates(h, nv, v):
    """(t, c, rp) at a beamformer state: crosstalk, common and private rates."""
    u = h.shape[0]
    ar = np.arange(u)
    t = h.conj() @ v.T
    p = np.abs(t) ** 2
    own = p[ar, 1 + ar]
    denc = nv + p[:, 1:].sum(axis=1)
    c = np.log2(1.0 + p[:, 0] / denc)
    rp = np.log2(1.0 + own / (denc - own))
    return t, c, rp


def _tight_aux(t, nv, ref):
    """Auxiliaries and tight surrogate values at the state that produced t."""
    u = t.shape[0]
    ar = np.arange(u)
    p = np.abs(t) ** 2
    own_p = p[ar, 1 + ar]
    b = nv + p[:, 1:].sum(axis=1) - own_p
    b0 = nv[ref] + p[ref, 1:].sum()
    z = t[ar, 1 + ar] / b
    z0 = t[ref, 0] / b0
    phi = 1.0 + own_p / b
    phi0 = 1.0 + p[ref, 0] / b0
    return z, z0, phi, phi0, b, b0


def _ascent_directions(h, f, ref, t, z, z0, phi, phi0, lam):
    """Gradient of L in the beams: (g0, gv) for the common and private rows."""
    u = h.shape[0]
    g0 = (2.0 * lam * z0 / (phi0 * LN2)) * h[ref]
    zeta_w = 2.0 * f * z / (phi * LN2)
    cross_w = (-2.0 * np.abs(z) ** 2 * f / (phi * LN2))[:, None] * t[:, 1:]
    np.fill_diagonal(cross_w, 0.0)
    o_w = (-2.0 * lam * np.abs(z0) ** 2 / (phi0 * LN2)) * t[ref, 1:]
    gv = zeta_w[:, None] * h + cross_w.T @ h + o_w[:, None] * h[ref][None, :]
    return g0, gv


def _project_rc(rt, f, minc, proportional):
    u = f.shape[0]
    rc = np.zeros(u)
    if proportional:
        pos = np.maximum(rt, 0.0)
        s = pos.sum()
        if s > 0.0:
            return pos / s * minc
    rc[int(np.argmax(f))] = minc
    return rc


def _feasible(v, rc, p0, budget, minc):
    per = np.sum(np.abs(v) ** 2, axis=1)
    return (
        per.sum() <= budget + _FTOL
        and bool(np.all(per >= p0 - _FTOL))
        and rc.sum() <= minc + _FTOL
        and bool(np.all(rc >= -_FTOL))
    )


def pgd_run(
    h,
    f,
    nv,
    ref,
    p0,
    budget,
    v_init,
    rc_init,
    lam,
    a1,
    a2,
    a3,
    decay,
    rc_prop,
    max_iters,
    tol,
):
    """Single-loop PGD: per-iteration aux refresh, ascent step, projections.

    Returns (v, rc, wsr_trace, feasible_trace, converged).
    """
    u = h.shape[0]
    v = v_init.copy()
    rc = rc_init.copy()
    wsr_hist = np.empty(max_iters)
    feas_hist = np.empty(max_iters, dtype=np.uint8)
    _, _, rp0 = _rates(h, nv, v)
    prev = float(f @ (rc + rp0))
    converged = False
    scale = 1.0
    used = 0
    for it in range(max_iters):
        t, _, _ = _rates(h, nv, v)
        z, z0, phi, phi0, _, _ = _tight_aux(t, nv, ref)
        g0, gv = _ascent_directions(h, f, ref, t, z, z0, phi, phi0, lam)
        vt = np.empty_like(v)
        vt[0] = v[0] + (scale * a2) * g0
        vt[1:] = v[1:] + (scale * a3)[:, None] * gv
        rt = rc + (scale * a1) * (f - lam)
        v = _project(vt, p0, budget)
        _, c, rp = _rates(h, nv, v)
        minc = float(c.min())
        rc = _project_rc(rt, f, minc, rc_prop)
        w = float(f @ (rc + rp))
        wsr_hist[it] = w
        feas_hist[it] = _feasible(v, rc, p0, budget, minc)
        used = it + 1
        if abs(w - prev) < tol:
            converged = True
            break
        prev = w
        scale *= decay
    return v, rc, wsr_hist[:used].copy(), feas_hist[:used].copy(), converged


def inner_pga(h, f, nv, ref, p0, budget, v_init, z, z0, lam, step, iters):
    """Projected gradient ascent on the surrogate with frozen auxiliaries.

    phi must be evaluated in full quadratic form here (the tight shortcut is
    only valid at the aux fixed point).  A step whose projected candidate
    drives any phi to the floor is retried with a halved step; if no valid
    move remains the ascent stops early.
    """
    u = h.shape[0]
    ar = np.arange(u)
    az2 = np.abs(z) ** 2
    az02 = abs(z0) ** 2

    def phis(t):
        p = np.abs(t) ** 2
        own = t[ar, 1 + ar]
        b = nv + p[:, 1:].sum(axis=1) - p[ar, 1 + ar]
        b0 = nv[ref] + p[ref, 1:].sum()
        phi = 1.0 + 2.0 * np.real(np.conj(z) * own) - az2 * b
        phi0 = 1.0 + 2.0 * (np.conj(z0) * t[ref, 0]).real - az02 * b0
        return phi, phi0

    v = v_init.copy()
    t = h.conj() @ v.T
    phi, phi0 = phis(t)
    for _ in range(iters):
        g0, gv = _ascent_directions(h, f, ref, t, z, z0, phi, phi0, lam)
        mu = 1.0
        accepted = False
        for _half in range(60):
            vt = np.empty_like(v)
            vt[0] = v[0] + (mu * step) * g0
            vt[1:] = v[1:] + (mu * step) * gv
            cand = _project(vt, p0, budget)
            t_cand = h.conj() @ cand.T
            phi_c, phi0_c = phis(t_cand)
            if phi0_c > _PHI_FLOOR and np.all(phi_c > _PHI_FLOOR):
                v, t, phi, phi0 = cand, t_cand, phi_c, phi0_c
                accepted = True
                break
            mu *= 0.5
        if not accepted:
            break
    return v


def _layer_coeffs(t, f, ref, z, z0, phi, phi0):
    """Direction scalars of one update: C0, Cs_k, Cc[j, k], Cp_k."""
    u = f.shape[0]
    ar = np.arange(u)
    c0 = 2.0 * z0 / phi0
    cs = 2.0 * f * z / phi
    cc = (-2.0 * f * np.abs(z) ** 2 / phi)[:, None] * t[:, 1:]
    np.fill_diagonal(cc, 0.0)
    cp = (-2.0 * abs(z0) ** 2 / phi0) * t[ref, 1:]
    return c0, cs, cc, cp


def _eta_matrices(e_layer, u):
    """Unpack an eta row layout [self, crosses ascending, penalty] per user
    into (self (U,), cross (U, U) with cross[k, j], penalty (U,))."""
    eta_self = e_layer[:, 0]
    eta_p = e_layer[:, u]
    cross = np.zeros((u, u))
    for k in range(u):
        cols = [j for j in range(u) if j != k]
        cross[k, cols] = e_layer[k, 1:u]
    return eta_self, cross, eta_p


def du_forward(h, f, nv, ref, p0, budget, lam, v_init, w0, w, eta, phi_env):
    """Unrolled forward pass of the learned network.

    Layer n: tight aux at the current state, eta-weighted update scaled by
    the learned env projections, power projection, simplified common-rate
    projection.  Returns every intermediate needed by du_backward:
    (v_states, v_tilde, t_states, rc_states, wsr_hat, min_idx).
    """
    n_layers = w0.shape[0]
    u, m = h.shape
    ar = np.arange(u)
    kstar = int(np.argmax(f))

    v_states = np.empty((n_layers + 1, u + 1, m), dtype=np.complex128)
    v_tilde = np.empty((n_layers, u + 1, m), dtype=np.complex128)
    t_states = np.empty((n_layers + 1, u, u + 1), dtype=np.complex128)
    rc_states = np.zeros((n_layers, u))
    wsr_hat = np.empty(n_layers)
    min_idx = np.empty(n_layers, dtype=np.int64)

    v_states[0] = v_init
    t_states[0] = h.conj() @ v_init.T
    for n in range(n_layers):
        v = v_states[n]
        t = t_states[n]
        z, z0, phi, phi0, _, _ = _tight_aux(t, nv, ref)
        c0, cs, cc, cp = _layer_coeffs(t, f, ref, z, z0, phi, phi0)
        s0 = float(phi_env @ w0[n])
        s = w[n] @ phi_env
        eta_self, eta_cross, eta_p = _eta_matrices(eta[n], u)
        mus = s * eta_self
        muc = s[:, None] * eta_cross
        mup = s * eta_p
        vt = np.empty_like(v)
        vt[0] = v[0] + s0 * c0 * h[ref]
        vt[1:] = (
            v[1:]
            + (mus * cs)[:, None] * h
            + (muc * cc.T) @ h
            + (mup * cp)[:, None] * h[ref][None, :]
        )
        v_tilde[n] = vt
        v_new = _project(vt, p0, budget)
        v_states[n + 1] = v_new
        t_new = h.conj() @ v_new.T
        t_states[n + 1] = t_new
        p = np.abs(t_new) ** 2
        own = p[ar, 1 + ar]
        denc = nv + p[:, 1:].sum(axis=1)
        c = np.log2(1.0 + p[:, 0] / denc)
        rp = np.log2(1.0 + own / (denc - own))
        mi = int(np.argmin(c))
        minc = float(c[mi])
        min_idx[n] = mi
        rc_states[n, kstar] = minc
        wsr_hat[n] = float(f @ rp) + f[kstar] * minc
    return v_states, v_tilde, t_states, rc_states, wsr_hat, min_idx


def du_backward(
    h,
    f,
    nv,
    ref,
    p0,
    budget,
    lam,
    w0,
    w,
    eta,
    phi_env,
    v_states,
    v_tilde,
    t_states,
    min_idx,
    sbar,
    z_backprop,
):
    """Reverse-mode pass through the unrolled graph.

    ``sbar[n]`` is the upstream adjoint of wsr_hat at layer n (layer index
    0-based).  The argmin/argmax selections recorded in the forward are
    treated as constants; at the max(n, p0) projection kink the inactive
    (p0) branch derivative 0 is used.  Returns (gw0, gw, geta).
    """
    n_layers = w0.shape[0]
    u, m = h.shape
    ar = np.arange(u)
    kstar = int(np.argmax(f))
    nb = u + 1

    gw0 = np.zeros_like(w0)
    gw = np.zeros_like(w)
    geta = np.zeros_like(eta)
    gv_carry = np.zeros((nb, m), dtype=np.complex128)

    for n in range(n_layers - 1, -1, -1):
        # ---- adjoint of wsr_hat at the post-projection state -------------
        t_out = t_states[n + 1]
        gt_out = np.zeros((u, nb), dtype=np.complex128)
        sb = float(sbar[n])
        if sb != 0.0:
            p = np.abs(t_out) ** 2
            own = p[ar, 1 + ar]
            denc = nv + p[:, 1:].sum(axis=1)
            denp = denc - own
            sp = own / denp
            coefp = (sb * f) / ((1.0 + sp) * LN2 * denp)
            add = (-2.0 * coefp * sp)[:, None] * t_out[:, 1:]
            add[ar, ar] = 0.0
            gt_out[:, 1:] += add
            gt_out[ar, 1 + ar] += 2.0 * coefp * t_out[ar, 1 + ar]
            mi = int(min_idx[n])
            sc = p[mi, 0] / denc[mi]
            coefc = (sb * f[kstar]) / ((1.0 + sc) * LN2 * denc[mi])
            gt_out[mi, 0] += 2.0 * coefc * t_out[mi, 0]
            gt_out[mi, 1:] += -2.0 * coefc * sc * t_out[mi, 1:]
        gv_out = gv_carry + gt_out.T @ h

        # ---- projection backward ----------------------------------------
        vt = v_tilde[n]
        nvec = np.sum(np.abs(vt) ** 2, axis=1)
        abar = np.maximum(nvec, p0) - p0
        total = abar.sum()
        surplus = budget - nb * p0
        if total > 0.0:
            a_star = abar / total * surplus + p0
        else:
            a_star = np.full(nb, budget / nb)
        gamma = np.sqrt(a_star / nvec)
        rho = np.sum((np.conj(gv_out) * vt).real, axis=1)
        a_coef = rho / (2.0 * gamma * nvec)
        q = -rho * gamma / (2.0 * nvec)
        if total > 0.0:
            active = nvec > p0
            psum = float(np.sum(a_coef * abar))
            q = q + np.where(
                active, (surplus / total) * (a_coef - psum / total), 0.0
            )
        gvt = gamma[:, None] * gv_out + (2.0 * q)[:, None] * vt

        # ---- update backward at the pre-update state ---------------------
        t_in = t_states[n]
        z, z0, phi, phi0, b, b0 = _tight_aux(t_in, nv, ref)
        c0, cs, cc, cp = _layer_coeffs(t_in, f, ref, z, z0, phi, phi0)
        s0 = float(phi_env @ w0[n])
        s = w[n] @ phi_env
        eta_self, eta_cross, eta_p = _eta_matrices(eta[n], u)
        mus = s * eta_self
        muc = s[:, None] * eta_cross
        mup = s * eta_p

        # h_j^H gvt_{1+k} for every (j, k), and the common-row variants
        ipmat = h.conj() @ gvt[1:].T
        ipr = ipmat[ref, :]
        ip0 = np.vdot(gvt[0], h[ref])

        gmu0 = (c0 * ip0).real
        gmus = (cs * np.conj(ipmat[ar, ar])).real
        gmuc = (cc * np.conj(ipmat)).real.T
        np.fill_diagonal(gmuc, 0.0)
        gmup = (cp * np.conj(ipr)).real

        gw0[n] += gmu0 * phi_env
        gs = gmus * eta_self + (gmuc * eta_cross).sum(axis=1) + gmup * eta_p
        gw[n] += gs[:, None] * phi_env[None, :]
        geta[n][:, 0] += gmus * s
        for k in range(u):
            cols = [j for j in range(u) if j != k]
            geta[n][k, 1:u] += gmuc[k, cols] * s[k]
        geta[n][:, u] += gmup * s

        gc0 = s0 * np.conj(ip0)
        gcs = mus * ipmat[ar, ar]
        gcc = muc.T * ipmat
        np.fill_diagonal(gcc, 0.0)
        gcp = mup * ipr

        gz = np.zeros(u, dtype=np.complex128)
        gphi = np.zeros(u)
        gt_in = np.zeros((u, nb), dtype=np.complex128)

        # C0 = 2 z0 / phi0
        gz0 = (2.0 / phi0) * gc0
        gphi0 = -(2.0 / phi0**2) * (np.conj(gc0) * z0).real
        # Cs_k = 2 f_k z_k / phi_k
        gz += (2.0 * f / phi) * gcs
        gphi += -(2.0 * f / phi**2) * (np.conj(gcs) * z).real
        # Cc[j, k] = a_j T[j, 1+k],  a_j = -2 f_j |z_j|^2 / phi_j
        a_j = -2.0 * f * np.abs(z) ** 2 / phi
        gt_in[:, 1:] += a_j[:, None] * gcc
        r_cross = (np.conj(gcc) * t_in[:, 1:]).real.sum(axis=1)
        gphi += (2.0 * f * np.abs(z) ** 2 / phi**2) * r_cross
        gz += 2.0 * z * ((-2.0 * f / phi) * r_cross)
        # Cp_k = a0 T[ref, 1+k],  a0 = -2 |z0|^2 / phi0
        a0 = -2.0 * abs(z0) ** 2 / phi0
        gt_in[ref, 1:] += a0 * gcp
        r_pen = float((np.conj(gcp) * t_in[ref, 1:]).real.sum())
        gphi0 += (2.0 * abs(z0) ** 2 / phi0**2) * r_pen
        gz0 += 2.0 * z0 * ((-2.0 / phi0) * r_pen)

        own = t_in[ar, 1 + ar]
        tr0 = t_in[ref, 0]
        # phi_k = 1 + |T_kk|^2 / b_k
        gt_in[ar, 1 + ar] += gphi * (2.0 / b) * own
        coefb = -gphi * np.abs(own) ** 2 / b**2
        add = (2.0 * coefb)[:, None] * t_in[:, 1:]
        add[ar, ar] = 0.0
        gt_in[:, 1:] += add
        # phi0 = 1 + |T_r0|^2 / b0
        gt_in[ref, 0] += gphi0 * (2.0 / b0) * tr0
        coefb0 = -gphi0 * abs(tr0) ** 2 / b0**2
        gt_in[ref, 1:] += 2.0 * coefb0 * t_in[ref, 1:]
        if z_backprop:
            # z_k = T_kk / b_k
            gt_in[ar, 1 + ar] += gz / b
            wb = -(np.conj(gz) * own).real / b**2
            addz = (2.0 * wb)[:, None] * t_in[:, 1:]
            addz[ar, ar] = 0.0
            gt_in[:, 1:] += addz
            # z0 = T_r0 / b0
            gt_in[ref, 0] += gz0 / b0
            wb0 = -(np.conj(gz0) * tr0).real / b0**2
            gt_in[ref, 1:] += 2.0 * wb0 * t_in[ref, 1:]

        gv_carry = gvt + gt_in.T @ h
    return gw0, gw, geta
