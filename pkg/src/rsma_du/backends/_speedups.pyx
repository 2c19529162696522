# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled twin of python_ref.

Semantics live in python_ref; every routine here mirrors its numpy
counterpart loop-for-loop.  Tiny floating-point differences (summation
order) are expected; parity tests pin them below 1e-10.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport fabs, log, log2, sqrt

cdef double LN2 = log(2.0)
cdef double _FTOL = 1e-9
cdef double _PHI_FLOOR = 1e-12


cdef inline double _sqmag(double complex x) noexcept nogil:
    return x.real * x.real + x.imag * x.imag


cdef void _crosstalk(
    double complex[:, ::1] h, double complex[:, ::1] v, double complex[:, ::1] t
) noexcept nogil:
    """t[k, j] = sum_m conj(h[k, m]) v[j, m]."""
    cdef Py_ssize_t u = h.shape[0], m = h.shape[1], nb = v.shape[0]
    cdef Py_ssize_t k, j, i
    cdef double complex acc
    for k in range(u):
        for j in range(nb):
            acc = 0
            for i in range(m):
                acc = acc + h[k, i].conjugate() * v[j, i]
            t[k, j] = acc


cdef int _project_c(
    double complex[:, ::1] vt,
    double p0,
    double budget,
    double complex[:, ::1] out,
    double[::1] nwork,
) except -1:
    """Direction-preserving power projection; errors match the reference."""
    cdef Py_ssize_t nb = vt.shape[0], m = vt.shape[1]
    cdef Py_ssize_t j, i
    cdef double total = 0.0, abar_j, a_star_j, scale, s
    cdef bint any_zero = False, all_zero = True
    for j in range(nb):
        s = 0.0
        for i in range(m):
            s += _sqmag(vt[j, i])
        nwork[j] = s
        if s == 0.0:
            any_zero = True
        else:
            all_zero = False
    if any_zero:
        if p0 > 0.0:
            for j in range(nb):
                if nwork[j] == 0.0:
                    raise ValueError(
                        "zero beamformer row %d cannot meet the minimum power"
                        % j
                    )
        if all_zero:
            raise ValueError("all beamformer rows are zero; no directions")
    for j in range(nb):
        abar_j = nwork[j] if nwork[j] > p0 else p0
        total += abar_j - p0
    for j in range(nb):
        if total > 0.0:
            abar_j = (nwork[j] if nwork[j] > p0 else p0) - p0
            a_star_j = abar_j / total * (budget - nb * p0) + p0
        else:
            a_star_j = budget / nb
        if nwork[j] == 0.0:
            scale = 0.0
        else:
            scale = sqrt(a_star_j / nwork[j])
        for i in range(m):
            out[j, i] = vt[j, i] * scale
    return 0


cdef void _tight_aux_c(
    double complex[:, ::1] t,
    double[::1] nv,
    Py_ssize_t ref,
    double complex[::1] z,
    double complex *z0,
    double[::1] phi,
    double *phi0,
    double[::1] b,
    double *b0,
) noexcept nogil:
    cdef Py_ssize_t u = t.shape[0]
    cdef Py_ssize_t k, j
    cdef double s, own
    for k in range(u):
        s = nv[k]
        for j in range(u):
            s += _sqmag(t[k, 1 + j])
        own = _sqmag(t[k, 1 + k])
        b[k] = s - own
        z[k] = t[k, 1 + k] / b[k]
        phi[k] = 1.0 + own / b[k]
    s = nv[ref]
    for j in range(u):
        s += _sqmag(t[ref, 1 + j])
    b0[0] = s
    z0[0] = t[ref, 0] / s
    phi0[0] = 1.0 + _sqmag(t[ref, 0]) / s


cdef void _ascent_dirs_c(
    double complex[:, ::1] h,
    double[::1] f,
    Py_ssize_t ref,
    double complex[:, ::1] t,
    double complex[::1] z,
    double complex z0,
    double[::1] phi,
    double phi0,
    double lam,
    double complex[::1] g0,
    double complex[:, ::1] gv,
) noexcept nogil:
    cdef Py_ssize_t u = h.shape[0], m = h.shape[1]
    cdef Py_ssize_t k, j, i
    cdef double complex coef0, zw, cw, ow, acc
    coef0 = 2.0 * lam * z0 / (phi0 * LN2)
    for i in range(m):
        g0[i] = coef0 * h[ref, i]
    for k in range(u):
        zw = 2.0 * f[k] * z[k] / (phi[k] * LN2)
        ow = (-2.0 * lam * _sqmag(z0) / (phi0 * LN2)) * t[ref, 1 + k]
        for i in range(m):
            acc = zw * h[k, i] + ow * h[ref, i]
            gv[k, i] = acc
        for j in range(u):
            if j == k:
                continue
            cw = (-2.0 * _sqmag(z[j]) * f[j] / (phi[j] * LN2)) * t[j, 1 + k]
            for i in range(m):
                gv[k, i] = gv[k, i] + cw * h[j, i]


def pgd_run(
    double complex[:, ::1] h,
    double[::1] f,
    double[::1] nv,
    Py_ssize_t ref,
    double p0,
    double budget,
    double complex[:, ::1] v_init,
    double[::1] rc_init,
    double lam,
    double[::1] a1,
    double a2,
    double[::1] a3,
    double decay,
    bint rc_prop,
    Py_ssize_t max_iters,
    double tol,
):
    cdef Py_ssize_t u = h.shape[0], m = h.shape[1], nb = u + 1
    cdef Py_ssize_t it, k, j, i, kstar, used = 0
    cdef double scale = 1.0, prev, w, minc, cval, s, own, denc, ssum, pos
    cdef bint converged = False, feas

    v_arr = np.array(v_init, dtype=np.complex128)
    rc_arr = np.array(rc_init, dtype=np.float64)
    vt_arr = np.empty((nb, m), dtype=np.complex128)
    t_arr = np.empty((u, nb), dtype=np.complex128)
    z_arr = np.empty(u, dtype=np.complex128)
    phi_arr = np.empty(u, dtype=np.float64)
    b_arr = np.empty(u, dtype=np.float64)
    g0_arr = np.empty(m, dtype=np.complex128)
    gv_arr = np.empty((u, m), dtype=np.complex128)
    nwork_arr = np.empty(nb, dtype=np.float64)
    c_arr = np.empty(u, dtype=np.float64)
    rp_arr = np.empty(u, dtype=np.float64)
    rt_arr = np.empty(u, dtype=np.float64)
    wsr_hist = np.empty(max_iters, dtype=np.float64)
    feas_hist = np.empty(max_iters, dtype=np.uint8)

    cdef double complex[:, ::1] v = v_arr
    cdef double[::1] rc = rc_arr
    cdef double complex[:, ::1] vt = vt_arr
    cdef double complex[:, ::1] t = t_arr
    cdef double complex[::1] z = z_arr
    cdef double[::1] phi = phi_arr
    cdef double[::1] b = b_arr
    cdef double complex[::1] g0 = g0_arr
    cdef double complex[:, ::1] gv = gv_arr
    cdef double[::1] nwork = nwork_arr
    cdef double[::1] c = c_arr
    cdef double[::1] rp = rp_arr
    cdef double[::1] rt = rt_arr
    cdef double[::1] whist = wsr_hist
    cdef unsigned char[::1] fhist = feas_hist
    cdef double complex z0
    cdef double phi0, b0

    kstar = 0
    for k in range(1, u):
        if f[k] > f[kstar]:
            kstar = k

    # WSR of the initial point anchors the first stopping comparison
    _crosstalk(h, v, t)
    prev = 0.0
    for k in range(u):
        denc = nv[k]
        for j in range(u):
            denc += _sqmag(t[k, 1 + j])
        own = _sqmag(t[k, 1 + k])
        prev += f[k] * (rc[k] + log2(1.0 + own / (denc - own)))

    for it in range(max_iters):
        _crosstalk(h, v, t)
        _tight_aux_c(t, nv, ref, z, &z0, phi, &phi0, b, &b0)
        _ascent_dirs_c(h, f, ref, t, z, z0, phi, phi0, lam, g0, gv)
        for i in range(m):
            vt[0, i] = v[0, i] + (scale * a2) * g0[i]
        for k in range(u):
            for i in range(m):
                vt[1 + k, i] = v[1 + k, i] + (scale * a3[k]) * gv[k, i]
        for k in range(u):
            rt[k] = rc[k] + (scale * a1[k]) * (f[k] - lam)
        _project_c(vt, p0, budget, v, nwork)
        _crosstalk(h, v, t)
        minc = 0.0
        for k in range(u):
            denc = nv[k]
            for j in range(u):
                denc += _sqmag(t[k, 1 + j])
            own = _sqmag(t[k, 1 + k])
            c[k] = log2(1.0 + _sqmag(t[k, 0]) / denc)
            rp[k] = log2(1.0 + own / (denc - own))
            if k == 0 or c[k] < minc:
                minc = c[k]
        for k in range(u):
            rc[k] = 0.0
        if rc_prop:
            ssum = 0.0
            for k in range(u):
                pos = rt[k] if rt[k] > 0.0 else 0.0
                ssum += pos
            if ssum > 0.0:
                for k in range(u):
                    pos = rt[k] if rt[k] > 0.0 else 0.0
                    rc[k] = pos / ssum * minc
            else:
                rc[kstar] = minc
        else:
            rc[kstar] = minc
        w = 0.0
        for k in range(u):
            w += f[k] * (rc[k] + rp[k])
        whist[it] = w
        # feasibility bookkeeping at the slack used everywhere else
        s = 0.0
        feas = True
        for k in range(nb):
            own = 0.0
            for i in range(m):
                own += _sqmag(v[k, i])
            s += own
            if own < p0 - _FTOL:
                feas = False
        if s > budget + _FTOL:
            feas = False
        ssum = 0.0
        for k in range(u):
            ssum += rc[k]
            if rc[k] < -_FTOL:
                feas = False
        if ssum > minc + _FTOL:
            feas = False
        fhist[it] = 1 if feas else 0
        used = it + 1
        if fabs(w - prev) < tol:
            converged = True
            break
        prev = w
        scale *= decay
    return (
        v_arr,
        rc_arr,
        wsr_hist[:used].copy(),
        feas_hist[:used].copy(),
        bool(converged),
    )


def inner_pga(
    double complex[:, ::1] h,
    double[::1] f,
    double[::1] nv,
    Py_ssize_t ref,
    double p0,
    double budget,
    double complex[:, ::1] v_init,
    double complex[::1] z,
    double complex z0,
    double lam,
    double step,
    Py_ssize_t iters,
):
    cdef Py_ssize_t u = h.shape[0], m = h.shape[1], nb = u + 1
    cdef Py_ssize_t it, k, j, i, half
    cdef double mu, s, phi0, phi0_c, b0
    cdef bint accepted, ok

    v_arr = np.array(v_init, dtype=np.complex128)
    vt_arr = np.empty((nb, m), dtype=np.complex128)
    cand_arr = np.empty((nb, m), dtype=np.complex128)
    t_arr = np.empty((u, nb), dtype=np.complex128)
    tc_arr = np.empty((u, nb), dtype=np.complex128)
    phi_arr = np.empty(u, dtype=np.float64)
    phic_arr = np.empty(u, dtype=np.float64)
    g0_arr = np.empty(m, dtype=np.complex128)
    gv_arr = np.empty((u, m), dtype=np.complex128)
    nwork_arr = np.empty(nb, dtype=np.float64)
    az2_arr = np.empty(u, dtype=np.float64)

    cdef double complex[:, ::1] v = v_arr
    cdef double complex[:, ::1] vt = vt_arr
    cdef double complex[:, ::1] cand = cand_arr
    cdef double complex[:, ::1] t = t_arr
    cdef double complex[:, ::1] tc = tc_arr
    cdef double[::1] phi = phi_arr
    cdef double[::1] phic = phic_arr
    cdef double complex[::1] g0 = g0_arr
    cdef double complex[:, ::1] gv = gv_arr
    cdef double[::1] nwork = nwork_arr
    cdef double[::1] az2 = az2_arr
    cdef double az02 = _sqmag(z0)
    cdef double complex tmp

    for k in range(u):
        az2[k] = _sqmag(z[k])

    # full-form surrogate values at a crosstalk matrix (frozen aux)
    cdef double bb

    _crosstalk(h, v, t)
    for k in range(u):
        bb = nv[k]
        for j in range(u):
            bb += _sqmag(t[k, 1 + j])
        bb -= _sqmag(t[k, 1 + k])
        tmp = z[k].conjugate() * t[k, 1 + k]
        phi[k] = 1.0 + 2.0 * tmp.real - az2[k] * bb
    bb = nv[ref]
    for j in range(u):
        bb += _sqmag(t[ref, 1 + j])
    tmp = z0.conjugate() * t[ref, 0]
    phi0 = 1.0 + 2.0 * tmp.real - az02 * bb

    for it in range(iters):
        _ascent_dirs_c(h, f, ref, t, z, z0, phi, phi0, lam, g0, gv)
        mu = 1.0
        accepted = False
        for half in range(60):
            for i in range(m):
                vt[0, i] = v[0, i] + (mu * step) * g0[i]
            for k in range(u):
                for i in range(m):
                    vt[1 + k, i] = v[1 + k, i] + (mu * step) * gv[k, i]
            _project_c(vt, p0, budget, cand, nwork)
            _crosstalk(h, cand, tc)
            ok = True
            for k in range(u):
                bb = nv[k]
                for j in range(u):
                    bb += _sqmag(tc[k, 1 + j])
                bb -= _sqmag(tc[k, 1 + k])
                tmp = z[k].conjugate() * tc[k, 1 + k]
                phic[k] = 1.0 + 2.0 * tmp.real - az2[k] * bb
                if phic[k] <= _PHI_FLOOR:
                    ok = False
            bb = nv[ref]
            for j in range(u):
                bb += _sqmag(tc[ref, 1 + j])
            tmp = z0.conjugate() * tc[ref, 0]
            phi0_c = 1.0 + 2.0 * tmp.real - az02 * bb
            if phi0_c <= _PHI_FLOOR:
                ok = False
            if ok:
                for k in range(nb):
                    for i in range(m):
                        v[k, i] = cand[k, i]
                for k in range(u):
                    for j in range(nb):
                        t[k, j] = tc[k, j]
                    phi[k] = phic[k]
                phi0 = phi0_c
                accepted = True
                break
            mu *= 0.5
        if not accepted:
            break
    return v_arr


cdef void _layer_coeffs_c(
    double complex[:, ::1] t,
    double[::1] f,
    Py_ssize_t ref,
    double complex[::1] z,
    double complex z0,
    double[::1] phi,
    double phi0,
    double complex *c0,
    double complex[::1] cs,
    double complex[:, ::1] cc,
    double complex[::1] cp,
) noexcept nogil:
    cdef Py_ssize_t u = f.shape[0]
    cdef Py_ssize_t k, j
    c0[0] = 2.0 * z0 / phi0
    for k in range(u):
        cs[k] = 2.0 * f[k] * z[k] / phi[k]
        cp[k] = (-2.0 * _sqmag(z0) / phi0) * t[ref, 1 + k]
    for j in range(u):
        for k in range(u):
            if j == k:
                cc[j, k] = 0
            else:
                cc[j, k] = (-2.0 * f[j] * _sqmag(z[j]) / phi[j]) * t[j, 1 + k]


def du_forward(
    double complex[:, ::1] h,
    double[::1] f,
    double[::1] nv,
    Py_ssize_t ref,
    double p0,
    double budget,
    double lam,
    double complex[:, ::1] v_init,
    double[:, ::1] w0,
    double[:, :, ::1] w,
    double[:, :, ::1] eta,
    double[::1] phi_env,
):
    cdef Py_ssize_t n_layers = w0.shape[0]
    cdef Py_ssize_t u = h.shape[0], m = h.shape[1], nb = u + 1, ne = u + 2
    cdef Py_ssize_t n, k, j, i, idx, kstar, mi
    cdef double s0, minc, denc, own, cval, acc
    cdef double complex c0, z0
    cdef double phi0, b0

    v_states_arr = np.empty((n_layers + 1, nb, m), dtype=np.complex128)
    v_tilde_arr = np.empty((n_layers, nb, m), dtype=np.complex128)
    t_states_arr = np.empty((n_layers + 1, u, nb), dtype=np.complex128)
    rc_states_arr = np.zeros((n_layers, u), dtype=np.float64)
    wsr_hat_arr = np.empty(n_layers, dtype=np.float64)
    min_idx_arr = np.empty(n_layers, dtype=np.int64)

    z_arr = np.empty(u, dtype=np.complex128)
    phi_arr = np.empty(u, dtype=np.float64)
    b_arr = np.empty(u, dtype=np.float64)
    cs_arr = np.empty(u, dtype=np.complex128)
    cc_arr = np.empty((u, u), dtype=np.complex128)
    cp_arr = np.empty(u, dtype=np.complex128)
    s_arr = np.empty(u, dtype=np.float64)
    mus_arr = np.empty(u, dtype=np.float64)
    mup_arr = np.empty(u, dtype=np.float64)
    muc_arr = np.empty((u, u), dtype=np.float64)
    nwork_arr = np.empty(nb, dtype=np.float64)
    c_arr = np.empty(u, dtype=np.float64)

    cdef double complex[:, :, ::1] v_states = v_states_arr
    cdef double complex[:, :, ::1] v_tilde = v_tilde_arr
    cdef double complex[:, :, ::1] t_states = t_states_arr
    cdef double[:, ::1] rc_states = rc_states_arr
    cdef double[::1] wsr_hat = wsr_hat_arr
    cdef cnp.int64_t[::1] min_idx = min_idx_arr
    cdef double complex[::1] z = z_arr
    cdef double[::1] phi = phi_arr
    cdef double[::1] b = b_arr
    cdef double complex[::1] cs = cs_arr
    cdef double complex[:, ::1] cc = cc_arr
    cdef double complex[::1] cp = cp_arr
    cdef double[::1] s = s_arr
    cdef double[::1] mus = mus_arr
    cdef double[::1] mup = mup_arr
    cdef double[:, ::1] muc = muc_arr
    cdef double[::1] nwork = nwork_arr
    cdef double[::1] c = c_arr

    kstar = 0
    for k in range(1, u):
        if f[k] > f[kstar]:
            kstar = k

    for k in range(nb):
        for i in range(m):
            v_states[0, k, i] = v_init[k, i]
    _crosstalk(h, v_states[0], t_states[0])

    for n in range(n_layers):
        _tight_aux_c(t_states[n], nv, ref, z, &z0, phi, &phi0, b, &b0)
        _layer_coeffs_c(t_states[n], f, ref, z, z0, phi, phi0, &c0, cs, cc, cp)
        s0 = 0.0
        for i in range(ne):
            s0 += phi_env[i] * w0[n, i]
        for k in range(u):
            acc = 0.0
            for i in range(ne):
                acc += w[n, k, i] * phi_env[i]
            s[k] = acc
            mus[k] = s[k] * eta[n, k, 0]
            mup[k] = s[k] * eta[n, k, u]
            idx = 1
            for j in range(u):
                if j == k:
                    muc[k, j] = 0.0
                else:
                    muc[k, j] = s[k] * eta[n, k, idx]
                    idx += 1
        for i in range(m):
            v_tilde[n, 0, i] = v_states[n, 0, i] + s0 * c0 * h[ref, i]
        for k in range(u):
            for i in range(m):
                v_tilde[n, 1 + k, i] = (
                    v_states[n, 1 + k, i]
                    + (mus[k] * cs[k]) * h[k, i]
                    + (mup[k] * cp[k]) * h[ref, i]
                )
            for j in range(u):
                if j == k:
                    continue
                for i in range(m):
                    v_tilde[n, 1 + k, i] = (
                        v_tilde[n, 1 + k, i] + (muc[k, j] * cc[j, k]) * h[j, i]
                    )
        _project_c(v_tilde[n], p0, budget, v_states[n + 1], nwork)
        _crosstalk(h, v_states[n + 1], t_states[n + 1])
        mi = 0
        minc = 0.0
        acc = 0.0
        for k in range(u):
            denc = nv[k]
            for j in range(u):
                denc += _sqmag(t_states[n + 1, k, 1 + j])
            own = _sqmag(t_states[n + 1, k, 1 + k])
            cval = log2(1.0 + _sqmag(t_states[n + 1, k, 0]) / denc)
            c[k] = cval
            acc += f[k] * log2(1.0 + own / (denc - own))
            if k == 0 or cval < minc:
                minc = cval
                mi = k
        min_idx[n] = mi
        rc_states[n, kstar] = minc
        wsr_hat[n] = acc + f[kstar] * minc
    return (
        v_states_arr,
        v_tilde_arr,
        t_states_arr,
        rc_states_arr,
        wsr_hat_arr,
        min_idx_arr,
    )


def du_backward(
    double complex[:, ::1] h,
    double[::1] f,
    double[::1] nv,
    Py_ssize_t ref,
    double p0,
    double budget,
    double lam,
    double[:, ::1] w0,
    double[:, :, ::1] w,
    double[:, :, ::1] eta,
    double[::1] phi_env,
    double complex[:, :, ::1] v_states,
    double complex[:, :, ::1] v_tilde,
    double complex[:, :, ::1] t_states,
    cnp.int64_t[::1] min_idx,
    double[::1] sbar,
    bint z_backprop,
):
    cdef Py_ssize_t n_layers = w0.shape[0]
    cdef Py_ssize_t u = h.shape[0], m = h.shape[1], nb = u + 1, ne = u + 2
    cdef Py_ssize_t n, k, j, i, idx, kstar, mi
    cdef double sb, s0, total, surplus, psum, sc, coefc, own_m, denc_m
    cdef double denc, denp, spv, coefp, acc, r_pen, a0
    cdef double complex c0, z0, ip0, gc0, gz0, tmp, tr0, coef_cplx
    cdef double phi0, b0, gphi0, coefb0, wb0

    gw0_arr = np.zeros((n_layers, ne), dtype=np.float64)
    gw_arr = np.zeros((n_layers, u, ne), dtype=np.float64)
    geta_arr = np.zeros((n_layers, u, u + 1), dtype=np.float64)

    gv_carry_arr = np.zeros((nb, m), dtype=np.complex128)
    gt_out_arr = np.empty((u, nb), dtype=np.complex128)
    gv_out_arr = np.empty((nb, m), dtype=np.complex128)
    gvt_arr = np.empty((nb, m), dtype=np.complex128)
    gt_in_arr = np.empty((u, nb), dtype=np.complex128)
    z_arr = np.empty(u, dtype=np.complex128)
    phi_arr = np.empty(u, dtype=np.float64)
    b_arr = np.empty(u, dtype=np.float64)
    cs_arr = np.empty(u, dtype=np.complex128)
    cc_arr = np.empty((u, u), dtype=np.complex128)
    cp_arr = np.empty(u, dtype=np.complex128)
    s_arr = np.empty(u, dtype=np.float64)
    mus_arr = np.empty(u, dtype=np.float64)
    mup_arr = np.empty(u, dtype=np.float64)
    muc_arr = np.empty((u, u), dtype=np.float64)
    ipmat_arr = np.empty((u, u), dtype=np.complex128)
    gmus_arr = np.empty(u, dtype=np.float64)
    gmuc_arr = np.empty((u, u), dtype=np.float64)
    gmup_arr = np.empty(u, dtype=np.float64)
    gcs_arr = np.empty(u, dtype=np.complex128)
    gcc_arr = np.empty((u, u), dtype=np.complex128)
    gcp_arr = np.empty(u, dtype=np.complex128)
    gz_arr = np.empty(u, dtype=np.complex128)
    gphi_arr = np.empty(u, dtype=np.float64)
    nvec_arr = np.empty(nb, dtype=np.float64)
    abar_arr = np.empty(nb, dtype=np.float64)
    a_star_arr = np.empty(nb, dtype=np.float64)
    gamma_arr = np.empty(nb, dtype=np.float64)
    rho_arr = np.empty(nb, dtype=np.float64)
    a_coef_arr = np.empty(nb, dtype=np.float64)
    q_arr = np.empty(nb, dtype=np.float64)

    cdef double[:, ::1] gw0 = gw0_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[:, :, ::1] geta = geta_arr
    cdef double complex[:, ::1] gv_carry = gv_carry_arr
    cdef double complex[:, ::1] gt_out = gt_out_arr
    cdef double complex[:, ::1] gv_out = gv_out_arr
    cdef double complex[:, ::1] gvt = gvt_arr
    cdef double complex[:, ::1] gt_in = gt_in_arr
    cdef double complex[::1] z = z_arr
    cdef double[::1] phi = phi_arr
    cdef double[::1] b = b_arr
    cdef double complex[::1] cs = cs_arr
    cdef double complex[:, ::1] cc = cc_arr
    cdef double complex[::1] cp = cp_arr
    cdef double[::1] s = s_arr
    cdef double[::1] mus = mus_arr
    cdef double[::1] mup = mup_arr
    cdef double[:, ::1] muc = muc_arr
    cdef double complex[:, ::1] ipmat = ipmat_arr
    cdef double[::1] gmus = gmus_arr
    cdef double[:, ::1] gmuc = gmuc_arr
    cdef double[::1] gmup = gmup_arr
    cdef double complex[::1] gcs = gcs_arr
    cdef double complex[:, ::1] gcc = gcc_arr
    cdef double complex[::1] gcp = gcp_arr
    cdef double complex[::1] gz = gz_arr
    cdef double[::1] gphi = gphi_arr
    cdef double[::1] nvec = nvec_arr
    cdef double[::1] abar = abar_arr
    cdef double[::1] a_star = a_star_arr
    cdef double[::1] gamma = gamma_arr
    cdef double[::1] rho = rho_arr
    cdef double[::1] a_coef = a_coef_arr
    cdef double[::1] q = q_arr
    cdef double gmu0, gs_k, r_cross, wb, coefb

    kstar = 0
    for k in range(1, u):
        if f[k] > f[kstar]:
            kstar = k

    for n in range(n_layers - 1, -1, -1):
        # ---- adjoint of wsr_hat at the post-projection state -------------
        for k in range(u):
            for j in range(nb):
                gt_out[k, j] = 0
        sb = sbar[n]
        if sb != 0.0:
            for k in range(u):
                denc = nv[k]
                for j in range(u):
                    denc += _sqmag(t_states[n + 1, k, 1 + j])
                own_m = _sqmag(t_states[n + 1, k, 1 + k])
                denp = denc - own_m
                spv = own_m / denp
                coefp = (sb * f[k]) / ((1.0 + spv) * LN2 * denp)
                for j in range(u):
                    if j == k:
                        continue
                    gt_out[k, 1 + j] = gt_out[k, 1 + j] + (
                        -2.0 * coefp * spv
                    ) * t_states[n + 1, k, 1 + j]
                gt_out[k, 1 + k] = gt_out[k, 1 + k] + 2.0 * coefp * t_states[
                    n + 1, k, 1 + k
                ]
            mi = <Py_ssize_t> min_idx[n]
            denc_m = nv[mi]
            for j in range(u):
                denc_m += _sqmag(t_states[n + 1, mi, 1 + j])
            sc = _sqmag(t_states[n + 1, mi, 0]) / denc_m
            coefc = (sb * f[kstar]) / ((1.0 + sc) * LN2 * denc_m)
            gt_out[mi, 0] = gt_out[mi, 0] + 2.0 * coefc * t_states[n + 1, mi, 0]
            for j in range(u):
                gt_out[mi, 1 + j] = gt_out[mi, 1 + j] + (
                    -2.0 * coefc * sc
                ) * t_states[n + 1, mi, 1 + j]
        for j in range(nb):
            for i in range(m):
                tmp = gv_carry[j, i]
                for k in range(u):
                    tmp = tmp + gt_out[k, j] * h[k, i]
                gv_out[j, i] = tmp

        # ---- projection backward ----------------------------------------
        total = 0.0
        for j in range(nb):
            acc = 0.0
            for i in range(m):
                acc += _sqmag(v_tilde[n, j, i])
            nvec[j] = acc
            abar[j] = (acc if acc > p0 else p0) - p0
            total += abar[j]
        surplus = budget - nb * p0
        for j in range(nb):
            if total > 0.0:
                a_star[j] = abar[j] / total * surplus + p0
            else:
                a_star[j] = budget / nb
            gamma[j] = sqrt(a_star[j] / nvec[j])
            acc = 0.0
            for i in range(m):
                tmp = gv_out[j, i].conjugate() * v_tilde[n, j, i]
                acc += tmp.real
            rho[j] = acc
            a_coef[j] = rho[j] / (2.0 * gamma[j] * nvec[j])
            q[j] = -rho[j] * gamma[j] / (2.0 * nvec[j])
        if total > 0.0:
            psum = 0.0
            for j in range(nb):
                psum += a_coef[j] * abar[j]
            for j in range(nb):
                if nvec[j] > p0:
                    q[j] = q[j] + (surplus / total) * (a_coef[j] - psum / total)
        for j in range(nb):
            for i in range(m):
                gvt[j, i] = gamma[j] * gv_out[j, i] + (2.0 * q[j]) * v_tilde[
                    n, j, i
                ]

        # ---- update backward at the pre-update state ---------------------
        _tight_aux_c(t_states[n], nv, ref, z, &z0, phi, &phi0, b, &b0)
        _layer_coeffs_c(t_states[n], f, ref, z, z0, phi, phi0, &c0, cs, cc, cp)
        s0 = 0.0
        for i in range(ne):
            s0 += phi_env[i] * w0[n, i]
        for k in range(u):
            acc = 0.0
            for i in range(ne):
                acc += w[n, k, i] * phi_env[i]
            s[k] = acc
            mus[k] = s[k] * eta[n, k, 0]
            mup[k] = s[k] * eta[n, k, u]
            idx = 1
            for j in range(u):
                if j == k:
                    muc[k, j] = 0.0
                else:
                    muc[k, j] = s[k] * eta[n, k, idx]
                    idx += 1

        for j in range(u):
            for k in range(u):
                tmp = 0
                for i in range(m):
                    tmp = tmp + h[j, i].conjugate() * gvt[1 + k, i]
                ipmat[j, k] = tmp
        ip0 = 0
        for i in range(m):
            ip0 = ip0 + gvt[0, i].conjugate() * h[ref, i]

        tmp = c0 * ip0
        gmu0 = tmp.real
        for k in range(u):
            tmp = cs[k] * ipmat[k, k].conjugate()
            gmus[k] = tmp.real
            tmp = cp[k] * ipmat[ref, k].conjugate()
            gmup[k] = tmp.real
            for j in range(u):
                if j == k:
                    gmuc[k, j] = 0.0
                else:
                    tmp = cc[j, k] * ipmat[j, k].conjugate()
                    gmuc[k, j] = tmp.real

        for i in range(ne):
            gw0[n, i] += gmu0 * phi_env[i]
        for k in range(u):
            gs_k = gmus[k] * eta[n, k, 0] + gmup[k] * eta[n, k, u]
            idx = 1
            for j in range(u):
                if j == k:
                    continue
                gs_k += gmuc[k, j] * eta[n, k, idx]
                idx += 1
            for i in range(ne):
                gw[n, k, i] += gs_k * phi_env[i]
            geta[n, k, 0] += gmus[k] * s[k]
            idx = 1
            for j in range(u):
                if j == k:
                    continue
                geta[n, k, idx] += gmuc[k, j] * s[k]
                idx += 1
            geta[n, k, u] += gmup[k] * s[k]

        gc0 = s0 * ip0.conjugate()
        for k in range(u):
            gcs[k] = mus[k] * ipmat[k, k]
            gcp[k] = mup[k] * ipmat[ref, k]
            for j in range(u):
                if j == k:
                    gcc[j, k] = 0
                else:
                    gcc[j, k] = muc[k, j] * ipmat[j, k]

        for k in range(u):
            gz[k] = 0
            gphi[k] = 0.0
            for j in range(nb):
                gt_in[k, j] = 0

        # C0 = 2 z0 / phi0
        gz0 = (2.0 / phi0) * gc0
        tmp = gc0.conjugate() * z0
        gphi0 = -(2.0 / (phi0 * phi0)) * tmp.real
        # Cs_k = 2 f_k z_k / phi_k
        for k in range(u):
            gz[k] = gz[k] + (2.0 * f[k] / phi[k]) * gcs[k]
            tmp = gcs[k].conjugate() * z[k]
            gphi[k] += -(2.0 * f[k] / (phi[k] * phi[k])) * tmp.real
        # Cc[j, k] = a_j T[j, 1+k],  a_j = -2 f_j |z_j|^2 / phi_j
        for j in range(u):
            r_cross = 0.0
            for k in range(u):
                gt_in[j, 1 + k] = gt_in[j, 1 + k] + (
                    -2.0 * f[j] * _sqmag(z[j]) / phi[j]
                ) * gcc[j, k]
                tmp = gcc[j, k].conjugate() * t_states[n, j, 1 + k]
                r_cross += tmp.real
            gphi[j] += (2.0 * f[j] * _sqmag(z[j]) / (phi[j] * phi[j])) * r_cross
            gz[j] = gz[j] + 2.0 * z[j] * ((-2.0 * f[j] / phi[j]) * r_cross)
        # Cp_k = a0 T[ref, 1+k],  a0 = -2 |z0|^2 / phi0
        a0 = -2.0 * _sqmag(z0) / phi0
        r_pen = 0.0
        for k in range(u):
            gt_in[ref, 1 + k] = gt_in[ref, 1 + k] + a0 * gcp[k]
            tmp = gcp[k].conjugate() * t_states[n, ref, 1 + k]
            r_pen += tmp.real
        gphi0 += (2.0 * _sqmag(z0) / (phi0 * phi0)) * r_pen
        gz0 = gz0 + 2.0 * z0 * ((-2.0 / phi0) * r_pen)

        tr0 = t_states[n, ref, 0]
        # phi_k = 1 + |T_kk|^2 / b_k
        for k in range(u):
            gt_in[k, 1 + k] = gt_in[k, 1 + k] + gphi[k] * (2.0 / b[k]) * t_states[
                n, k, 1 + k
            ]
            coefb = -gphi[k] * _sqmag(t_states[n, k, 1 + k]) / (b[k] * b[k])
            for j in range(u):
                if j == k:
                    continue
                gt_in[k, 1 + j] = gt_in[k, 1 + j] + (2.0 * coefb) * t_states[
                    n, k, 1 + j
                ]
        # phi0 = 1 + |T_r0|^2 / b0
        gt_in[ref, 0] = gt_in[ref, 0] + gphi0 * (2.0 / b0) * tr0
        coefb0 = -gphi0 * _sqmag(tr0) / (b0 * b0)
        for j in range(u):
            gt_in[ref, 1 + j] = gt_in[ref, 1 + j] + 2.0 * coefb0 * t_states[
                n, ref, 1 + j
            ]
        if z_backprop:
            # z_k = T_kk / b_k
            for k in range(u):
                gt_in[k, 1 + k] = gt_in[k, 1 + k] + gz[k] / b[k]
                tmp = gz[k].conjugate() * t_states[n, k, 1 + k]
                wb = -tmp.real / (b[k] * b[k])
                for j in range(u):
                    if j == k:
                        continue
                    gt_in[k, 1 + j] = gt_in[k, 1 + j] + (2.0 * wb) * t_states[
                        n, k, 1 + j
                    ]
            # z0 = T_r0 / b0
            gt_in[ref, 0] = gt_in[ref, 0] + gz0 / b0
            tmp = gz0.conjugate() * tr0
            wb0 = -tmp.real / (b0 * b0)
            for j in range(u):
                gt_in[ref, 1 + j] = gt_in[ref, 1 + j] + 2.0 * wb0 * t_states[
                    n, ref, 1 + j
                ]

        for j in range(nb):
            for i in range(m):
                tmp = gvt[j, i]
                for k in range(u):
                    tmp = tmp + gt_in[k, j] * h[k, i]
                gv_carry[j, i] = tmp
    return gw0_arr, gw_arr, geta_arr
