# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geodesic shooting on the built-in level-set surfaces.

Same algorithm and surface formulas as ``_shoot_py.py``; the batch loop runs
without the GIL so slices can be processed on worker threads.
"""

import numpy as np

from libc.math cimport sqrt, fabs, pow

cdef enum:
    SPHERE = 0
    ELLIPSOID = 1
    PERTURBED = 2
    SNAP_MAXIT = 30

cdef double FD_REL = 1e-7
cdef double SNAP_TOL = 1e-13


cdef inline double dot3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void cpow(double re, double im, int k, double* ore, double* oim) noexcept nogil:
    cdef double r = 1.0, i = 0.0, t
    cdef int j
    for j in range(k):
        t = r * re - i * im
        i = r * im + i * re
        r = t
    ore[0] = r
    oim[0] = i


cdef void homog(double P, const double* dP, double quadP, int d, const double* x,
                const double* v, double rho, double* g, double* grad, double* q,
                bint want_q) noexcept nogil:
    cdef double rd = rho * rho if d == 2 else pow(rho, d)
    cdef double rd2 = rd * rho * rho
    cdef double xv, vv, pv
    cdef int i
    g[0] = P / rd
    for i in range(3):
        grad[i] = dP[i] / rd - d * P / rd2 * x[i]
    if want_q:
        xv = dot3(x, v)
        vv = dot3(v, v)
        pv = dot3(dP, v)
        q[0] = (quadP / rd - 2.0 * d * pv * xv / rd2 - d * P * vv / rd2
                + d * (d + 2.0) * P * xv * xv / (rd2 * rho * rho))


cdef void perturbed(const double* prm, const double* x, const double* v,
                    double* F, double* G, double* Q, bint want_q) noexcept nogil:
    cdef double R = prm[0], eps = prm[1]
    cdef int k = <int>(prm[2] + 0.5)
    cdef double rho = sqrt(dot3(x, x))
    cdef double w2r, w2i, w1r, w1i, wr, wi, ar, ai
    cdef double P1, P2, q1 = 0.0, q2 = 0.0, g1, g2, xv, vv
    cdef double dP1[3]
    cdef double dP2[3]
    cdef double gr1[3]
    cdef double gr2[3]
    cdef int i
    cpow(x[0], x[1], k - 2, &w2r, &w2i)
    w1r = w2r * x[0] - w2i * x[1]
    w1i = w2r * x[1] + w2i * x[0]
    wr = w1r * x[0] - w1i * x[1]
    P1 = wr
    dP1[0] = k * w1r
    dP1[1] = -k * w1i
    dP1[2] = 0.0
    ar = k * (k - 1.0) * w2r
    ai = k * (k - 1.0) * w2i
    if want_q:
        q1 = v[0] * v[0] * ar - 2.0 * v[0] * v[1] * ai - v[1] * v[1] * ar
    homog(P1, dP1, q1, k, x, v, rho, &g1, gr1, &q1, want_q)
    P2 = x[0] * x[2]
    dP2[0] = x[2]
    dP2[1] = 0.0
    dP2[2] = x[0]
    if want_q:
        q2 = 2.0 * v[0] * v[2]
    homog(P2, dP2, q2, 2, x, v, rho, &g2, gr2, &q2, want_q)
    F[0] = rho - R * (1.0 + eps * 0.5 * (g1 + g2))
    for i in range(3):
        G[i] = x[i] / rho - R * eps * 0.5 * (gr1[i] + gr2[i])
    if want_q:
        xv = dot3(x, v)
        vv = dot3(v, v)
        Q[0] = (vv - xv * xv / (rho * rho)) / rho - R * eps * 0.5 * (q1 + q2)


cdef void value_grad(int kind, const double* prm, const double* x, double* F, double* G) noexcept nogil:
    cdef int i
    if kind == SPHERE:
        F[0] = 0.5 * (dot3(x, x) - prm[0] * prm[0])
        for i in range(3):
            G[i] = x[i]
    elif kind == ELLIPSOID:
        F[0] = -0.5
        for i in range(3):
            G[i] = x[i] / (prm[i] * prm[i])
            F[0] += 0.5 * x[i] * G[i]
    else:
        perturbed(prm, x, NULL, F, G, NULL, False)


cdef double hess_quad(int kind, const double* prm, const double* x, const double* v) noexcept nogil:
    cdef double F, Q
    cdef double G[3]
    if kind == SPHERE:
        return dot3(v, v)
    elif kind == ELLIPSOID:
        return (v[0] * v[0] / (prm[0] * prm[0]) + v[1] * v[1] / (prm[1] * prm[1])
                + v[2] * v[2] / (prm[2] * prm[2]))
    perturbed(prm, x, v, &F, G, &Q, True)
    return Q


cdef void snap(int kind, const double* prm, double* x) noexcept nogil:
    cdef double F, gg, nrm, lim
    cdef double G[3]
    cdef int it, i
    if kind == SPHERE:
        nrm = sqrt(dot3(x, x))
        for i in range(3):
            x[i] = x[i] * (prm[0] / nrm)
        return
    lim = SNAP_TOL * (prm[0] if prm[0] > 1.0 else 1.0)
    for it in range(SNAP_MAXIT):
        value_grad(kind, prm, x, &F, G)
        gg = dot3(G, G)
        for i in range(3):
            x[i] -= F / gg * G[i]
        if fabs(F) <= lim * sqrt(gg):
            break


cdef inline void accel(int kind, const double* prm, const double* x, const double* v, double* a) noexcept nogil:
    cdef double F, q, gg
    cdef double G[3]
    cdef int i
    if kind == PERTURBED:
        perturbed(prm, x, v, &F, G, &q, True)
    else:
        value_grad(kind, prm, x, &F, G)
        q = hess_quad(kind, prm, x, v)
    gg = dot3(G, G)
    for i in range(3):
        a[i] = -q / gg * G[i]


cdef void rk4_step(int kind, const double* prm, double* x, double* v, double h, double speed) noexcept nogil:
    cdef double k1v[3]
    cdef double k2v[3]
    cdef double k3v[3]
    cdef double k4v[3]
    cdef double x2[3]
    cdef double v2[3]
    cdef double x3[3]
    cdef double v3[3]
    cdef double x4[3]
    cdef double v4[3]
    cdef double G[3]
    cdef double F, gn, vn, vd
    cdef int i
    accel(kind, prm, x, v, k1v)
    for i in range(3):
        x2[i] = x[i] + 0.5 * h * v[i]
        v2[i] = v[i] + 0.5 * h * k1v[i]
    accel(kind, prm, x2, v2, k2v)
    for i in range(3):
        x3[i] = x[i] + 0.5 * h * v2[i]
        v3[i] = v[i] + 0.5 * h * k2v[i]
    accel(kind, prm, x3, v3, k3v)
    for i in range(3):
        x4[i] = x[i] + h * v3[i]
        v4[i] = v[i] + h * k3v[i]
    accel(kind, prm, x4, v4, k4v)
    for i in range(3):
        x[i] = x[i] + (h / 6.0) * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i])
        v[i] = v[i] + (h / 6.0) * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i])
    snap(kind, prm, x)
    value_grad(kind, prm, x, &F, G)
    gn = sqrt(dot3(G, G))
    vd = dot3(v, G) / gn
    for i in range(3):
        v[i] -= vd * G[i] / gn
    vn = sqrt(dot3(v, v))
    for i in range(3):
        v[i] = v[i] * (speed / vn) if vn > 0.0 else 0.0


cdef void shoot_c(int kind, const double* prm, const double* x0, const double* v0,
                  int nsteps, int record_every, double T, double* out, double* xe) noexcept nogil:
    """Integrate; write recorded positions to ``out`` (may be NULL) and the end point to ``xe``."""
    cdef double x[3]
    cdef double v[3]
    cdef double speed, h = T / nsteps
    cdef int i, j
    for j in range(3):
        x[j] = x0[j]
        v[j] = v0[j]
    speed = sqrt(dot3(v, v))
    if out != NULL:
        for j in range(3):
            out[j] = x[j]
    for i in range(1, nsteps + 1):
        rk4_step(kind, prm, x, v, h, speed)
        if out != NULL and i % record_every == 0:
            for j in range(3):
                out[3 * (i // record_every) + j] = x[j]
    for j in range(3):
        xe[j] = x[j]


cdef int bvp_one(int kind, const double* prm, const double* p, const double* q, int nseg,
                 int nsub, double tol, int max_newton, double* out, double* length) noexcept nogil:
    cdef double d[3]
    cdef double G[3]
    cdef double n[3]
    cdef double v[3]
    cdef double e1[3]
    cdef double e2[3]
    cdef double trial[3]
    cdef double xe[3]
    cdef double xc[3]
    cdef double r[3]
    cdef double rn[3]
    cdef double J[6]
    cdef double F, gn, dn, vn, hs, a11, a12, a22, b1, b2, det, dl1, dl2, corr, dd, rnorm
    cdef int i, j, c, it, nsteps = nseg * nsub, status = 1
    for i in range(3):
        d[i] = q[i] - p[i]
    dn = sqrt(dot3(d, d))
    if dn <= 1e-14:
        for j in range(nseg + 1):
            for i in range(3):
                out[3 * j + i] = p[i]
        length[0] = 0.0
        return 0
    value_grad(kind, prm, p, &F, G)
    gn = sqrt(dot3(G, G))
    for i in range(3):
        n[i] = G[i] / gn
    vn = dot3(d, n)
    for i in range(3):
        v[i] = d[i] - vn * n[i]
    vn = sqrt(dot3(v, v))
    if vn > 0.0:
        for i in range(3):
            e1[i] = v[i] / vn
            v[i] = v[i] * (dn / vn)
    else:
        trial[0] = 0.0
        trial[1] = n[2]
        trial[2] = -n[1]
        if sqrt(dot3(trial, trial)) < 1e-6:
            trial[0] = -n[2]
            trial[1] = 0.0
            trial[2] = n[0]
        vn = sqrt(dot3(trial, trial))
        for i in range(3):
            e1[i] = trial[i] / vn
    e2[0] = n[1] * e1[2] - n[2] * e1[1]
    e2[1] = n[2] * e1[0] - n[0] * e1[2]
    e2[2] = n[0] * e1[1] - n[1] * e1[0]

    shoot_c(kind, prm, p, v, nsteps, nsub, 1.0, out, xe)
    for i in range(3):
        r[i] = xe[i] - q[i]
    vn = sqrt(dot3(v, v))
    hs = FD_REL * (vn if vn > 1e-3 else 1e-3)
    for c in range(2):
        for i in range(3):
            trial[i] = v[i] + hs * (e1[i] if c == 0 else e2[i])
        shoot_c(kind, prm, p, trial, nsteps, nsub, 1.0, NULL, xc)
        for i in range(3):
            J[2 * i + c] = (xc[i] - xe[i]) / hs
    rnorm = sqrt(dot3(r, r))
    if rnorm < tol:
        status = 0
    it = 0
    while status != 0 and it < max_newton:
        it += 1
        a11 = J[0] * J[0] + J[2] * J[2] + J[4] * J[4]
        a12 = J[0] * J[1] + J[2] * J[3] + J[4] * J[5]
        a22 = J[1] * J[1] + J[3] * J[3] + J[5] * J[5]
        b1 = J[0] * r[0] + J[2] * r[1] + J[4] * r[2]
        b2 = J[1] * r[0] + J[3] * r[1] + J[5] * r[2]
        det = a11 * a22 - a12 * a12
        dl1 = -(a22 * b1 - a12 * b2) / det
        dl2 = -(-a12 * b1 + a11 * b2) / det
        for i in range(3):
            v[i] += dl1 * e1[i] + dl2 * e2[i]
        shoot_c(kind, prm, p, v, nsteps, nsub, 1.0, out, xe)
        for i in range(3):
            rn[i] = xe[i] - q[i]
        dd = dl1 * dl1 + dl2 * dl2
        if dd > 0.0:
            for i in range(3):
                corr = (rn[i] - r[i]) - (J[2 * i] * dl1 + J[2 * i + 1] * dl2)
                J[2 * i] += corr * dl1 / dd
                J[2 * i + 1] += corr * dl2 / dd
        for i in range(3):
            r[i] = rn[i]
        if sqrt(dot3(r, r)) < tol:
            status = 0
    for i in range(3):
        out[3 * nseg + i] = q[i]
    length[0] = sqrt(dot3(v, v))
    return status


def solve_bvp_batch(int kind, double[::1] prm, P, Q, int nseg, int nsub, double tol, int max_newton):
    """Shoot from P[b] to Q[b] in unit time; returns (samples, lengths, status)."""
    cdef double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef Py_ssize_t B = Pv.shape[0], b
    S = np.empty((B, nseg + 1, 3))
    lengths = np.empty(B)
    status = np.empty(B, dtype=np.int64)
    cdef double[:, :, ::1] Sv = S
    cdef double[::1] Lv = lengths
    cdef long long[::1] St = status
    with nogil:
        for b in range(B):
            St[b] = bvp_one(kind, &prm[0], &Pv[b, 0], &Qv[b, 0], nseg, nsub, tol,
                            max_newton, &Sv[b, 0, 0], &Lv[b])
    return S, lengths, status


def shoot(int kind, double[::1] prm, x0, v0, double T, int nsteps):
    """Single trajectory with every step recorded: (positions, velocities)."""
    cdef double x[3]
    cdef double v[3]
    cdef double speed
    cdef int i, j
    pos = np.empty((nsteps + 1, 3))
    vel = np.empty((nsteps + 1, 3))
    cdef double[:, ::1] Pv = pos
    cdef double[:, ::1] Vv = vel
    for j in range(3):
        x[j] = x0[j]
        v[j] = v0[j]
    speed = sqrt(dot3(v, v))
    for j in range(3):
        Pv[0, j] = x[j]
        Vv[0, j] = v[j]
    with nogil:
        for i in range(1, nsteps + 1):
            rk4_step(kind, &prm[0], x, v, T / nsteps, speed)
            for j in range(3):
                Pv[i, j] = x[j]
                Vv[i, j] = v[j]
    return pos, vel


def shoot_batch(int kind, double[::1] prm, X0, V0, int nsteps, int record_every=1, double T=1.0):
    """Integrate B geodesics for time T; returns (samples, X_end)."""
    cdef double[:, ::1] Xv = np.ascontiguousarray(X0, dtype=np.float64)
    cdef double[:, ::1] Vv = np.ascontiguousarray(V0, dtype=np.float64)
    cdef Py_ssize_t B = Xv.shape[0], b
    cdef int nrec = nsteps // record_every
    out = np.empty((B, nrec + 1, 3))
    xend = np.empty((B, 3))
    cdef double[:, :, ::1] Ov = out
    cdef double[:, ::1] Ev = xend
    with nogil:
        for b in range(B):
            shoot_c(kind, &prm[0], &Xv[b, 0], &Vv[b, 0], nsteps, record_every, T,
                    &Ov[b, 0, 0], &Ev[b, 0])
    return out, xend


def march_chords(const double[:, ::1] V, const double[::1] cl, const double[::1] c, int n):
    """Equal-chord march along the closed polygon ``V`` for each chord in ``c``.

    Returns ``(mismatch, segs, along)``: how far past one lap the ``n``-th
    point lands, and for points ``0 .. n-1`` the (unwrapped) segment index
    and the distance from that segment's first vertex.
    """
    cdef Py_ssize_t N = V.shape[0], K = c.shape[0]
    segs_a = np.zeros((n, K), dtype=np.int64)
    along_a = np.zeros((n, K))
    mis_a = np.empty(K)
    cdef long long[:, ::1] segs = segs_a
    cdef double[:, ::1] along = along_a
    cdef double[::1] mis = mis_a
    cdef double per = cl[N]
    cdef Py_ssize_t k, i, j, hit, jm
    cdef long long seg
    cdef double X[3]
    cdef double S[3]
    cdef double E[3]
    cdef double F[3]
    cdef double cc, d2, qa, qb, qc, f, disc
    with nogil:
        for k in range(K):
            cc = c[k] * c[k]
            seg = 0
            for j in range(3):
                X[j] = V[0, j]
            for i in range(1, n + 1):
                hit = -1
                for jm in range(seg + 1, seg + 2 * N + 1):
                    d2 = 0.0
                    for j in range(3):
                        d2 = d2 + (V[jm % N, j] - X[j]) * (V[jm % N, j] - X[j])
                    if d2 >= cc:
                        hit = jm
                        break
                if hit < 0:
                    hit = seg + 2 * N
                for j in range(3):
                    S[j] = V[(hit - 1) % N, j] if hit - 1 > seg else X[j]
                    E[j] = V[hit % N, j] - S[j]
                    F[j] = S[j] - X[j]
                qa = dot3(E, E)
                qb = 2.0 * dot3(E, F)
                qc = dot3(F, F) - cc
                f = 0.0
                if qa > 0:
                    disc = qb * qb - 4.0 * qa * qc
                    if disc < 0:
                        disc = 0.0
                    f = (-qb + sqrt(disc)) / (2.0 * qa)
                    if f < 0:
                        f = 0.0
                    elif f > 1:
                        f = 1.0
                for j in range(3):
                    X[j] = S[j] + f * E[j]
                seg = hit - 1
                d2 = 0.0
                for j in range(3):
                    d2 = d2 + (X[j] - V[seg % N, j]) * (X[j] - V[seg % N, j])
                if i < n:
                    segs[i, k] = seg
                    along[i, k] = sqrt(d2)
            mis[k] = (seg // N) * per + cl[seg % N] + sqrt(d2) - per
    return mis_a, segs_a, along_a
