"""Pure-numpy geodesic shooting, vectorised over a batch of problems.

Mirrors ``_shoot.pyx`` step for step; :mod:`birkhoff.kernels` picks one of
the two at import time.
"""

import numpy as np

from . import _implicit as imp

FD_REL = 1e-7


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _accel(kind, prm, X, V):
    _, G = imp.value_grad(kind, prm, X)
    q = imp.quad(kind, prm, X, V)
    return -(q / _dot(G, G))[..., None] * G


def _step(kind, prm, X, V, h, speed):
    k1x, k1v = V, _accel(kind, prm, X, V)
    X2, V2 = X + 0.5 * h * k1x, V + 0.5 * h * k1v
    k2x, k2v = V2, _accel(kind, prm, X2, V2)
    X3, V3 = X + 0.5 * h * k2x, V + 0.5 * h * k2v
    k3x, k3v = V3, _accel(kind, prm, X3, V3)
    X4, V4 = X + h * k3x, V + h * k3v
    k4x, k4v = V4, _accel(kind, prm, X4, V4)
    X = X + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    V = V + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
    X = imp.snap(kind, prm, X)
    _, G = imp.value_grad(kind, prm, X)
    N = G / np.sqrt(_dot(G, G))[..., None]
    V = V - _dot(V, N)[..., None] * N
    vn = np.sqrt(_dot(V, V))
    scale = np.where(vn > 0, speed / np.where(vn > 0, vn, 1.0), 0.0)
    return X, V * scale[..., None]


def shoot_batch(kind, prm, X0, V0, nsteps, record_every=1, T=1.0):
    """Integrate B geodesics for time T; returns (samples, X_end)."""
    X = np.array(X0, dtype=float)
    V = np.array(V0, dtype=float)
    speed = np.sqrt(_dot(V, V))
    nrec = nsteps // record_every
    out = np.empty((X.shape[0], nrec + 1, 3))
    out[:, 0] = X
    h = T / nsteps
    for i in range(1, nsteps + 1):
        X, V = _step(kind, prm, X, V, h, speed)
        if i % record_every == 0:
            out[:, i // record_every] = X
    return out, X


def shoot(kind, prm, x0, v0, T, nsteps):
    """Single trajectory with every step recorded: (positions, velocities)."""
    X = np.array(x0, dtype=float)[None]
    V = np.array(v0, dtype=float)[None]
    speed = np.sqrt(_dot(V, V))
    pos = np.empty((nsteps + 1, 3))
    vel = np.empty((nsteps + 1, 3))
    pos[0], vel[0] = X[0], V[0]
    h = T / nsteps
    for i in range(1, nsteps + 1):
        X, V = _step(kind, prm, X, V, h, speed)
        pos[i], vel[i] = X[0], V[0]
    return pos, vel


def _tangent_frame(kind, prm, P, D):
    _, G = imp.value_grad(kind, prm, P)
    N = G / np.sqrt(_dot(G, G))[:, None]
    V = D - _dot(D, N)[:, None] * N
    vn = np.sqrt(_dot(V, V))
    E1 = np.where(vn[:, None] > 0, V / np.where(vn > 0, vn, 1.0)[:, None], 0.0)
    # degenerate chords get an arbitrary tangent direction
    bad = vn <= 0
    if np.any(bad):
        trial = np.cross(N[bad], np.array([1.0, 0.0, 0.0]))
        small = np.sqrt(_dot(trial, trial)) < 1e-6
        trial[small] = np.cross(N[bad][small], np.array([0.0, 1.0, 0.0]))
        E1[bad] = trial / np.sqrt(_dot(trial, trial))[:, None]
    E2 = np.cross(N, E1)
    return V * (np.sqrt(_dot(D, D)) / np.where(vn > 0, vn, 1.0))[:, None], E1, E2


def solve_bvp_batch(kind, prm, P, Q, nseg, nsub, tol, max_newton):
    """Shoot from P[b] to Q[b] in unit time; returns (samples, lengths, status).

    status 0: converged, 1: Newton did not reach ``tol``.
    Samples hold nseg+1 constant-speed points per problem.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    B = P.shape[0]
    nsteps = nseg * nsub
    S = np.repeat(P[:, None, :], nseg + 1, axis=1)
    lengths = np.zeros(B)
    status = np.zeros(B, dtype=np.int64)
    D = Q - P
    live = np.sqrt(_dot(D, D)) > 1e-14
    if not np.any(live):
        return S, lengths, status
    idx = np.nonzero(live)[0]
    V, E1, E2 = _tangent_frame(kind, prm, P[idx], D[idx])
    samp, Xe = shoot_batch(kind, prm, P[idx], V, nsteps, nsub)
    R = Xe - Q[idx]
    # forward-difference Jacobian of the endpoint wrt the tangent velocity
    hs = FD_REL * np.maximum(np.sqrt(_dot(V, V)), 1e-3)
    J = np.empty((idx.size, 3, 2))
    for c, E in enumerate((E1, E2)):
        _, Xc = shoot_batch(kind, prm, P[idx], V + hs[:, None] * E, nsteps, nsub)
        J[:, :, c] = (Xc - Xe) / hs[:, None]
    done = np.sqrt(_dot(R, R)) < tol
    for _ in range(max_newton):
        act = np.nonzero(~done)[0]
        if act.size == 0:
            break
        Ja, Ra = J[act], R[act]
        JtJ = np.einsum("bki,bkj->bij", Ja, Ja)
        Jtr = np.einsum("bki,bk->bi", Ja, Ra)
        delta = -np.linalg.solve(JtJ, Jtr[..., None])[..., 0]
        dv = delta[:, 0:1] * E1[act] + delta[:, 1:2] * E2[act]
        V[act] = V[act] + dv
        s_new, Xn = shoot_batch(kind, prm, P[idx[act]], V[act], nsteps, nsub)
        Rn = Xn - Q[idx[act]]
        # Broyden rank-one update in the (E1, E2) coordinates
        dr = Rn - Ra
        corr = dr - np.einsum("bij,bj->bi", Ja, delta)
        dd = _dot(delta, delta)
        ok = dd > 0
        J[act[ok]] = Ja[ok] + np.einsum("bi,bj->bij", corr[ok], delta[ok]) / dd[ok, None, None]
        R[act] = Rn
        samp[act] = s_new
        done[act] = np.sqrt(_dot(Rn, Rn)) < tol
    status[idx[~done]] = 1
    S[idx] = samp
    S[idx, -1] = Q[idx]
    lengths[idx] = np.sqrt(_dot(V, V))
    return S, lengths, status


def march_chords(V, cl, c, n):
    """Equal-chord march along closed polygon ``V``; see ``_shoot.pyx``.

    All chord candidates in ``c`` advance together, one point per loop pass.
    """
    N = V.shape[0]
    K = c.size
    per = cl[N]
    seg = np.zeros(K, dtype=np.int64)
    X = np.repeat(V[:1], K, axis=0)
    segs = np.zeros((n, K), dtype=np.int64)
    along = np.zeros((n, K))
    for i in range(1, n + 1):
        hit = np.full(K, -1, dtype=np.int64)
        off = 1
        while np.any(hit < 0) and off <= 2 * N:
            j = seg[:, None] + np.arange(off, min(off + 8, 2 * N + 1))[None, :]
            d2 = np.sum((V[j % N] - X[:, None, :]) ** 2, axis=2)
            ok = d2 >= (c * c)[:, None]
            first = np.where(ok.any(axis=1), j[np.arange(K), ok.argmax(axis=1)], -1)
            new = (hit < 0) & (first >= 0)
            hit[new] = first[new]
            off += 8
        hit = np.where(hit < 0, seg + 2 * N, hit)
        S = np.where((hit - 1 > seg)[:, None], V[(hit - 1) % N], X)
        E = V[hit % N] - S
        F = S - X
        qa = _dot(E, E)
        qb = 2 * _dot(E, F)
        qc = _dot(F, F) - c * c
        disc = np.maximum(qb * qb - 4 * qa * qc, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(qa > 0, (-qb + np.sqrt(disc)) / (2 * qa), 0.0)
        X = S + np.clip(f, 0.0, 1.0)[:, None] * E
        seg = hit - 1
        dist = np.sqrt(_dot(X - V[seg % N], X - V[seg % N]))
        if i < n:
            segs[i], along[i] = seg, dist
    return (seg // N) * per + cl[seg % N] + dist - per, segs, along
