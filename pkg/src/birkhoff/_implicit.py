"""Vectorised level-set formulas for the built-in surfaces.

Each surface is the zero set of a function ``F`` on R^3 with ``grad F``
pointing outward. Parameters are passed as a flat float array in scaled
units:

=========  ==========================  ==========================================
kind       params                      F(x)
=========  ==========================  ==========================================
SPHERE     (R,)                        (|x|^2 - R^2) / 2
ELLIPSOID  (a, b, c)                   (x^2/a^2 + y^2/b^2 + z^2/c^2 - 1) / 2
PERTURBED  (R, eps, k)                 |x| - R (1 + eps Y(x/|x|))
=========  ==========================  ==========================================

with ``Y(u) = (Re((u_x + i u_y)^k) + u_x u_z) / 2``, a degree-k sectoral
harmonic plus a degree-2 term that is odd in z. The compiled kernel in
``_shoot.pyx`` implements the same three functions in C.
"""

import numpy as np

SPHERE, ELLIPSOID, PERTURBED = 0, 1, 2


def _sectoral(k, X):
    """Re((x + iy)^k): value, gradient, and the complex factor for the Hessian."""
    w = X[..., 0] + 1j * X[..., 1]
    wk2 = w ** (k - 2)
    wk1 = wk2 * w
    wk = wk1 * w
    P = wk.real
    dP = np.zeros(X.shape)
    dP[..., 0] = (k * wk1).real
    dP[..., 1] = -(k * wk1).imag
    a = k * (k - 1) * wk2
    return P, dP, a


def _homog_term(P, dP, quadP, d, X, V, rho):
    """Gradient and quadratic form of g = P(x) / |x|^d for homogeneous P."""
    g = P / rho**d
    grad = dP / rho[..., None] ** d - (d * P / rho ** (d + 2))[..., None] * X
    if V is None:
        return g, grad, None
    xv = np.einsum("...i,...i->...", X, V)
    vv = np.einsum("...i,...i->...", V, V)
    pv = np.einsum("...i,...i->...", dP, V)
    q = (quadP / rho**d - 2 * d * pv * xv / rho ** (d + 2)
         - d * P * vv / rho ** (d + 2) + d * (d + 2) * P * xv**2 / (rho ** (d + 4)))
    return g, grad, q


def _perturbed(prm, X, V=None):
    R, eps, k = prm[0], prm[1], int(round(prm[2]))
    rho = np.sqrt(np.einsum("...i,...i->...", X, X))
    P1, dP1, a = _sectoral(k, X)
    q1 = None
    if V is not None:
        q1 = (V[..., 0] ** 2 * a.real - 2 * V[..., 0] * V[..., 1] * a.imag
              - V[..., 1] ** 2 * a.real)
    g1, grad1, quad1 = _homog_term(P1, dP1, q1, k, X, V, rho)
    P2 = X[..., 0] * X[..., 2]
    dP2 = np.zeros(X.shape)
    dP2[..., 0] = X[..., 2]
    dP2[..., 2] = X[..., 0]
    q2 = None if V is None else 2 * V[..., 0] * V[..., 2]
    g2, grad2, quad2 = _homog_term(P2, dP2, q2, 2, X, V, rho)
    F = rho - R * (1 + eps * 0.5 * (g1 + g2))
    G = X / rho[..., None] - R * eps * 0.5 * (grad1 + grad2)
    Q = None
    if V is not None:
        xv = np.einsum("...i,...i->...", X, V)
        vv = np.einsum("...i,...i->...", V, V)
        Q = (vv - xv**2 / rho**2) / rho - R * eps * 0.5 * (quad1 + quad2)
    return F, G, Q


def value_grad(kind, prm, X):
    X = np.asarray(X, dtype=float)
    if kind == SPHERE:
        return 0.5 * (np.einsum("...i,...i->...", X, X) - prm[0] ** 2), X.copy()
    if kind == ELLIPSOID:
        inv = 1.0 / np.asarray(prm[:3]) ** 2
        return 0.5 * (np.einsum("...i,i->...", X * X, inv) - 1.0), X * inv
    F, G, _ = _perturbed(prm, X)
    return F, G


def quad(kind, prm, X, V):
    """The Hessian quadratic form V^T (D^2 F)(X) V."""
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    if kind == SPHERE:
        return np.einsum("...i,...i->...", V, V)
    if kind == ELLIPSOID:
        inv = 1.0 / np.asarray(prm[:3]) ** 2
        return np.einsum("...i,i->...", V * V, inv)
    return _perturbed(prm, X, V)[2]


def hessian(kind, prm, X):
    """Full Hessian, recovered from the quadratic form by polarisation."""
    X = np.asarray(X, dtype=float)
    H = np.empty(X.shape + (3,))
    eye = np.eye(3)
    diag = [quad(kind, prm, X, np.broadcast_to(eye[i], X.shape)) for i in range(3)]
    for i in range(3):
        H[..., i, i] = diag[i]
        for j in range(i + 1, 3):
            qij = quad(kind, prm, X, np.broadcast_to(eye[i] + eye[j], X.shape))
            H[..., i, j] = H[..., j, i] = 0.5 * (qij - diag[i] - diag[j])
    return H


def snap(kind, prm, X, tol=1e-13, max_iter=30):
    """Move points onto the surface by Newton steps along the gradient.

    Not a nearest-point projection, but it agrees with one to second order
    for points already within a small fraction of the curvature radius.
    """
    X = np.array(X, dtype=float)
    if kind == SPHERE:
        nrm = np.sqrt(np.einsum("...i,...i->...", X, X))
        return X * (prm[0] / nrm)[..., None]
    for _ in range(max_iter):
        F, G = value_grad(kind, prm, X)
        gg = np.einsum("...i,...i->...", G, G)
        X = X - (F / gg)[..., None] * G
        if np.all(np.abs(F) <= tol * np.sqrt(gg) * max(1.0, prm[0])):
            break
    return X
