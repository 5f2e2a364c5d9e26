"""Embedded surfaces, their normalisation, and geodesic solvers.

Surfaces are level sets in R^3 (see :mod:`birkhoff._implicit`). A
:class:`Surface` is always expressed in *scaled* units: the ambient embedding
is multiplied by ``scale`` so that

* the second fundamental form satisfies ``sup |A| <= 1/16``,
* sectional curvature is at most 1/64 and the injectivity radius at least
  ``8 pi``,
* ``dist_M(x, y) <= 2 |x - y|`` whenever ``|x - y| <= 1``.

Points are plain ``(3,)`` or ``(n, 3)`` float arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _implicit as imp
from . import kernels
from .errors import (
    PerturbationTooLarge,
    PreconditionViolated,
    ProjectionDiverged,
    ShootingDiverged,
    StepSizeUnderflow,
)

KINDS = {"sphere": imp.SPHERE, "ellipsoid": imp.ELLIPSOID, "perturbed-sphere": imp.PERTURBED}

TOL_SURF = 1e-10
TOL_TAN = 1e-10
TOL_GEO = 1e-8
TOL_BVP = 1e-8
TOL_SPEED = 1e-6
MAX_NEWTON = 50

SAFETY = 1.01
GRID = 256
# RK4 step chosen so the tangent turns by at most this angle per step
MAX_TURN = 0.004


@dataclass(frozen=True)
class SurfaceSpec:
    """Unscaled description of a built-in surface.

    ``params`` is ``(radius,)`` for a sphere, ``(a, b, c)`` for an ellipsoid
    and ``(radius, amplitude, frequency)`` or ``(amplitude, frequency)`` for the
    perturbed sphere ``r(u) = radius * (1 + amplitude * Y(u))``.
    """

    kind: str
    params: tuple
    ambient_dim: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if self.ambient_dim != 3:
            raise ValueError("only surfaces in R^3 are supported")
        params = tuple(float(p) for p in self.params)
        if self.kind == "perturbed-sphere" and len(params) == 2:
            params = (1.0,) + params
        expected = {"sphere": 1, "ellipsoid": 3, "perturbed-sphere": 3}[self.kind]
        if len(params) != expected:
            raise ValueError(f"{self.kind} takes {expected} parameters, got {len(params)}")
        if self.kind == "perturbed-sphere":
            radius, amp, freq = params
            if radius <= 0 or amp < 0 or freq != int(freq) or freq < 2:
                raise ValueError("perturbed-sphere needs radius > 0, amplitude >= 0, integer frequency >= 2")
        elif any(p <= 0 for p in params):
            raise ValueError("radii and semi-axes must be positive")
        object.__setattr__(self, "params", params)

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params), "ambient_dim": self.ambient_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["params"]), d.get("ambient_dim", 3))


class TangentVector(NamedTuple):
    base: np.ndarray
    dir: np.ndarray


@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    endpoints: tuple
    samples: np.ndarray
    length: float
    initial_velocity: np.ndarray


def _scaled_params(spec, s):
    if spec.kind == "perturbed-sphere":
        radius, amp, freq = spec.params
        return np.array([radius * s, amp, freq])
    return np.array(spec.params) * s


@dataclass(frozen=True, eq=False)
class Surface:
    """A built-in surface in scaled units.

    Attributes
    ----------
    spec : SurfaceSpec
        The unscaled description.
    scale : float
        Factor applied to the ambient embedding.
    second_form_bound : float
        Certified ``sup |A|`` after scaling.
    curvature_bound : float
        Maximum Gaussian curvature after scaling.
    injectivity_bound : float
        Lower bound ``pi / sqrt(curvature_bound)`` on the injectivity radius.
    max_principal : float
        Largest principal curvature after scaling; sets the RK4 step.
    tol_bvp : float
        Endpoint miss accepted by the shooting solver.
    """

    spec: SurfaceSpec
    scale: float
    second_form_bound: float
    curvature_bound: float
    injectivity_bound: float
    max_principal: float
    tol_bvp: float = TOL_BVP
    kind: int = field(init=False)
    prm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", KINDS[self.spec.kind])
        prm = _scaled_params(self.spec, self.scale)
        prm.setflags(write=False)
        object.__setattr__(self, "prm", prm)

    @property
    def is_sphere(self):
        return self.kind == imp.SPHERE

    @property
    def size(self):
        """A representative radius in scaled units."""
        return float(np.max(self.prm[:3]) if self.kind == imp.ELLIPSOID else self.prm[0])

    def value_grad(self, X):
        return imp.value_grad(self.kind, self.prm, X)

    def normal(self, X):
        _, G = self.value_grad(X)
        return G / np.linalg.norm(G, axis=-1, keepdims=True)

    def snap(self, X):
        return imp.snap(self.kind, self.prm, X)

    def radial_point(self, U):
        """Surface point in the direction of each unit vector in ``U``."""
        U = np.asarray(U, dtype=float)
        U = U / np.linalg.norm(U, axis=-1, keepdims=True)
        if self.kind == imp.SPHERE:
            return self.prm[0] * U
        if self.kind == imp.ELLIPSOID:
            return U / np.sqrt(np.einsum("...i,i->...", U * U, 1.0 / self.prm**2))[..., None]
        return radial_perturbed(self.prm, U)

    def residual(self, X):
        """Distance-like defect |F| / |grad F| of points off the surface."""
        F, G = self.value_grad(X)
        return np.abs(F) / np.linalg.norm(G, axis=-1)

    def geodesics(self, P, Q, nseg, method=None):
        """Minimising constant-speed geodesics between paired points.

        Returns ``(samples, lengths)`` with ``samples`` of shape
        ``(B, nseg + 1, 3)``. Endpoints must be closer than the certified
        injectivity radius so the minimiser is unique. The round sphere uses the closed form unless
        ``method="shooting"``.
        """
        P = np.atleast_2d(np.asarray(P, dtype=float))
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        chord = np.linalg.norm(Q - P, axis=-1)
        limit = self.injectivity_bound
        if np.any(chord >= limit):
            raise PreconditionViolated(
                f"endpoints {chord.max():.4g} apart exceed the injectivity radius {limit:.4g}")
        if self.kind == imp.SPHERE and np.any(chord >= 2 * self.prm[0] * (1 - 1e-12)):
            raise PreconditionViolated("antipodal endpoints have no unique geodesic")
        if self.kind == imp.SPHERE and method != "shooting":
            S, lengths = slerp_segments(self.prm[0], P, Q, nseg)
        else:
            turn = float(chord.max(initial=0.0)) * self.max_principal * 1.2
            nsub = max(1, math.ceil(turn / (nseg * MAX_TURN)))
            S, lengths, status = kernels.solve_bvp_batch(
                self.kind, np.array(self.prm), P, Q, nseg, nsub, self.tol_bvp, MAX_NEWTON)
            if np.any(status != 0):
                bad = int(np.argmax(status != 0))
                raise ShootingDiverged(f"shooting missed {Q[bad]} from {P[bad]}")
        if np.any(lengths >= limit):
            raise PreconditionViolated("geodesic longer than the injectivity radius")
        return S, lengths

    def principal_curvatures(self, X):
        """Principal curvatures (ascending) at surface points ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _, G = self.value_grad(X)
        gn = np.linalg.norm(G, axis=-1)
        N = G / gn[:, None]
        E1 = np.cross(N, np.array([0.0, 0.0, 1.0]))
        alt = np.cross(N, np.array([1.0, 0.0, 0.0]))
        weak = np.linalg.norm(E1, axis=-1) < 0.5
        E1[weak] = alt[weak]
        E1 /= np.linalg.norm(E1, axis=-1, keepdims=True)
        E2 = np.cross(N, E1)
        E = np.stack([E1, E2], axis=-1)
        H = imp.hessian(self.kind, self.prm, X)
        S = np.einsum("bik,bij,bjl->bkl", E, H, E) / gn[:, None, None]
        return np.linalg.eigvalsh(S)

    def area(self, n_theta=512):
        """Total area by quadrature over the (polar, azimuth) parametrisation."""
        n_phi = 2 * n_theta
        th = np.linspace(0.0, np.pi, n_theta + 1)
        ph = np.linspace(0.0, 2 * np.pi, n_phi + 1)
        T, Ph = np.meshgrid(th, ph, indexing="ij")
        U = np.stack([np.sin(T) * np.cos(Ph), np.sin(T) * np.sin(Ph), np.cos(T)], axis=-1)
        X = self.radial_point(U)
        a = X[1:, 1:] - X[:-1, :-1]
        b = X[:-1, 1:] - X[1:, :-1]
        return 0.5 * float(np.linalg.norm(np.cross(a, b), axis=-1).sum())


def radial_perturbed(prm, U):
    R, eps, k = prm[0], prm[1], int(round(prm[2]))
    w = (U[..., 0] + 1j * U[..., 1]) ** k
    Y = 0.5 * (w.real + U[..., 0] * U[..., 2])
    return (R * (1 + eps * Y))[..., None] * U


def slerp_segments(radius, P, Q, nseg):
    """Great-circle arcs sampled at constant speed, with their lengths."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    u = P / np.linalg.norm(P, axis=-1, keepdims=True)
    w = Q / np.linalg.norm(Q, axis=-1, keepdims=True)
    cross = np.linalg.norm(np.cross(u, w), axis=-1)
    omega = np.arctan2(cross, np.einsum("bi,bi->b", u, w))
    tau = np.linspace(0.0, 1.0, nseg + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        so = np.sin(omega)
        a = np.sin(np.outer(omega, 1 - tau)) / so[:, None]
        b = np.sin(np.outer(omega, tau)) / so[:, None]
    tiny = omega < 1e-7
    if np.any(tiny):
        a[tiny] = 1 - tau
        b[tiny] = tau
    S = a[..., None] * u[:, None, :] + b[..., None] * w[:, None, :]
    S *= radius / np.linalg.norm(S, axis=-1, keepdims=True)
    S[:, 0] = P
    S[:, -1] = Q
    return S, radius * omega


def _unit_grid(n=GRID):
    th = np.linspace(0.0, np.pi, n)
    ph = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    T, Ph = np.meshgrid(th, ph, indexing="ij")
    U = np.stack([np.sin(T) * np.cos(Ph), np.sin(T) * np.sin(Ph), np.cos(T)], axis=-1).reshape(-1, 3)
    axes = np.vstack([np.eye(3), -np.eye(3)])
    return np.vstack([U, axes])


def normalize(spec: SurfaceSpec, m3_pairs: int = 24, seed: int = 0, tol_bvp: float = TOL_BVP) -> Surface:
    """Scale ``spec`` so the surface meets the curvature normalisation.

    The sphere is scaled analytically. Other surfaces take ``sup |A|`` over a
    256 x 256 grid (plus the six axis points) with a 1 % margin, certify the
    injectivity radius through the positive-curvature bound ``pi/sqrt(K)``,
    and sample-check the chord/distance condition.

    Raises
    ------
    PerturbationTooLarge
        If the surface fails the star-shape, positive-curvature or sampled
        distance check.
    """
    if spec.kind == "sphere":
        r = spec.params[0]
        s = 16 * math.sqrt(2) / r
        radius = r * s
        return Surface(spec, s, math.sqrt(2) / radius, 1.0 / radius**2, math.pi * radius, 1.0 / radius, tol_bvp)

    unit = Surface(spec, 1.0, 0.0, 0.0, 0.0, 1.0)
    X = unit.radial_point(_unit_grid())
    _, G = unit.value_grad(X)
    if np.any(np.einsum("bi,bi->b", G, X) <= 0) or not np.all(np.isfinite(X)):
        raise PerturbationTooLarge("surface is not a radial graph over the sphere")
    k = unit.principal_curvatures(X)
    gauss = k[:, 0] * k[:, 1]
    if np.any(k[:, 0] <= 0):
        raise PerturbationTooLarge("surface is not strictly convex; injectivity radius cannot be certified")
    sup_a = float(np.sqrt((k**2).sum(axis=1)).max())
    s = 16 * sup_a * SAFETY
    kmax = float(gauss.max()) / s**2
    surf = Surface(spec, s, sup_a / s, kmax, math.pi / math.sqrt(kmax), float(np.abs(k).max()) / s, tol_bvp)
    if surf.curvature_bound > 1 / 64 or surf.injectivity_bound < 8 * math.pi:
        raise PerturbationTooLarge("curvature normalisation failed")
    _check_chord_condition(surf, m3_pairs, seed)
    return surf


def random_unit_pairs(surface, rng, n, max_step=0.95):
    """``n`` random pairs of surface points less than one unit apart.

    The first point is the radial image of a uniform direction; the second is
    a random tangent step of length up to ``max_step``, snapped back.
    """
    X = surface.radial_point(rng.normal(size=(n, 3)))
    D = rng.normal(size=(n, 3))
    N = surface.normal(X)
    D -= np.einsum("bi,bi->b", D, N)[:, None] * N
    D *= (rng.uniform(0.0, max_step, n) / np.linalg.norm(D, axis=-1))[:, None]
    return X, surface.snap(X + D)


def _check_chord_condition(surf, n_pairs, seed):
    rng = np.random.default_rng(np.random.Philox(seed))
    X, Y = random_unit_pairs(surf, rng, n_pairs)
    chord = np.linalg.norm(X - Y, axis=-1)
    keep = (chord <= 1.0) & (chord > 0)
    _, lengths = surf.geodesics(X[keep], Y[keep], 16, method="shooting")
    if np.any(lengths > 2 * chord[keep]):
        raise PerturbationTooLarge("intrinsic distance exceeds twice the chord")


def project(surface: Surface, p) -> np.ndarray:
    """Nearest point on the surface to ``p``."""
    p = np.asarray(p, dtype=float)
    if surface.is_sphere:
        return surface.prm[0] * p / np.linalg.norm(p)
    # Newton on x - p + lam * grad F(x) = 0, F(x) = 0
    x = surface.snap(p)
    F, G = surface.value_grad(x)
    lam = float(np.dot(p - x, G) / np.dot(G, G))
    for _ in range(MAX_NEWTON):
        F, G = surface.value_grad(x)
        H = imp.hessian(surface.kind, surface.prm, x)
        res = np.concatenate([x - p + lam * G, [F]])
        J = np.zeros((4, 4))
        J[:3, :3] = np.eye(3) + lam * H
        J[:3, 3] = G
        J[3, :3] = G
        step = np.linalg.solve(J, -res)
        x = x + step[:3]
        lam += step[3]
        if np.linalg.norm(step[:3]) < 1e-13 * max(1.0, surface.size):
            break
    else:
        raise ProjectionDiverged(f"projection of {p} did not converge")
    if surface.residual(x) >= TOL_SURF:
        raise ProjectionDiverged(f"projection residual {surface.residual(x):.3g}")
    return x


def tangent_project(surface: Surface, p, v) -> TangentVector:
    """Remove the normal component of ``v`` at ``p``."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    n = surface.normal(p)
    return TangentVector(p, v - np.dot(v, n) * n)


def geodesic_ivp(surface: Surface, start: TangentVector, t: float) -> TangentVector:
    """Position and velocity after following the geodesic for parameter time ``t``."""
    x0 = np.asarray(start.base, dtype=float)
    v0 = np.asarray(start.dir, dtype=float)
    if t == 0:
        return TangentVector(x0.copy(), v0.copy())
    turn = abs(t) * np.linalg.norm(v0) * surface.max_principal * 1.2
    nsteps = max(8, math.ceil(turn / MAX_TURN))
    pos, vel = kernels.shoot(surface.kind, np.array(surface.prm), x0, v0, float(t), nsteps)
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
        raise StepSizeUnderflow("geodesic integration produced non-finite values")
    return TangentVector(pos[-1], vel[-1])


def geodesic_bvp(surface: Surface, p, q, m: int = 16, method=None) -> GeodesicSegment:
    """The minimising geodesic from ``p`` to ``q`` with ``m + 1`` samples."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    S, lengths = surface.geodesics(p[None], q[None], m, method=method)
    samples = S[0]
    length = float(lengths[0])
    if length == 0.0:
        v0 = np.zeros(3)
    else:
        v0 = _initial_velocity(surface, p, q, samples, length)
    samples.setflags(write=False)
    return GeodesicSegment((p, q), samples, length, v0)


def _initial_velocity(surface, p, q, samples, length):
    # the projected first chord is only second-order accurate; refine it by
    # shooting, where the endpoint map is close to the identity on the tangent plane
    v0 = tangent_project(surface, p, samples[1] - samples[0]).dir
    v0 *= length / np.linalg.norm(v0)
    for _ in range(MAX_NEWTON):
        miss = geodesic_ivp(surface, TangentVector(p, v0), 1.0).base - q
        if np.linalg.norm(miss) < surface.tol_bvp:
            break
        v0 = tangent_project(surface, p, v0 - miss).dir
    return v0


def intrinsic_distance(surface: Surface, p, q) -> float:
    return geodesic_bvp(surface, p, q).length
