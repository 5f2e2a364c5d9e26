"""Sweepouts by closed curves, tightening, width estimates and near-max slices.

A sweepout is ``K`` curves at ``t_k = -1 + 2k/(K-1)``, with point curves at
both ends. Tightening applies :func:`~birkhoff.shortening.psi` to every slice;
the running maximum slice energy is an upper bound for the width.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import curve as cv
from . import shortening as sh
from .curve import DiscreteCurve, PartitionGrid
from .errors import DegenerateFit, DegreeAmbiguous, GridMismatch, MaxIterExceeded
from .manifold import Surface, SurfaceSpec, normalize

STALL_WINDOW = 10


@dataclass(frozen=True, eq=False)
class Sweepout:
    surface: Surface
    slices: tuple

    def __post_init__(self):
        sl = tuple(self.slices)
        if len(sl) < 9 or len(sl) % 2 == 0:
            raise ValueError("a sweepout needs an odd number K >= 9 of slices")
        grid = sl[0].grid
        if any(c.grid != grid for c in sl):
            raise GridMismatch("all slices must share L and m")
        object.__setattr__(self, "slices", sl)

    @property
    def K(self):
        return len(self.slices)

    @property
    def grid(self):
        return self.slices[0].grid

    @property
    def params(self):
        return np.linspace(-1.0, 1.0, self.K)

    def energies(self):
        return np.array([cv.energy(c) for c in self.slices])

    def adjacent_steps(self):
        """W^{1,2} distances between consecutive slices."""
        return np.array([cv.w12_distance(a, b).total for a, b in zip(self.slices[:-1], self.slices[1:])])

    def replace(self, slices):
        return Sweepout(self.surface, tuple(slices))


@dataclass
class WidthEstimate:
    """Per-iteration ``(max_energy, argmax, max_adjacent_step)`` rows."""

    per_iteration: list = field(default_factory=list)
    width_upper: float = math.nan
    converged: bool = False
    slice_energies: list = field(default_factory=list, repr=False)

    @property
    def iterations(self):
        return len(self.per_iteration) - 1

    def rows(self):
        return [(i, e, k, s) for i, (e, k, s) in enumerate(self.per_iteration)]

    def to_dict(self):
        return {"width_upper": self.width_upper, "converged": self.converged, "iterations": self.iterations}


@dataclass
class NearGeodesicReport:
    delta: float
    width_upper: float
    indices: list
    residuals: list
    fit_distances: list = None
    best_fit_distance: float = None

    def to_dict(self):
        return {"delta": self.delta, "width_upper": self.width_upper, "indices": list(self.indices),
                "residuals": list(self.residuals), "fit_distances": self.fit_distances,
                "best_fit_distance": self.best_fit_distance}


def latitude_sweepout(surface: Surface, K: int = 65, L: int = 64, m: int = 16) -> Sweepout:
    """Radial images of the latitude circles of the unit sphere.

    Slice ``k`` sits at polar angle ``pi (1 + t_k) / 2``; the ends are the
    poles.
    """
    grid = PartitionGrid(L, m)
    phi = grid.params
    slices = []
    for t in np.linspace(-1.0, 1.0, K):
        theta = math.pi * (1 + t) / 2
        if abs(t) == 1.0:
            pole = surface.radial_point(np.array([0.0, 0.0, math.cos(theta)]))
            slices.append(cv.point_curve(surface, pole, L, m))
            continue
        U = np.stack([math.sin(theta) * np.cos(phi), math.sin(theta) * np.sin(phi),
                      np.full_like(phi, math.cos(theta))], axis=1)
        c = cv.DiscreteCurve(surface, grid, surface.radial_point(U))
        slices.append(cv.validate(cv.reparametrize_constant_speed(c)))
    return Sweepout(surface, tuple(slices))


def _map_slices(fn, slices, workers):
    if workers is None or workers <= 1:
        return [fn(c) for c in slices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, slices))


def _linearize_one(c):
    if c.is_point:
        return c
    return cv.reparametrize_constant_speed(sh.even_replacement(c))


def linearize(sweepout: Sweepout, workers=None) -> Sweepout:
    """Replace every slice by geodesics on the even intervals, then reparametrise."""
    return sweepout.replace(_map_slices(_linearize_one, sweepout.slices, workers))


def max_energy(sweepout: Sweepout):
    """``(index, energy)`` of the most energetic slice; ties go to the lowest index."""
    e = sweepout.energies()
    k = int(np.argmax(e))
    return k, float(e[k])


def tighten_once(sweepout: Sweepout, workers=None):
    """Apply the Birkhoff map to every slice; point slices stay fixed."""
    new = _map_slices(lambda c: sh.psi(c)[0], sweepout.slices, workers)
    out = sweepout.replace(new)
    return out, max_energy(out)[1]


def tighten(sweepout: Sweepout, max_iter: int = 500, stall_tol=None, workers=None,
            raise_on_max_iter=True, band=None):
    """Tighten until the max energy stalls.

    Stops when the max energy fell by less than ``stall_tol`` (default
    ``1e-6 * scale**2``) over the last 10 iterations. With ``band`` set, the
    slices with energy above ``(1 - band) * max`` must also be the same set as
    10 iterations earlier, each with energy change below ``stall_tol``; this
    keeps iterating while near-max slices are still moving even though the
    maximum itself has settled. Row 0 of the trace is the input sweepout.

    Raises
    ------
    MaxIterExceeded
        If ``max_iter`` is reached first and ``raise_on_max_iter`` is set;
        ``partial`` is ``(sweepout, estimate)``.
    """
    if stall_tol is None:
        stall_tol = 1e-6 * sweepout.surface.scale**2
    est = WidthEstimate()
    history = est.slice_energies
    history.append(sweepout.energies())
    k, e = max_energy(sweepout)
    est.per_iteration.append((e, k, float(sweepout.adjacent_steps().max())))
    sw = sweepout
    if e == 0.0:
        est.width_upper, est.converged = 0.0, True
        return sw, est
    for it in range(1, max_iter + 1):
        sw, _ = tighten_once(sw, workers)
        energies = sw.energies()
        history.append(energies)
        k = int(np.argmax(energies))
        e = float(energies[k])
        est.per_iteration.append((e, k, float(sw.adjacent_steps().max())))
        if it < STALL_WINDOW:
            continue
        old = history[it - STALL_WINDOW]
        stalled = est.per_iteration[it - STALL_WINDOW][0] - e < stall_tol
        if stalled and band is not None:
            now_in = energies > (1 - band) * e
            was_in = old > (1 - band) * old.max()
            stalled = bool(np.array_equal(now_in, was_in)
                           and np.all(np.abs(old[now_in] - energies[now_in]) < stall_tol))
        if stalled:
            est.converged = True
            break
    est.width_upper = est.per_iteration[-1][0]
    if not est.converged and raise_on_max_iter:
        raise MaxIterExceeded(f"max energy still falling after {max_iter} iterations", (sw, est))
    return sw, est


# --- analytic geodesic fits ----------------------------------------------------


def _w12_gram(c, A, B, h):
    """W^{1,2} inner products of ``c`` with two candidate curves."""
    def d(X):
        return (np.roll(X, -1, axis=0) - np.roll(X, 1, axis=0)) / (2 * h)
    dc = d(c)
    return [float((np.sum(c * X) + np.sum(dc * d(X))) * h) for X in (A, B)]


def _plane_basis(P):
    w, V = np.linalg.eigh(P.T @ P)
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        raise DegenerateFit("samples do not span a plane")
    return V[:, 2], V[:, 1], V[:, 0]


def great_circle_fit(curve: DiscreteCurve, surface: Surface = None):
    """Distance from ``curve`` to the nearest closed geodesic of a round sphere or
    a principal ellipse of an ellipsoid.

    The plane comes from the sample second-moment matrix; the phase and
    orientation of the fitted geodesic are then optimised for W^{1,2}
    distance at matched constant speed.

    Returns
    -------
    (float, DiscreteCurve)

    Raises
    ------
    DegenerateFit
        For point curves or collinear samples.
    """
    surface = surface or curve.surface
    if curve.is_point:
        raise DegenerateFit("point curves have no fitting geodesic")
    if surface.spec.kind == "sphere":
        return _fit_circle(curve, surface)
    if surface.spec.kind == "ellipsoid":
        return _fit_principal_ellipse(curve, surface)
    raise DegenerateFit(f"no analytic geodesics on {surface.spec.kind}")


def _fit_circle(curve, surface):
    R = surface.prm[0]
    e1, e2, _ = _plane_basis(curve.points)
    t = curve.grid.params
    h = curve.grid.h
    best = None
    for sign in (1.0, -1.0):
        G0 = R * (np.outer(np.cos(t), e1) + sign * np.outer(np.sin(t), e2))
        G1 = R * (-np.outer(np.sin(t), e1) + sign * np.outer(np.cos(t), e2))
        a, b = _w12_gram(curve.points, G0, G1, h)
        phi = math.atan2(b, a)
        G = math.cos(phi) * G0 + math.sin(phi) * G1
        fit = curve.with_points(G, constant_speed=True)
        dist = cv.w12_distance(curve, fit).total
        if best is None or dist < best[0]:
            best = (dist, fit)
    return best


def principal_ellipse_length(a, b):
    """Perimeter of the ellipse with semi-axes ``a``, ``b`` by adaptive quadrature."""
    val, _ = integrate.quad(lambda u: math.hypot(a * math.sin(u), b * math.cos(u)), 0.0, 2 * math.pi,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def _ellipse_table(a, b, n=1 << 16):
    u = np.linspace(0.0, 2 * math.pi, n + 1)
    speed = np.hypot(a * np.sin(u), b * np.cos(u))
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(u))])
    arc *= principal_ellipse_length(a, b) / arc[-1]
    return u, arc


def _fit_principal_ellipse(curve, surface):
    _, _, normal = _plane_basis(curve.points)
    axis = int(np.argmax(np.abs(normal)))
    i, j = [d for d in range(3) if d != axis]
    a, b = surface.prm[i], surface.prm[j]
    u_tab, arc = _ellipse_table(a, b)
    per = arc[-1]
    n = curve.grid.n
    h = curve.grid.h

    def ellipse(shift, sign):
        s = (shift + np.arange(n) * per / n) % per
        u = sign * np.interp(s, arc, u_tab)
        X = np.zeros((n, 3))
        X[:, i] = a * np.cos(u)
        X[:, j] = b * np.sin(u)
        return X

    def dist(shift, sign):
        d = curve.points - ellipse(shift, sign)
        dd = (np.roll(d, -1, axis=0) - np.roll(d, 1, axis=0)) / (2 * h)
        return math.sqrt(float((np.sum(d * d) + np.sum(dd * dd)) * h))

    best = None
    coarse = np.arange(256) * per / 256
    for sign in (1.0, -1.0):
        vals = [dist(s, sign) for s in coarse]
        k = int(np.argmin(vals))
        res = optimize.minimize_scalar(lambda s: dist(s, sign), bounds=(coarse[k] - per / 256, coarse[k] + per / 256),
                                       method="bounded", options={"xatol": 1e-10 * per})
        if best is None or res.fun < best[0]:
            best = (float(res.fun), res.x, sign)
    fit = curve.with_points(ellipse(best[1], best[2]), constant_speed=True)
    return best[0], fit


def near_max_slices(sweepout: Sweepout, delta: float, width_upper=None, fit=True) -> NearGeodesicReport:
    """Slices with energy above ``width_upper - delta`` and their residuals.

    On a round sphere or ellipsoid ``fit_distances`` holds the distance to the
    fitted closed geodesic and ``best_fit_distance`` the largest of them.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    e = sweepout.energies()
    w = float(e.max()) if width_upper is None else width_upper
    idx = [k for k in range(sweepout.K) if e[k] > w - delta and not sweepout.slices[k].is_point]
    res = [sh.geodesic_residual(sweepout.slices[k]) for k in idx]
    rep = NearGeodesicReport(delta, w, idx, res)
    if fit and sweepout.surface.spec.kind in ("sphere", "ellipsoid") and idx:
        rep.fit_distances = [great_circle_fit(sweepout.slices[k])[0] for k in idx]
        rep.best_fit_distance = max(rep.fit_distances)
    return rep


def degree(sweepout: Sweepout, tol=0.1) -> int:
    """Degree of the map from the sphere swept by the slices onto the surface.

    Signed areas of the quadrilaterals between consecutive slices, divided by
    the surface area, rounded.

    Raises
    ------
    DegreeAmbiguous
        If the unrounded value is more than ``tol`` from an integer.
    """
    surf = sweepout.surface
    P = np.stack([c.points for c in sweepout.slices])
    A = P[:-1]
    B = np.roll(P[:-1], -1, axis=1)
    C = np.roll(P[1:], -1, axis=1)
    D = P[1:]
    # oriented so that the latitude sweepout (north pole first, increasing
    # azimuth) counts +1
    vec = 0.5 * np.cross(D - B, C - A)
    centroid = surf.snap(0.25 * (A + B + C + D).reshape(-1, 3))
    normals = surf.normal(centroid)
    signed = float(np.einsum("bi,bi->", vec.reshape(-1, 3), normals))
    value = signed / surf.area()
    k = round(value)
    if abs(value - k) > tol:
        raise DegreeAmbiguous(f"degree estimate {value:.4f} is not near an integer")
    return int(k)


# --- serialisation ---------------------------------------------------------------


def save(sweepout: Sweepout, directory) -> list:
    """Write ``manifest.json`` and one ``slice_XXX.csv`` per slice; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    surf = sweepout.surface
    manifest = {"K": sweepout.K, "L": sweepout.grid.L, "m": sweepout.grid.m,
                "surface": surf.spec.to_dict(), "scale": surf.scale,
                "slices": [f"slice_{k:03d}.csv" for k in range(sweepout.K)]}
    paths = []
    for name, c in zip(manifest["slices"], sweepout.slices):
        path = os.path.join(directory, name)
        cv.write_csv(c, path)
        paths.append(path)
    mpath = os.path.join(directory, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return [mpath] + paths


def load(directory, surface: Surface = None) -> Sweepout:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if surface is None:
        surface = normalize(SurfaceSpec.from_dict(manifest["surface"]))
    slices = [cv.read_csv(surface, os.path.join(directory, name)) for name in manifest["slices"]]
    return Sweepout(surface, tuple(slices))
