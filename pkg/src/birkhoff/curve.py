"""Closed piecewise-geodesic curves sampled on a uniform grid.

A curve with ``L`` and ``m`` has ``2L`` partition nodes at ``x_j = j pi / L``
and ``m`` samples per partition interval, ``n = 2 L m`` samples in total at
parameters ``2 pi i / n``. Node ``j`` is sample ``j * m``; the sample after
``n - 1`` wraps to 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _implicit as imp
from . import kernels
from .errors import EndpointNotZero, GridMismatch, LipschitzExceeded, SegmentTooLong

TOL_QUAD = 1e-9
TOL_PARAM = 1e-6
SEGMENT_BOUND = 2 * math.pi
# below this length (relative to scale) a curve counts as a point curve
COLLAPSE = 1e-6
# relative step spread accepted as constant speed
UNIFORM = 1e-8
MAX_NEWTON = 50
KINK = 1.0  # corner angle (rad) above which resampling starts by marching


@dataclass(frozen=True)
class PartitionGrid:
    L: int
    m: int

    def __post_init__(self):
        if self.L < 8:
            raise ValueError("L must be at least 8")
        if self.m < 1:
            raise ValueError("m must be positive")

    @property
    def n(self):
        return 2 * self.L * self.m

    @property
    def h(self):
        return 2 * math.pi / self.n

    @property
    def nodes(self):
        return np.arange(2 * self.L) * math.pi / self.L

    @property
    def params(self):
        return np.arange(self.n) * self.h


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    """An element of the curve space, stored as its ``n`` dense samples.

    ``points`` is read-only. ``constant_speed`` is set by
    :func:`reparametrize_constant_speed` and by constructors that guarantee it.
    """

    surface: object
    grid: PartitionGrid
    points: np.ndarray = field(repr=False)
    constant_speed: bool = False

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.shape != (self.grid.n, 3):
            raise GridMismatch(f"expected {(self.grid.n, 3)} samples, got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def L(self):
        return self.grid.L

    @property
    def m(self):
        return self.grid.m

    @property
    def nodes(self):
        return self.points[:: self.grid.m]

    @property
    def segment_samples(self):
        """Interior samples of each partition interval, shape ``(2L, m-1, 3)``."""
        return self.points.reshape(2 * self.L, self.m, 3)[:, 1:]

    @property
    def chords(self):
        return np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1)

    @cached_property
    def steps(self):
        """Intrinsic distance from each sample to the next."""
        return _step_lengths(self.surface, self.points, closed=True)[0]

    @property
    def speed(self):
        """Average speed ``length / 2 pi``; the actual speed when constant."""
        return length(self) / (2 * math.pi)

    @property
    def is_point(self):
        return length(self) < COLLAPSE * self.surface.scale

    def with_points(self, points, constant_speed=False):
        return DiscreteCurve(self.surface, self.grid, points, constant_speed)


@dataclass(frozen=True)
class CurveMetricReport:
    l2_part: float
    h1_part: float
    total: float


def validate(curve: DiscreteCurve) -> DiscreteCurve:
    """Check the length and per-interval bounds of the curve space."""
    steps = curve.steps
    total = steps.sum()
    if total > 2 * math.pi * curve.L * (1 + 1e-12):
        raise LipschitzExceeded(f"length {total:.6g} exceeds 2 pi L = {2 * math.pi * curve.L:.6g}")
    sub = steps.reshape(2 * curve.L, curve.m).sum(axis=1)
    if sub.max() > SEGMENT_BOUND * (1 + 1e-12):
        raise SegmentTooLong(f"interval {int(sub.argmax())} has length {sub.max():.6g} > 2 pi")
    return curve


def _step_lengths(surface, P, closed=True):
    """Intrinsic lengths and turning angles of the steps of polyline ``P``.

    Each step is treated as an arc of the osculating circle of the surface
    geodesic through its endpoints, with curvature equal to the normal
    curvature in the chord direction at the snapped midpoint. The sphere's
    great circles are exactly such arcs.
    """
    Q = np.roll(P, -1, axis=0) if closed else P[1:]
    A = P if closed else P[:-1]
    D = Q - A
    c = np.linalg.norm(D, axis=1)
    if surface.is_sphere:
        k = np.full(c.shape, 1.0 / surface.prm[0])
    else:
        mid = surface.snap(0.5 * (A + Q))
        _, G = surface.value_grad(mid)
        with np.errstate(invalid="ignore", divide="ignore"):
            k = np.abs(imp.quad(surface.kind, surface.prm, mid, D)) / (np.linalg.norm(G, axis=1) * c * c)
        k = np.where(c > 0, k, 0.0)
    x = np.minimum(0.5 * k * c, 1.0)
    ratio = np.where(x > 1e-8, np.arcsin(x) / np.where(x > 1e-8, x, 1.0), 1.0 + x * x / 6)
    return c * ratio, 2 * np.arcsin(x)


def _place(surface, Q, cum, ell, theta, target):
    """Points at intrinsic arclength ``target`` along the closed polyline ``Q``.

    ``Q`` repeats its first vertex at the end. Points inside a step are put
    on its osculating arc by central projection onto the chord, then snapped.
    Also returns the index of the containing step.
    """
    idx = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, len(ell) - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(ell[idx] > 0, (target - cum[idx]) / ell[idx], 0.0)
    th = theta[idx]
    curved = th > 1e-8
    safe = np.where(curved, th, 1.0)
    g = np.where(curved, 0.5 + np.tan((f - 0.5) * safe) / (2 * np.tan(0.5 * safe)), f)
    out = surface.snap(Q[idx] + g[:, None] * (Q[idx + 1] - Q[idx]))
    exact = f == 0.0
    out[exact] = Q[idx[exact]]
    return out, idx


def _arclength_resample(surface, P, n):
    """``n`` samples at uniform arclength along closed polyline ``P``; ``P[0]`` stays."""
    ell, theta = _step_lengths(surface, P, closed=True)
    cum = np.concatenate([[0.0], np.cumsum(ell)])
    if cum[-1] <= 0:
        return np.repeat(P[:1], n, axis=0)
    return _place(surface, np.vstack([P, P[:1]]), cum, ell, theta, np.arange(n) * (cum[-1] / n))[0]


def _uniform_resample(surface, P, n):
    """``n`` points on closed polyline ``P`` whose own steps are all equal.

    Uniform arclength along ``P`` is not enough: a new step that spans a
    corner of ``P`` is shorter than the arc it cuts. Newton's method on the
    arclength positions fixes this (see :func:`_equalize`), started from
    uniform arclength. Near sharp corners the equal-step problem has several
    solutions and Newton from that start may stall or pick either, so
    polygons with a corner above ``KINK`` (or where Newton stalls) start from
    :func:`_march` instead, which selects one solution by geometry alone. If
    both fail the uniform-arclength points are returned. The first point
    stays at ``P[0]``.
    """
    ell, theta = _step_lengths(surface, P, closed=True)
    Q = np.vstack([P, P[:1]])
    cum = np.concatenate([[0.0], np.cumsum(ell)])
    total = cum[-1]
    if total <= 0:
        return np.repeat(P[:1], n, axis=0)
    D = np.diff(Q, axis=0)
    dl = np.linalg.norm(D, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tan = np.nan_to_num(D / dl[:, None])
    T0 = np.arange(n) * (total / n)
    X0 = _place(surface, Q, cum, ell, theta, T0)[0]
    live = tan[dl > 0]
    kinked = np.any(np.einsum("bi,bi->b", live, np.roll(live, -1, axis=0)) < math.cos(KINK))
    if not kinked:
        X = _equalize(surface, Q, cum, ell, theta, tan, T0)
        if X is not None:
            return X
    T = _march(Q, cum, ell, dl, n)
    if T is not None:
        X = _equalize(surface, Q, cum, ell, theta, tan, T)
        if X is not None:
            return X
    return X0


def _equalize(surface, Q, cum, ell, theta, tan, T):
    """Newton's method for equal steps from arclength positions ``T``.

    Step ``i`` depends on positions ``i`` and ``i + 1`` only, so each
    iteration solves a cyclic bidiagonal system (with the common step length
    as the extra unknown) by a linear recurrence; a backtracking search keeps
    the step spread falling. Returns None unless the spread ends within
    ``TOL_PARAM``.
    """
    total = cum[-1]
    X, idx = _place(surface, Q, cum, ell, theta, T)
    steps = _step_lengths(surface, X, closed=True)[0]
    for _ in range(MAX_NEWTON):
        if np.ptp(steps) <= UNIFORM * steps.mean():
            break
        C = np.roll(X, -1, axis=0) - X
        U = C / np.linalg.norm(C, axis=1, keepdims=True)
        b = np.einsum("bi,bi->b", U, tan[idx])
        a = np.einsum("bi,bi->b", U, np.roll(tan[idx], -1, axis=0))
        if np.any(a == 0) or np.any(b == 0):
            break
        # dT_{i+1} = (r_i + dlam + b_i dT_i) / a_i with dT_0 = dT_n = 0, solved
        # through the running product of b_i / a_i (kept as sign and log)
        r = steps.mean() - steps
        d = b / a
        logG = np.cumsum(np.log(np.abs(d)))
        sgn = np.cumprod(np.sign(d))
        G = sgn * np.exp(logG)
        w = sgn * np.exp(-logG) / a
        p = G * np.cumsum(r * w)
        q = G * np.cumsum(w)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))) or q[-1] == 0:
            break
        dT = p[:-1] - q[:-1] * (p[-1] / q[-1])
        spread = np.linalg.norm(r)
        lam = 1.0
        while lam > 1e-4:
            Tn = T.copy()
            Tn[1:] += lam * dT
            if np.all(np.diff(Tn) > 0) and Tn[-1] < total:
                Xn, idn = _place(surface, Q, cum, ell, theta, Tn)
                sn = _step_lengths(surface, Xn, closed=True)[0]
                if np.linalg.norm(sn - sn.mean()) < spread:
                    break
            lam *= 0.5
        else:
            break
        T, X, idx, steps = Tn, Xn, idn, sn
    return X if np.ptp(steps) <= TOL_PARAM * steps.mean() else None


def _march(Q, cum, ell, dl, n, grid=33, rounds=5):
    """Arclength positions of ``n`` points with nearly equal chords, by marching.

    From ``Q[0]``, each point is the first point further along the straight
    polygon at chord distance ``c`` from the previous one. ``c`` is chosen so
    that ``n`` such steps close up exactly, scanning a grid of candidates
    (all marched together) and keeping the largest sign change of the
    closure mismatch. Returns None if no sign change is found.
    """
    N = len(dl)
    V = np.ascontiguousarray(Q[:-1])
    cl = np.concatenate([[0.0], np.cumsum(dl)])
    per = cl[-1]
    lo, hi = 0.1 * per / n, per / n
    for _ in range(rounds):
        c = np.linspace(lo, hi, grid)
        g = kernels.march_chords(V, cl, c, n)[0]
        up = np.nonzero((g[:-1] < 0) & (g[1:] >= 0))[0]
        if up.size == 0:
            return None
        lo, hi = c[up[-1]], c[up[-1] + 1]
    _, segs, along = kernels.march_chords(V, cl, np.array([hi]), n)
    seg, a = segs[:, 0], along[:, 0]
    if np.any(seg >= N):
        return None
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(dl[seg] > 0, a / dl[seg], 0.0)
    T = cum[seg] + np.clip(f, 0.0, 1.0) * ell[seg]
    if not (np.all(np.diff(T) > 0) and T[-1] < cum[-1]):
        return None
    return T


def sample_curve(surface, fn, L, m, constant_speed=False, check=True):
    """Curve whose samples are ``fn(t)`` snapped to the surface, ``t`` on the grid."""
    grid = PartitionGrid(L, m)
    pts = surface.snap(np.asarray(fn(grid.params), dtype=float))
    c = DiscreteCurve(surface, grid, pts, constant_speed)
    return validate(c) if check else c


def point_curve(surface, p, L, m):
    grid = PartitionGrid(L, m)
    return DiscreteCurve(surface, grid, np.repeat(np.asarray(p, float)[None], grid.n, axis=0), True)


def from_samples(surface, points, L: int, m: int) -> DiscreteCurve:
    """Resample a closed polyline on the surface to a constant-speed curve.

    Raises
    ------
    LipschitzExceeded, SegmentTooLong
        If the result violates the bounds of the curve space.
    """
    P = np.asarray(points, dtype=float)
    grid = PartitionGrid(L, m)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] < 2 * L:
        raise GridMismatch(f"need at least 2L = {2 * L} points of dimension 3")
    c = DiscreteCurve(surface, grid, _uniform_resample(surface, P, grid.n))
    steps = c.steps
    return validate(c.with_points(c.points, constant_speed=bool(np.ptp(steps) <= TOL_PARAM * steps.mean())))


def energy(curve: DiscreteCurve) -> float:
    """Energy of the sampled curve: sum of step^2 / h over the grid.

    For a constant-speed curve this is exactly ``length**2 / (2 pi)``.
    """
    s = curve.steps
    return float(np.dot(s, s) / curve.grid.h)


def length(curve: DiscreteCurve) -> float:
    """Sum of intrinsic step lengths."""
    return float(curve.steps.sum())


def reparametrize_constant_speed(curve: DiscreteCurve, polygon=None) -> DiscreteCurve:
    """Resample to equal intrinsic steps, keeping the first sample fixed.

    The new samples lie on the old polygon, or on ``polygon`` (any number of
    vertices, closed) when given. Point curves and curves that are already
    uniform are returned as is (flagged constant speed). The flag is withheld
    if the steps still differ by more than ``TOL_PARAM`` relative; the samples
    are then uniform in arclength along the polygon.
    """
    if polygon is not None:
        curve = curve.with_points(_uniform_resample(curve.surface, np.asarray(polygon, float), curve.grid.n))
    steps = curve.steps
    total = steps.sum()
    c = curve
    if polygon is None and total >= COLLAPSE * curve.surface.scale and np.ptp(steps) > UNIFORM * total / curve.grid.n:
        c = curve.with_points(_uniform_resample(curve.surface, curve.points, curve.grid.n))
        steps = c.steps
    if total >= COLLAPSE * curve.surface.scale and np.ptp(steps) > TOL_PARAM * steps.mean():
        return c
    if c.constant_speed:
        return c
    return c.with_points(c.points, constant_speed=True)


def _check_grids(c1, c2):
    if c1.grid != c2.grid:
        raise GridMismatch(f"grids differ: {c1.grid} vs {c2.grid}")


def w12_distance(c1: DiscreteCurve, c2: DiscreteCurve) -> CurveMetricReport:
    """W^{1,2} distance in ambient coordinates.

    Periodic trapezoid rule; derivatives by centered differences.
    """
    _check_grids(c1, c2)
    d = c1.points - c2.points
    h = c1.grid.h
    dd = (np.roll(d, -1, axis=0) - np.roll(d, 1, axis=0)) / (2 * h)
    l2 = float(np.sum(d * d) * h)
    h1 = float(np.sum(dd * dd) * h)
    return CurveMetricReport(l2, h1, math.sqrt(l2 + h1))


def wirtinger_gap(f) -> float:
    """``4 int f'^2 - int f^2`` for samples of ``f`` on a uniform grid of [0, 2 pi].

    Both integrals are exact for the piecewise-linear interpolant, so the
    result is never below zero up to rounding.

    Raises
    ------
    EndpointNotZero
        If ``f`` does not vanish at both ends.
    """
    f = np.asarray(f, dtype=float)
    scale = max(1.0, float(np.abs(f).max(initial=0.0)))
    if abs(f[0]) > 1e-12 * scale or abs(f[-1]) > 1e-12 * scale:
        raise EndpointNotZero(f"f(0) = {f[0]:.3g}, f(2pi) = {f[-1]:.3g}")
    h = 2 * math.pi / (f.size - 1)
    a, b = f[:-1], f[1:]
    l2 = float(np.sum(a * a + a * b + b * b) * h / 3)
    h1 = float(np.sum((b - a) ** 2) / h)
    return 4 * h1 - l2


def evaluate(curve: DiscreteCurve, x: float) -> np.ndarray:
    """Point at parameter ``x``: linear between samples, then snapped."""
    g = curve.grid
    u = (float(x) % (2 * math.pi)) / g.h
    i = int(math.floor(u))
    t = u - i
    i %= g.n
    if t == 0.0:
        return curve.points[i].copy()
    p = curve.points[i] + t * (curve.points[(i + 1) % g.n] - curve.points[i])
    return curve.surface.snap(p)


def write_csv(curve: DiscreteCurve, path) -> None:
    """Write ``L,m,constant_speed,speed`` then one ``x,y,z`` row per sample."""
    with open(path, "w", newline="") as fh:
        fh.write("L,m,constant_speed,speed\n")
        fh.write("%d,%d,%d,%.17g\n" % (curve.L, curve.m, int(curve.constant_speed), curve.speed))
        fh.write("x,y,z\n")
        for p in curve.points:
            fh.write("%.17g,%.17g,%.17g\n" % tuple(p))


def read_csv(surface, path, L=None, m=None) -> DiscreteCurve:
    """Read a curve written by :func:`write_csv`.

    A bare ``x,y,z`` table is taken as a closed polyline and resampled with
    :func:`from_samples`, which then needs ``L`` and ``m``.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0][0].strip() == "L":
        L_, m_, cs = (int(v) for v in rows[1][:3])
        pts = np.array([[float(v) for v in r] for r in rows[3:]])
        return validate(DiscreteCurve(surface, PartitionGrid(L_, m_), pts, bool(cs)))
    start = 1 if rows and rows[0][0].strip() == "x" else 0
    pts = np.array([[float(v) for v in r] for r in rows[start:]])
    if L is None or m is None:
        raise GridMismatch("a bare point table needs L and m to resample")
    return from_samples(surface, pts, L, m)
