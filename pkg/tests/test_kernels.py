import os
import subprocess
import sys

import numpy as np
import pytest

from birkhoff import _implicit as imp
from birkhoff import kernels

BACKENDS = kernels.backends()


def _pairs(surf, n=12, seed=3):
    rng = np.random.default_rng(seed)
    P = surf.radial_point(rng.normal(size=(n, 3)))
    D = rng.normal(size=(n, 3)) * 3.0
    return P, surf.snap(P + D)


def test_compiled_backend_is_built():
    assert "cython" in BACKENDS
    assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_bvp_hits_endpoints(surface, name):
    P, Q = _pairs(surface)
    S, lengths, status = BACKENDS[name].solve_bvp_batch(
        surface.kind, np.array(surface.prm), P, Q, 16, 4, 1e-8, 50)
    assert np.all(status == 0)
    assert np.allclose(S[:, 0], P) and np.allclose(S[:, -1], Q)
    # constant speed: chords agree up to the curvature correction of each step
    gaps = np.linalg.norm(np.diff(S, axis=1), axis=2)
    assert np.all(np.ptp(gaps, axis=1) < 1e-4 * gaps.mean(axis=1) + 1e-12)


def test_backends_agree(surface):
    if "cython" not in BACKENDS:
        pytest.skip("compiled backend unavailable")
    P, Q = _pairs(surface)
    prm = np.array(surface.prm)
    a = BACKENDS["python"].solve_bvp_batch(surface.kind, prm, P, Q, 16, 4, 1e-8, 50)
    b = BACKENDS["cython"].solve_bvp_batch(surface.kind, prm, P, Q, 16, 4, 1e-8, 50)
    assert np.abs(a[0] - b[0]).max() < 1e-8
    assert np.abs(a[1] - b[1]).max() < 1e-8
    x0, v0 = P[0], np.cross(surface.normal(P[0]), [0.0, 0.0, 1.0])
    pa, va = BACKENDS["python"].shoot(surface.kind, prm, x0, v0, 5.0, 200)
    pb, vb = BACKENDS["cython"].shoot(surface.kind, prm, x0, v0, 5.0, 200)
    assert np.abs(pa - pb).max() < 1e-10 and np.abs(va - vb).max() < 1e-10


def test_degenerate_pair_gives_constant_segment(surface):
    P, _ = _pairs(surface, n=2)
    for mod in BACKENDS.values():
        S, lengths, status = mod.solve_bvp_batch(surface.kind, np.array(surface.prm), P, P.copy(), 8, 2, 1e-8, 50)
        assert np.all(lengths == 0) and np.all(status == 0)
        assert np.all(S == P[:, None, :])


def test_pure_python_switch():
    env = dict(os.environ, BIRKHOFF_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from birkhoff import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_gradient_matches_finite_differences(surface):
    rng = np.random.default_rng(0)
    X = surface.radial_point(rng.normal(size=(20, 3))) * 1.01
    _, G = imp.value_grad(surface.kind, surface.prm, X)
    h = 1e-6 * surface.size
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fp, _ = imp.value_grad(surface.kind, surface.prm, X + e)
        fm, _ = imp.value_grad(surface.kind, surface.prm, X - e)
        assert np.allclose((fp - fm) / (2 * h), G[:, i], rtol=1e-6, atol=1e-8 * np.abs(G).max())


def test_hessian_form_matches_gradient_differences(surface):
    # V^T H V against the central difference of V . grad F along V
    rng = np.random.default_rng(1)
    X = surface.radial_point(rng.normal(size=(20, 3)))
    V = rng.normal(size=(20, 3))
    q = imp.quad(surface.kind, surface.prm, X, V)
    h = 1e-5 * surface.size
    _, gp = imp.value_grad(surface.kind, surface.prm, X + h * V)
    _, gm = imp.value_grad(surface.kind, surface.prm, X - h * V)
    fd = np.einsum("bi,bi->b", gp - gm, V) / (2 * h)
    assert np.allclose(q, fd, rtol=1e-6, atol=1e-9 * np.abs(q).max())


def test_snap_lands_on_surface(surface):
    rng = np.random.default_rng(2)
    X = surface.radial_point(rng.normal(size=(50, 3))) + rng.normal(size=(50, 3)) * 0.5
    Y = surface.snap(X)
    assert surface.residual(Y).max() < 1e-10


def _wavy_polygon(N, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 2 * np.pi, N))
    V = np.c_[np.cos(t) + 0.3 * np.cos(5 * t), np.sin(t), 0.2 * np.sin(3 * t)]
    dl = np.linalg.norm(np.roll(V, -1, axis=0) - V, axis=1)
    return np.ascontiguousarray(V), np.concatenate([[0.0], np.cumsum(dl)])


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
@pytest.mark.parametrize("N", [16, 64, 256])
def test_march_backends_agree(N):
    V, cl = _wavy_polygon(N, N)
    c = np.linspace(0.1, 1.0, 17) * cl[-1] / N
    a = BACKENDS["cython"].march_chords(V, cl, c, N)
    b = BACKENDS["python"].march_chords(V, cl, c, N)
    assert np.array_equal(a[1], b[1])
    assert np.abs(a[0] - b[0]).max() < 1e-12 and np.abs(a[2] - b[2]).max() < 1e-12


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_march_on_regular_polygon(name):
    # chord of a regular N-gon: n = N steps at that chord close exactly
    N = 12
    t = 2 * np.pi * np.arange(N) / N
    V = np.ascontiguousarray(np.c_[np.cos(t), np.sin(t), np.zeros(N)])
    side = 2 * np.sin(np.pi / N)
    cl = np.arange(N + 1) * side
    mis, segs, along = BACKENDS[name].march_chords(V, cl, np.array([0.5 * side, side]), N)
    assert abs(mis[1]) < 1e-12 and mis[0] < 0
    # a point exactly at a vertex may be reported at either adjacent segment
    pos = cl[segs[:, 1] % N] + along[:, 1]
    assert np.abs(pos - np.arange(N) * side).max() < 1e-12
