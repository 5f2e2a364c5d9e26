"""Compare the compiled and numpy kernel backends.

Times one batch of boundary-value problems of the size a single Birkhoff
step issues (64 segments, 32 sub-steps each) on each built-in surface, and
one equal-chord march scan (33 chord candidates over a 1024-vertex
polygon), reporting the largest disagreement between backends.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import math
import time

import numpy as np

from birkhoff import kernels
from birkhoff.curve import sample_curve
from birkhoff.manifold import SurfaceSpec, normalize

SPECS = [
    SurfaceSpec("sphere", (1.0,)),
    SurfaceSpec("ellipsoid", (1.0, 1.1, 1.2)),
    SurfaceSpec("perturbed-sphere", (0.1, 3)),
]


def problems(surf, L=64, m=16):
    """Endpoint pairs of the even intervals of a tilted wavy loop."""
    def loop(t):
        return np.c_[np.cos(t), np.sin(t), 0.3 * np.sin(3 * t) + 0.2] * surf.size

    c = sample_curve(surf, loop, L, m, check=False)
    P = np.ascontiguousarray(c.points[:: 2 * m])
    Q = np.ascontiguousarray(np.roll(P, -1, axis=0))
    chord = np.linalg.norm(Q - P, axis=1).max()
    nsub = max(1, math.ceil(chord * surf.max_principal * 1.2 / (2 * m * 0.004)))
    return P, Q, 2 * m, nsub


def bench(mod, surf, P, Q, nseg, nsub, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        S, lengths, status = mod.solve_bvp_batch(surf.kind, np.array(surf.prm), P, Q, nseg, nsub, 1e-8, 50)
        best = min(best, time.perf_counter() - t0)
    return best, S, lengths, status


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    mods = kernels.backends()
    if "cython" not in mods:
        print("compiled backend not built; only the numpy backend is available")
    print(f"{'surface':<18}{'backend':<9}{'batch':>7}{'ms':>10}{'speedup':>9}{'max diff':>11}")
    for spec in SPECS:
        surf = normalize(spec)
        P, Q, nseg, nsub = problems(surf)
        res = {name: bench(mod, surf, P, Q, nseg, nsub, args.repeat) for name, mod in mods.items()}
        base = res["python"][0]
        for name, (t, S, lengths, status) in res.items():
            diff = float(np.abs(S - res["python"][1]).max())
            print(f"{spec.kind:<18}{name:<9}{len(P):>7}{1e3 * t:>10.2f}{base / t:>9.1f}{diff:>11.2e}")


    V, cl = march_problem()
    c = np.linspace(0.1, 1.0, 33) * cl[-1] / V.shape[0]
    res = {}
    for name, mod in mods.items():
        best = math.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            out = mod.march_chords(V, cl, c, V.shape[0])
            best = min(best, time.perf_counter() - t0)
        res[name] = (best, out[0])
    base = res["python"][0]
    for name, (t, mis) in res.items():
        diff = float(np.abs(mis - res["python"][1]).max())
        print(f"{'march':<18}{name:<9}{len(c):>7}{1e3 * t:>10.2f}{base / t:>9.1f}{diff:>11.2e}")


def march_problem(N=1024):
    t = 2 * math.pi * np.arange(N) / N
    V = np.ascontiguousarray(np.c_[np.cos(t) + 0.3 * np.cos(5 * t), np.sin(t), 0.2 * np.sin(3 * t)])
    dl = np.linalg.norm(np.roll(V, -1, axis=0) - V, axis=1)
    return V, np.concatenate([[0.0], np.cumsum(dl)])


if __name__ == "__main__":
    main()
