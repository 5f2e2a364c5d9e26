import math
import sys

import numpy as np
import pytest

from birkhoff.curve import reparametrize_constant_speed, sample_curve
from birkhoff.manifold import SurfaceSpec, normalize

SPECS = {
    "sphere": SurfaceSpec("sphere", (1.0,)),
    "ellipsoid": SurfaceSpec("ellipsoid", (1.0, 1.1, 1.2)),
    "perturbed": SurfaceSpec("perturbed-sphere", (0.1, 3)),
}


@pytest.fixture(scope="session")
def sphere():
    return normalize(SPECS["sphere"])


@pytest.fixture(scope="session")
def ellipsoid():
    return normalize(SPECS["ellipsoid"])


@pytest.fixture(scope="session")
def perturbed():
    return normalize(SPECS["perturbed"])


@pytest.fixture(scope="session", params=list(SPECS))
def surface(request):
    return normalize(SPECS[request.param])


def planar_loop(surf, L=64, m=16, tilt=0.0, wave=0.0, k=3, phase=0.0):
    """Radial image of a (possibly tilted, wavy) great circle, at constant speed."""
    def fn(t):
        u = np.c_[np.cos(t + phase), np.sin(t + phase), np.zeros_like(t)]
        u[:, 2] = tilt * np.cos(t + phase) + wave * np.sin(k * t)
        return surf.radial_point(u)

    return reparametrize_constant_speed(sample_curve(surf, fn, L, m))


def latitude(surf, theta, L=64, m=16):
    def fn(t):
        return surf.radial_point(np.c_[math.sin(theta) * np.cos(t), math.sin(theta) * np.sin(t),
                                       np.full_like(t, math.cos(theta))])

    return reparametrize_constant_speed(sample_curve(surf, fn, L, m))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[k])
