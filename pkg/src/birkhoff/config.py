"""Run configuration: an INI file with ``[run]``, ``[surface]`` and ``[tolerances]``.

Example::

    [run]
    command = width
    L = 64
    m = 16
    K = 65
    max_iter = 500
    seed = 0
    output_dir = out

    [surface]
    kind = sphere
    params = 1

    [tolerances]
    tol_bvp = 1e-8

Environment variables override file values: ``BMM_<KEY>`` for ``[run]``
keys, ``BMM_SURFACE_<KEY>`` and ``BMM_TOLERANCES_<KEY>`` for the other two
sections (for example ``BMM_MAX_ITER=100``, ``BMM_SURFACE_PARAMS=1,1.1,1.2``).
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigInvalid
from .manifold import SurfaceSpec

COMMANDS = ("normalize", "shorten", "tighten", "width", "check-properties", "emit-plots")

# relative tolerances are multiplied by the surface scale (or its square)
DEFAULT_TOLERANCES = {
    "tol_bvp": 1e-8,
    "stall_tol": 1e-6,      # x scale^2
    "shorten_tol": 1e-5,    # x scale
    "band": 0.01,
}


@dataclass
class RunConfig:
    command: str = "width"
    surface: SurfaceSpec = field(default_factory=lambda: SurfaceSpec("sphere", (1.0,)))
    L: int = 64
    m: int = 16
    K: int = 65
    max_iter: int = 500
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    seed: int = 0
    output_dir: str = "birkhoff-out"
    workers: int = 0
    input_curve: str = ""
    samples: int = 1000

    def validate(self):
        errs = {}
        if self.command not in COMMANDS:
            errs["command"] = f"must be one of {', '.join(COMMANDS)}"
        if self.L < 8:
            errs["L"] = "must be >= 8"
        if self.m < 4:
            errs["m"] = "must be >= 4"
        if self.K < 9 or self.K % 2 == 0:
            errs["K"] = "must be odd and >= 9"
        if self.max_iter < 1:
            errs["max_iter"] = "must be positive"
        if self.samples < 1:
            errs["samples"] = "must be positive"
        if self.workers < 0:
            errs["workers"] = "must be >= 0 (0 means all cores)"
        for k, v in self.tolerances.items():
            if k not in DEFAULT_TOLERANCES:
                errs[f"tolerances.{k}"] = "unknown tolerance"
            elif not v > 0:
                errs[f"tolerances.{k}"] = "must be positive"
        if self.command == "shorten" and not self.input_curve:
            errs["input_curve"] = "shorten needs an input curve CSV"
        if errs:
            raise ConfigInvalid(errs)
        return self

    @property
    def worker_count(self):
        return self.workers or os.cpu_count() or 1

    def tol(self, name):
        return self.tolerances.get(name, DEFAULT_TOLERANCES[name])

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = {f.name: str(getattr(self, f.name)) for f in fields(self)
                     if f.name not in ("surface", "tolerances")}
        cp["surface"] = {"kind": self.surface.kind,
                         "params": ",".join(repr(p) for p in self.surface.params)}
        cp["tolerances"] = {k: repr(v) for k, v in sorted(self.tolerances.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def echo(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["surface"] = self.surface.to_dict()
        d["tolerances"] = dict(self.tolerances)
        return d


_INT_KEYS = {"L", "m", "K", "max_iter", "seed", "workers", "samples"}


def parse_ini(text: str, env=None) -> RunConfig:
    """Build a validated RunConfig from INI text plus ``BMM_`` overrides.

    Raises
    ------
    ConfigInvalid
        With one message per offending field.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid({"file": str(exc).splitlines()[0]})
    run = dict(cp["run"]) if cp.has_section("run") else {}
    surface = dict(cp["surface"]) if cp.has_section("surface") else {}
    tols = dict(cp["tolerances"]) if cp.has_section("tolerances") else {}
    _apply_env(env if env is not None else os.environ, run, surface, tols)

    errs = {}
    kwargs = {}
    known = {f.name for f in fields(RunConfig)} - {"surface", "tolerances"}
    for k, v in run.items():
        if k not in known:
            errs[k] = "unknown key"
        elif k in _INT_KEYS:
            try:
                kwargs[k] = int(v)
            except ValueError:
                errs[k] = f"not an integer: {v!r}"
        else:
            kwargs[k] = v
    tolerances = dict(DEFAULT_TOLERANCES)
    for k, v in tols.items():
        try:
            tolerances[k] = float(v)
        except ValueError:
            errs[f"tolerances.{k}"] = f"not a number: {v!r}"
    try:
        params = tuple(float(p) for p in surface.get("params", "1").replace(" ", "").split(",") if p)
        kwargs["surface"] = SurfaceSpec(surface.get("kind", "sphere"), params)
    except ValueError as exc:
        errs["surface"] = str(exc)
    if errs:
        raise ConfigInvalid(errs)
    return RunConfig(tolerances=tolerances, **kwargs).validate()


def _apply_env(env, run, surface, tols):
    by_upper = {f.name.upper(): f.name for f in fields(RunConfig)}
    for key, value in env.items():
        if not key.startswith("BMM_"):
            continue
        name = key[4:]
        if name.startswith("SURFACE_"):
            surface[name[8:].lower()] = value
        elif name.startswith("TOLERANCES_"):
            tols[name[11:].lower()] = value
        elif name in by_upper:
            run[by_upper[name]] = value


def load(path, env=None) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigInvalid({"config": str(exc)})
    return parse_ini(text, env)
