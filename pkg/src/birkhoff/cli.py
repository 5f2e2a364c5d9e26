"""Command-line driver.

Usage::

    birkhoff <command> --config run.ini [--output DIR] [--seed N] [--workers N]

Commands: ``normalize``, ``shorten``, ``tighten``, ``width``,
``check-properties``, ``emit-plots``. Every run writes ``report.json`` and
its CSV files into the output directory. Exit codes: 0 success, 2 bad
configuration, 3 numerical failure, 4 an iteration cap was hit.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import traceback
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from . import config as cfg
from . import curve as cv
from . import shortening as sh
from . import sweepout as sw
from .errors import BirkhoffError, ConfigInvalid, MissingTrace, NonConvergence
from .manifold import normalize, random_unit_pairs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NONCONVERGENCE = 0, 2, 3, 4
DELTAS = (1e-1, 1e-2, 1e-3)
CHECKPOINT_EVERY = 10


@dataclass
class RunReport:
    config: dict
    scale: float
    outputs: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = __version__

    def to_dict(self):
        return {"config": self.config, "scale": self.scale, "outputs": self.outputs,
                "results": self.results, "wall_time": self.wall_time, "version": self.version}


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return "%.17g" % v


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
    return path


# --- commands ---------------------------------------------------------------------


def _cmd_normalize(conf, surf, out, rep):
    rep.results.update(scale=surf.scale, second_form_bound=surf.second_form_bound,
                       curvature_bound=surf.curvature_bound, injectivity_bound=surf.injectivity_bound)


def _cmd_shorten(conf, surf, out, rep):
    c = cv.read_csv(surf, conf.input_curve, conf.L, conf.m)
    tol = conf.tol("shorten_tol") * surf.scale
    try:
        final, trace = sh.shorten_to_geodesic(c, tol, conf.max_iter)
    except NonConvergence as exc:
        final, trace = exc.partial
        _shorten_outputs(out, rep, final, trace)
        raise
    _shorten_outputs(out, rep, final, trace)


def _shorten_outputs(out, rep, final, trace):
    rep.outputs["trace"] = _write_rows(os.path.join(out, "shorten_trace.csv"),
                                       ["iter", "length", "energy", "moved", "residual"], trace.rows())
    path = os.path.join(out, "final_curve.csv")
    cv.write_csv(final, path)
    rep.outputs["final_curve"] = path
    rep.results.update(trace.to_dict())
    rep.results["final_length"] = cv.length(final)


def _tighten(conf, surf, out, rep, band):
    start = sw.latitude_sweepout(surf, conf.K, conf.L, conf.m)
    deg_before = sw.degree(start)
    stall = conf.tol("stall_tol") * surf.scale**2
    try:
        tight, est = sw.tighten(start, conf.max_iter, stall, conf.worker_count, band=band)
    except NonConvergence as exc:
        tight, est = exc.partial
        _width_outputs(out, rep, tight, est)
        raise
    _width_outputs(out, rep, tight, est)
    rep.results.update(degree_before=deg_before, degree_after=sw.degree(tight))
    return tight, est


def _width_outputs(out, rep, tight, est):
    rep.outputs["width_trace"] = _write_rows(os.path.join(out, "width_trace.csv"),
                                             ["iter", "max_energy", "argmax", "max_adjacent_step"], est.rows())
    t = tight.params
    rows = [(i, k, t[k], e[k]) for i, e in enumerate(est.slice_energies)
            if i % CHECKPOINT_EVERY == 0 or i == len(est.slice_energies) - 1 for k in range(len(e))]
    rep.outputs["slice_energies"] = _write_rows(os.path.join(out, "slice_energies.csv"),
                                                ["iter", "slice", "t", "energy"], rows)
    rep.outputs["sweepout"] = os.path.join(out, "sweepout")
    sw.save(tight, rep.outputs["sweepout"])
    rep.results.update(est.to_dict())


def _oracle(surf):
    if surf.spec.kind == "sphere":
        return 2 * math.pi * surf.prm[0] ** 2
    if surf.spec.kind == "ellipsoid":
        a, b = sorted(surf.prm)[:2]
        return sw.principal_ellipse_length(a, b) ** 2 / (2 * math.pi)
    return None


def _cmd_tighten(conf, surf, out, rep):
    _tighten(conf, surf, out, rep, None)


def _cmd_width(conf, surf, out, rep):
    tight, est = _tighten(conf, surf, out, rep, conf.tol("band"))
    oracle = _oracle(surf)
    rep.results["width_oracle"] = oracle
    if oracle:
        rep.results["width_relative_error"] = est.width_upper / oracle - 1
    rows = []
    for d in DELTAS:
        nm = sw.near_max_slices(tight, d * est.width_upper, est.width_upper)
        fits = nm.fit_distances or [None] * len(nm.indices)
        for k, r, f in zip(nm.indices, nm.residuals, fits):
            rows.append((d, nm.delta, k, cv.energy(tight.slices[k]), r, f))
    rep.outputs["near_max"] = _write_rows(os.path.join(out, "near_max.csv"),
                                          ["delta_rel", "delta", "slice", "energy", "residual", "fit_distance"], rows)


def _cmd_check_properties(conf, _surface, out, rep):
    """Seeded property suites on all three surface families."""
    specs = [cfg.SurfaceSpec("sphere", (1.0,)), cfg.SurfaceSpec("ellipsoid", (1.0, 1.1, 1.2)),
             cfg.SurfaceSpec("perturbed-sphere", (0.1, 3))]
    per = max(1, conf.samples // len(specs))
    L, m = 16, 8
    results = {}
    p3_rows = []
    for i, spec in enumerate(specs):
        surf = normalize(spec, tol_bvp=conf.tol("tol_bvp"))
        curves = sh.random_lambda_curves(surf, per, conf.seed + 1000 * i, L, m)
        viol = worst_equiv = 0.0
        nviol = 0
        for c in curves:
            _, r = sh.psi(c)
            excess = r.length_after - r.length_before
            if excess > 1e-8 * surf.scale:
                nviol += 1
            viol = max(viol, excess / surf.scale)
        for c in curves[:20]:
            worst_equiv = max(worst_equiv, cv.w12_distance(sh.psi(c)[0], sh.psi_symmetric(c)).total)
        table, ok3 = sh.property3_scan(surf, curves[:50])
        p3_rows += [(spec.kind,) + row for row in table]
        rng = np.random.default_rng(np.random.Philox(conf.seed + 1000 * i + 1))
        X, Y = random_unit_pairs(surf, rng, 1000)
        d = np.linalg.norm(X - Y, axis=1)
        norm_viol = int(np.sum(sh.normal_component(surf, X, Y) > d * d))
        results[spec.kind] = {"property1_violations": nviol, "property1_max_excess_over_scale": viol,
                              "equivalence_max": worst_equiv, "property3_bound_ok": ok3,
                              "lemma_norm_violations": norm_viol}
    rep.outputs["property3"] = _write_rows(os.path.join(out, "property3.csv"),
                                           ["surface", "drop_ratio", "moved_sq", "bound"], p3_rows)
    rep.results["properties"] = results


def _cmd_emit_plots(conf, surf, out, rep):
    rep.outputs["plots"] = emit_plot_data(conf.output_dir)


COMMANDS = {
    "normalize": _cmd_normalize,
    "shorten": _cmd_shorten,
    "tighten": _cmd_tighten,
    "width": _cmd_width,
    "check-properties": _cmd_check_properties,
    "emit-plots": _cmd_emit_plots,
}


def run(conf: cfg.RunConfig) -> RunReport:
    """Execute one command and write ``report.json`` into ``conf.output_dir``.

    Module errors propagate after the partial report has been written.
    """
    conf.validate()
    t0 = time.perf_counter()
    out = conf.output_dir
    os.makedirs(out, exist_ok=True)
    stale = os.path.join(out, "error.json")
    if os.path.exists(stale):
        os.remove(stale)
    surf = normalize(conf.surface, seed=conf.seed, tol_bvp=conf.tol("tol_bvp"))
    rep = RunReport(conf.echo(), surf.scale)
    try:
        COMMANDS[conf.command](conf, surf, out, rep)
    finally:
        rep.wall_time = time.perf_counter() - t0
        name = "plots_report.json" if conf.command == "emit-plots" else "report.json"
        rep.outputs["report"] = os.path.join(out, name)
        _write_json(rep.outputs["report"], rep.to_dict())
    return rep


# --- plot data ----------------------------------------------------------------------


def _read_rows(path):
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


def emit_plot_data(report_dir) -> list:
    """Derive plot-ready CSVs from the traces in ``report_dir``.

    Writes into ``report_dir/plots``: ``energy_vs_iteration.csv`` (width or
    shorten trace), ``slice_energy_profile.csv`` (per-slice energies at
    checkpoints) and ``residual_vs_delta.csv`` (largest near-max residual per
    delta), whichever the inputs allow.

    Raises
    ------
    MissingTrace
        If the directory holds no trace CSV.
    """
    def p(name):
        return os.path.join(report_dir, name)

    plots = p("plots")
    written = []
    if os.path.exists(p("width_trace.csv")):
        os.makedirs(plots, exist_ok=True)
        _, rows = _read_rows(p("width_trace.csv"))
        written.append(_write_raw(os.path.join(plots, "energy_vs_iteration.csv"), ["iter", "max_energy"],
                                  [(r[0], r[1]) for r in rows]))
    elif os.path.exists(p("shorten_trace.csv")):
        os.makedirs(plots, exist_ok=True)
        _, rows = _read_rows(p("shorten_trace.csv"))
        written.append(_write_raw(os.path.join(plots, "energy_vs_iteration.csv"), ["iter", "energy"],
                                  [(r[0], r[2]) for r in rows]))
    if os.path.exists(p("slice_energies.csv")):
        _, rows = _read_rows(p("slice_energies.csv"))
        written.append(_write_raw(os.path.join(plots, "slice_energy_profile.csv"), ["iter", "t", "energy"],
                                  [(r[0], r[2], r[3]) for r in rows]))
    if os.path.exists(p("near_max.csv")):
        _, rows = _read_rows(p("near_max.csv"))
        best = {}
        for r in rows:
            best[r[0]] = max(best.get(r[0], 0.0), float(r[4]))
        written.append(_write_rows(os.path.join(plots, "residual_vs_delta.csv"), ["delta_rel", "max_residual"],
                                   [(float(k), v) for k, v in best.items()]))
    if not written:
        raise MissingTrace(f"no trace CSVs in {report_dir}")
    return written


def _write_raw(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    return path


# --- entry point ----------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="birkhoff", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=cfg.COMMANDS)
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--output", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="random seed (overrides the config)")
    ap.add_argument("--workers", type=int, help="worker threads for slice-parallel steps")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    conf = None
    try:
        conf = cfg.load(args.config) if args.config else cfg.parse_ini("")
        overrides = {"command": args.command}
        if args.output:
            overrides["output_dir"] = args.output
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.workers is not None:
            overrides["workers"] = args.workers
        conf = replace(conf, **overrides).validate()
        rep = run(conf)
    except ConfigInvalid as exc:
        # the file itself may be unusable; --output still says where to report
        where = args.output or (conf.output_dir if conf is not None else None)
        return _fail(EXIT_CONFIG, exc, where, {"fields": exc.fields})
    except NonConvergence as exc:
        return _fail(EXIT_NONCONVERGENCE, exc, conf.output_dir)
    except BirkhoffError as exc:
        return _fail(EXIT_NUMERICAL, exc, conf.output_dir)
    print(json.dumps({"command": conf.command, "outputs": rep.outputs}, indent=2))
    return EXIT_OK


def _fail(code, exc, out_dir, extra=None):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    record.update(extra or {})
    print(json.dumps(record), file=sys.stderr)
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            record["traceback"] = traceback.format_exception_only(type(exc), exc)
            _write_json(os.path.join(out_dir, "error.json"), record)
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
