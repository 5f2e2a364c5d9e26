import json
import math
import os
import subprocess
import sys

import pytest

from birkhoff import cli
from birkhoff import config as cfg
from birkhoff import curve as cv
from birkhoff.errors import ConfigInvalid, MissingTrace
from birkhoff.manifold import SurfaceSpec

from conftest import planar_loop

SMALL = """
[run]
L = 32
m = 4
K = 9
max_iter = 40
seed = 3
workers = 1

[surface]
kind = sphere
params = 1
"""


def write_ini(tmp_path, text=SMALL, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run_cli(tmp_path, command, text=SMALL, *extra, out="out"):
    code = cli.main([command, "--config", write_ini(tmp_path, text), "--output", str(tmp_path / out), *extra])
    return code, tmp_path / out


def test_config_defaults_and_round_trip():
    conf = cfg.parse_ini("", env={})
    assert (conf.L, conf.m, conf.K, conf.max_iter) == (64, 16, 65, 500)
    assert conf.surface == SurfaceSpec("sphere", (1.0,))
    back = cfg.parse_ini(conf.to_ini(), env={})
    assert back == conf


def test_config_env_overrides():
    env = {"BMM_MAX_ITER": "7", "BMM_SURFACE_KIND": "ellipsoid", "BMM_SURFACE_PARAMS": "1,1.1,1.2",
           "BMM_TOLERANCES_BAND": "0.05", "OTHER": "x"}
    conf = cfg.parse_ini(SMALL, env=env)
    assert conf.max_iter == 7 and conf.L == 32
    assert conf.surface == SurfaceSpec("ellipsoid", (1.0, 1.1, 1.2))
    assert conf.tol("band") == 0.05


@pytest.mark.parametrize("text, field", [
    ("[run]\nK = 10\n", "K"),
    ("[run]\nL = 4\n", "L"),
    ("[run]\nm = two\n", "m"),
    ("[run]\nbogus = 1\n", "bogus"),
    ("[run]\ncommand = fly\n", "command"),
    ("[tolerances]\nband = -1\n", "tolerances.band"),
    ("[tolerances]\nmystery = 1\n", "tolerances.mystery"),
    ("[run]\ncommand = shorten\n", "input_curve"),
    ("not an ini", "file"),
])
def test_config_errors_name_fields(text, field):
    with pytest.raises(ConfigInvalid) as exc:
        cfg.parse_ini(text, env={})
    assert field in exc.value.fields


def test_exit_code_config(tmp_path, capsys):
    code, out = run_cli(tmp_path, "width", "[run]\nK = 10\n")
    assert code == cli.EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigInvalid" and "K" in err["fields"]
    assert json.loads((out / "error.json").read_text())["exit_code"] == 2


def test_missing_config_file(tmp_path):
    assert cli.main(["width", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_CONFIG


def test_exit_code_numerical(tmp_path):
    text = SMALL.replace("kind = sphere\nparams = 1", "kind = perturbed-sphere\nparams = 0.9,4")
    code, out = run_cli(tmp_path, "normalize", text)
    assert code == cli.EXIT_NUMERICAL
    assert json.loads((out / "error.json").read_text())["error"] == "PerturbationTooLarge"


def test_exit_code_nonconvergence_keeps_partial(tmp_path):
    code, out = run_cli(tmp_path, "width", SMALL.replace("max_iter = 40", "max_iter = 2"))
    assert code == cli.EXIT_NONCONVERGENCE
    assert (out / "width_trace.csv").exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["converged"] is False and rep["results"]["iterations"] == 2


def test_normalize(tmp_path):
    code, out = run_cli(tmp_path, "normalize")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["scale"] == pytest.approx(16 * math.sqrt(2))
    assert rep["config"]["L"] == 32 and rep["version"]
    assert not (out / "error.json").exists()


def test_shorten(tmp_path, sphere):
    path = tmp_path / "loop.csv"
    cv.write_csv(planar_loop(sphere, 32, 4, wave=0.05, k=3), path)
    text = SMALL.replace("max_iter = 40", f"max_iter = 2000\ninput_curve = {path}")
    code, out = run_cli(tmp_path, "shorten", text)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["converged"]
    final = cv.read_csv(sphere, out / "final_curve.csv")
    assert abs(cv.length(final) - 2 * math.pi * sphere.scale) < 1e-3 * sphere.scale
    rows = (out / "shorten_trace.csv").read_text().splitlines()
    assert rows[0] == "iter,length,energy,moved,residual"
    assert len(rows) == rep["results"]["iterations"] + 1


def test_width_outputs(tmp_path):
    code, out = run_cli(tmp_path, "width")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    res = rep["results"]
    assert res["converged"] and abs(res["width_relative_error"]) < 1e-2
    assert res["degree_before"] == res["degree_after"] == 1
    for key in ("width_trace", "slice_energies", "near_max", "sweepout", "report"):
        assert os.path.exists(rep["outputs"][key])
    near = (out / "near_max.csv").read_text().splitlines()
    assert near[0] == "delta_rel,delta,slice,energy,residual,fit_distance"
    assert len(near) > 3


def test_emit_plots(tmp_path):
    code, out = run_cli(tmp_path, "width")
    assert code == 0
    written = cli.emit_plot_data(str(out))
    names = sorted(os.path.basename(p) for p in written)
    assert names == ["energy_vs_iteration.csv", "residual_vs_delta.csv", "slice_energy_profile.csv"]
    deltas = (out / "plots" / "residual_vs_delta.csv").read_text().splitlines()[1:]
    res = [float(r.split(",")[1]) for r in deltas]
    assert res == sorted(res, reverse=True)
    assert cli.main(["emit-plots", "--config", write_ini(tmp_path), "--output", str(out)]) == 0
    assert (out / "plots_report.json").exists()


def test_emit_plots_missing_trace(tmp_path):
    with pytest.raises(MissingTrace):
        cli.emit_plot_data(str(tmp_path))
    code, _ = run_cli(tmp_path, "emit-plots", out="empty")
    assert code == cli.EXIT_NUMERICAL


def test_check_properties(tmp_path):
    code, out = run_cli(tmp_path, "check-properties", SMALL.replace("seed = 3", "seed = 3\nsamples = 30"))
    assert code == 0
    res = json.loads((out / "report.json").read_text())["results"]["properties"]
    assert set(res) == {"sphere", "ellipsoid", "perturbed-sphere"}
    for r in res.values():
        assert r["property1_violations"] == 0 and r["lemma_norm_violations"] == 0
        assert r["equivalence_max"] < 1e-4 and r["property3_bound_ok"]


def _numeric_files(out):
    found = {}
    for root, _, files in os.walk(out):
        for f in files:
            if f.endswith(".csv") or f == "manifest.json":
                path = os.path.join(root, f)
                found[os.path.relpath(path, out)] = open(path, "rb").read()
    return found


def test_determinism_across_runs_and_workers(tmp_path):
    outs = []
    for i, workers in enumerate((1, 1, 3)):
        code, out = run_cli(tmp_path, "width", SMALL, "--workers", str(workers), out=f"o{i}")
        assert code == 0
        outs.append(_numeric_files(out))
    assert outs[0] == outs[1] == outs[2]
    assert len(outs[0]) > 5


def test_module_entry_point(tmp_path):
    ini = write_ini(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "birkhoff", "normalize", "--config", ini,
                           "--output", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "report" in json.loads(proc.stdout)["outputs"]
