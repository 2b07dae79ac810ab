import json

import numpy as np
import pytest

from jointopt.cli import main
from jointopt.config import ConfigError, RunManifest, config_from_dict, load_config
from jointopt.exports import read_mesh_text, read_polygon_text


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_default_config_constants():
    cfg = load_config()
    assert cfg.space == "single"
    assert (cfg.sim.E, cfg.sim.nu, cfg.sim.w_pen, cfg.sim.k) == (1.0, 0.4, 1.0, 50.0)
    assert (cfg.sim.mesh_step, cfg.sim.thickness, cfg.sim.traction) == (0.5, 5.0, None)
    assert cfg.sim.traction_for("single") == 0.001 and cfg.sim.traction_for("double") == 0.003
    o, p = cfg.objective, cfg.optimizer
    assert (o.w_min_l, o.w_min_w, o.min_len, o.min_width) == (1.0, 1.0, 1.5, 3.5)
    assert (o.noise_sigma, o.noise_samples) == (0.01, 3)
    assert (p.steps, p.c1, p.c2, p.max_ls_evals, p.max_retries, p.fallback_sigma) == (15, 1e-4, 0.9, 20, 3, 0.5)


def test_unknown_keys_rejected_at_every_level():
    with pytest.raises(ConfigError):
        config_from_dict({"spaec": "single"})
    with pytest.raises(ConfigError):
        config_from_dict({"sim": {"E": 1.0, "poisson": 0.3}})


def test_seed_is_the_only_randomness():
    cfg = config_from_dict({"seed": 11, "objective": {"rng_seed": 3}})
    assert cfg.objective.rng_seed == 11


def test_config_round_trip():
    cfg = config_from_dict({"space": "double", "theta0": [2, 4, 5, 1.5, 3, 2], "sim": {"mesh_step": 0.75}})
    assert config_from_dict(cfg.to_dict()) == cfg


def test_simulate_writes_artifacts(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--mesh-step", "2", "--dump-iterations", "--out", str(out)])
    assert code == 0
    man = RunManifest.read(out / "manifest.json")
    assert man.command == "simulate" and man.exit_code == 0 and man.converged["alternation"]
    for a in ("geometry.svg", "geometry.txt", "mesh_L.txt", "mesh_R.txt", "result.json"):
        assert a in man.artifacts
    assert any(a.startswith("iterations/side_L_iter_") for a in man.artifacts)
    res = json.loads((out / "result.json").read_text())
    assert res["d"] > 0 and res["stiffness_N_per_mm"] == pytest.approx(0.001 * 20 * 5 * 1000 / res["d"])
    polys, pairs = read_polygon_text((out / "geometry.txt").read_text())
    assert len(polys) == 2 and len(pairs) == 6
    mesh = read_mesh_text((out / "mesh_L.txt").read_text())
    assert mesh["field"].shape == mesh["nodes"].shape
    assert (out / "geometry.svg").read_text().startswith("<svg")


def test_rerun_reproduces_artifacts(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--mesh-step", "2", "--out", str(a)]) == 0
    assert main(["rerun", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("mesh_L.txt", "mesh_R.txt", "result.json", "geometry.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_invalid_theta_exit_code(tmp_path, capsys):
    code = main(["simulate", "--theta", "5", "4", "5", "--out", str(tmp_path)])
    assert code == 2
    assert "invalid parameters" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["simulate", "--config", str(_write(tmp_path, {"bogus": 1})), "--out", str(tmp_path)]) == 2
    assert main(["sweep-poisson", "--nu", "0.5", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2


def test_export_geometry(tmp_path):
    assert main(["export-geometry", "--space", "complex", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "design_0.svg").exists() and (tmp_path / "design_0_mesh_R.txt").exists()


def test_grad_check_threshold_exit(tmp_path):
    out = tmp_path / "gc"
    code = main(["grad-check", "--mesh-step", "2", "--threshold", "1e-9", "--out", str(out)])
    assert code == 4
    text = (out / "gradcheck_vertices.csv").read_text()
    assert text.startswith("component,adjoint,fd,rel_diff") and "# mean_rel_diff=" in text
    man = RunManifest.read(out / "manifest.json")
    assert man.exit_code == 4 and man.results["theta_mean_rel_diff"] < 1e-3


def test_optimize_cli_short_run(tmp_path):
    cfg = _write(tmp_path, {"sim": {"mesh_step": 2.0}, "optimizer": {"steps": 1}, "theta0": [[2, 3, 4], [2, 4, 5]]})
    out = tmp_path / "opt"
    assert main(["optimize", "--config", str(cfg), "--out", str(out)]) == 0
    man = RunManifest.read(out / "manifest.json")
    assert len(man.results["runs"]) == 2 and len(man.results["pairwise"]) == 1
    rows = (out / "run_0" / "trace.csv").read_text().splitlines()
    assert rows[0] == "step,a,b,L,loss,d,step_size,step_kind"
    assert len(rows) == 3
    assert (out / "run_1" / "best.svg").exists()
