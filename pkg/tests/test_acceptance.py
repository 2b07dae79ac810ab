"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Optimization runs use seed 0 for both random starts of every design space
(RunConfig(seed=0, random_starts=2)) and the default design for the Poisson
comparison.  Results are computed once per session and shared.
"""

import json
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from jointopt.adjoint import grad_wrt_mesh_coords, vertex_fd_check
from jointopt.cli import main
from jointopt.config import RunConfig, RunManifest
from jointopt.contact import fit_contact_lines
from jointopt.fem import LoadCase, Material, element_stress, elastic_solve
from jointopt.geometry import DEFAULT_THETA, DesignSpace, normalized_distance
from jointopt.meshing import triangulate
from jointopt.optimize import optimize
from jointopt.simulate import JointModel, SimConfig

from conftest import rectangle_geometry

pytestmark = pytest.mark.slow

SEED = 0
SPACES = [s.value for s in DesignSpace]


def test_criterion_1_gradient_correctness(criterion):
    rows, ok = [], True
    for h, budget in ((1.0, 300.0), (0.5, 1200.0)):
        model = JointModel("single", DEFAULT_THETA["single"], SimConfig(mesh_step=h))
        t0 = time.perf_counter()
        rep, _, _ = vertex_fd_check(model, step=1e-4)
        secs = time.perf_counter() - t0
        good = rep.mean_rel_diff <= 1e-3 and secs <= budget
        ok &= good
        # diagnostic only: error relative to the gradient scale
        scaled = np.abs(rep.adjoint - rep.fd).max() / np.abs(rep.fd).max()
        rows.append(f"h={h:g}: mean rel diff {rep.mean_rel_diff:.3g} over {len(rep.fd)} comps in {secs:.0f}s"
                    f" [max abs err / max |g| {scaled:.1e}]")
    criterion(1, ok, "; ".join(rows) + " (need <= 1e-3, <= 5/20 min)")
    assert ok


def test_criterion_2_interior_gradient_nullity(criterion):
    model = JointModel("single", DEFAULT_THETA["single"], SimConfig())
    g = grad_wrt_mesh_coords(model.evaluate().state)
    ratios = {}
    for s in ("L", "R"):
        nb = model.meshes[s].n_boundary
        mag = np.linalg.norm(g[s], axis=1)
        ratios[s] = mag[nb:].max() / mag[:nb].max()
    worst = max(ratios.values())
    ok = worst <= 1e-6
    criterion(2, ok, f"max interior/boundary gradient L {ratios['L']:.2e}, R {ratios['R']:.2e} (need <= 1e-6)")
    assert ok


def test_criterion_3_patch_test(criterion):
    T, mat = 0.003, Material()
    mesh = triangulate(rectangle_geometry(6.0, 3.0, 0.0), "L", 0.4)
    left = np.flatnonzero(np.isclose(mesh.nodes[:, 0], 0.0))
    u = elastic_solve(mesh, mat, LoadCase(T), [(int(n), 0) for n in left])
    s = element_stress(mesh, u, mat)
    err = np.max(np.abs(s[:, 0] - T)) / T
    ok = err <= 1e-10
    criterion(3, ok, f"max rel err of sigma_xx over {len(s)} elements {err:.2e} (need <= 1e-10)")
    assert ok


def test_criterion_4_fd_consistency_chain(criterion):
    rng = np.random.default_rng(SEED)
    worst, penetrating, total = 0.0, 0, 0
    h = 1e-6
    for space in SPACES:
        model = JointModel(space, DEFAULT_THETA[space], SimConfig())
        probs = model.problems(model.nodes(model.theta_ref))
        for side, rigid in (("L", "R"), ("R", "L")):
            p = probs[side]
            lines = fit_contact_lines(model.meshes[rigid], np.zeros(probs[rigid].ndof))
            for _ in range(5):
                u = 0.05 * rng.standard_normal(p.ndof)
                s, _ = p.gaps(u, lines)
                penetrating += int(np.any(s < 0))
                total += 1
                v = rng.standard_normal(p.ndof)
                g, Hv = p.gradient(u, lines), p.hessian(u, lines) @ v
                fd_g = (p.energy(u + h * v, lines) - p.energy(u - h * v, lines)) / (2 * h)
                fd_H = (p.gradient(u + h * v, lines) - p.gradient(u - h * v, lines)) / (2 * h)
                worst = max(worst, abs(fd_g - g @ v) / abs(g @ v), np.linalg.norm(fd_H - Hv) / np.linalg.norm(Hv))
    ok = worst <= 1e-5 and penetrating == total
    criterion(4, ok, f"{total} states ({penetrating} penetrating), worst rel err {worst:.2e} (need <= 1e-5)")
    assert ok


def test_criterion_5_alternating_convergence(criterion):
    rows, ok = [], True
    for space in SPACES:
        st = JointModel(space, DEFAULT_THETA[space], SimConfig()).evaluate().state
        ch = np.array(st.changes)
        monotone = bool(np.all(np.diff(ch[1:]) <= 0))
        fast = st.converged and st.iterations <= 8
        ok &= monotone and fast
        rows.append(f"{space}: {st.iterations} iters, final change {ch[-1]:.1e}, non-increasing={monotone}")
    criterion(5, ok, "; ".join(rows) + " (need <= 8 iters to 1e-6 mm)")
    assert ok


@lru_cache(maxsize=None)
def _run(space, start, nu=0.4):
    """Full 15-step optimization; ``start`` is "default" or a random-start index."""
    cfg = RunConfig(space=space, seed=SEED, random_starts=0 if start == "default" else 2)
    sim = SimConfig(nu=nu)
    theta0 = cfg.designs()[0 if start == "default" else start]
    t0 = time.perf_counter()
    trace = optimize(theta0, space, sim, cfg.objective, cfg.optimizer)
    return trace, time.perf_counter() - t0


def test_criterion_6_optimization_improvement(criterion):
    rows, ok = [], True
    for space in SPACES:
        for i in (0, 1):
            tr, secs = _run(space, i)
            dom = tr.best.d <= tr.initial.d
            ok &= dom and secs <= 1200 and len(tr.steps) == 16
            rows.append(f"{space}#{i} d {tr.initial.d:.4f}->{tr.best.d:.4f} ({secs:.0f}s)")
    tr, secs = _run("single", "default")
    gain = 1 - tr.best.d / tr.initial.d
    ok &= gain >= 0.2 and secs <= 1200
    rows.append(f"single default d {tr.initial.d:.4f}->{tr.best.d:.4f}, {100 * gain:.1f}% lower ({secs:.0f}s)")
    criterion(6, ok, "; ".join(rows) + " (need best <= initial, >= 20% on default, <= 20 min)")
    assert ok


def test_criterion_7_initialization_consistency(criterion):
    rows, ok = [], True
    for space in SPACES:
        (a, _), (b, _) = _run(space, 0), _run(space, 1)
        d0 = normalized_distance(space, a.initial.theta, b.initial.theta)
        d1 = normalized_distance(space, a.best.theta, b.best.theta)
        ok &= d1 < d0
        rows.append(f"{space} {d0:.3f}->{d1:.3f}")
    criterion(7, ok, "normalized distance initial->optimized: " + "; ".join(rows))
    assert ok


def test_criterion_8_poisson_insensitivity(criterion):
    a, _ = _run("single", "default", 0.4)
    b, _ = _run("single", "default", 0.3)
    dist = normalized_distance("single", a.best.theta, b.best.theta)
    ok = dist <= 0.1
    criterion(8, ok, f"single default, best theta nu=0.4 {np.round(a.best.theta, 3).tolist()} vs "
                     f"nu=0.3 {np.round(b.best.theta, 3).tolist()}: distance {dist:.3f} (need <= 0.1)")
    assert ok


def _files(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_criterion_9_determinism(tmp_path, criterion):
    cfg = tmp_path / "opt.json"
    cfg.write_text(json.dumps({"sim": {"mesh_step": 1.5}, "optimizer": {"steps": 2}, "random_starts": 2, "seed": 7}))
    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps({"sim": {"mesh_step": 2.0}, "optimizer": {"steps": 1}}))
    commands = {
        "simulate": ["simulate", "--mesh-step", "1", "--dump-iterations"],
        "grad-check": ["grad-check", "--mesh-step", "2"],
        "optimize": ["optimize", "--config", str(cfg)],
        "sweep-poisson": ["sweep-poisson", "--config", str(sweep)],
        "export-geometry": ["export-geometry", "--space", "double"],
    }
    rows, ok = [], True
    for name, argv in commands.items():
        a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
        code_a = main(argv + ["--out", str(a)])
        code_b = main(["rerun", str(a / "manifest.json"), "--out", str(b)])
        fa, fb = _files(a), _files(b)
        ma, mb = RunManifest.read(a / "manifest.json"), RunManifest.read(b / "manifest.json")
        same = (code_a == code_b == 0 and fa == fb and ma.results == mb.results and ma.config == mb.config
                and ma.artifacts == mb.artifacts)
        ok &= same
        rows.append(f"{name} {len(fa)} files {'identical' if same else 'DIFFER'}")
    criterion(9, ok, "; ".join(rows))
    assert ok
