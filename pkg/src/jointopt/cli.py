"""Command-line entry point: simulate, grad-check, optimize, sweep-poisson, export-geometry."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from itertools import combinations
from pathlib import Path


from .adjoint import fd_gradient, grad_wrt_params, vertex_fd_check
from .config import ConfigError, RunConfig, RunManifest, config_from_dict, load_config
from .errors import InvalidParams, JointOptError
from .exports import geometry_svg, gradcheck_csv, mesh_text, polygon_text, trace_csv, write_text
from .geometry import DesignSpace, build_geometry, normalized_distance
from .meshing import triangulate
from .optimize import optimize
from .simulate import JointModel

log = logging.getLogger("jointopt")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GRADCHECK = 0, 2, 3, 4


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Run:
    """Collects artifacts and flags for one command invocation."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, cfg.to_dict(), started=_now())

    def write(self, rel: str, text: str):
        write_text(self.out / rel, text)
        self.manifest.artifacts.append(rel)

    def finish(self, code: int) -> int:
        self.manifest.exit_code = code
        self.manifest.finished = _now()
        self.manifest.artifacts.sort()
        self.manifest.write(self.out / "manifest.json")
        return code


def _write_geometry(run: Run, prefix: str, geom):
    run.write(f"{prefix}.svg", geometry_svg(geom))
    run.write(f"{prefix}.txt", polygon_text(geom))


def cmd_simulate(cfg: RunConfig, out) -> int:
    run = Run("simulate", cfg, out)
    theta = cfg.designs()[0]
    model = JointModel(cfg.space, theta, cfg.sim)
    ev = model.evaluate()
    st = ev.state
    _write_geometry(run, "geometry", model.geom)
    for s in ("L", "R"):
        u = st.u_L if s == "L" else st.u_R
        run.write(f"mesh_{s}.txt", mesh_text(model.meshes[s], ev.nodes[s], u))
    if cfg.dump_iterations:
        for rec in st.history:
            run.write(f"iterations/side_{rec.side}_iter_{rec.iteration}.txt", mesh_text(model.meshes[rec.side], ev.nodes[rec.side], rec.u))
    stiffness = model.stiffness(ev.d) if ev.d > 0 and model.traction > 0 else None
    result = {
        "theta": theta.tolist(),
        "d": ev.d,
        "stiffness_N_per_mm": stiffness,
        "traction": model.traction,
        "iterations": st.iterations,
        "changes": st.changes,
        "converged": st.converged,
        "n_nodes": {s: int(model.meshes[s].n_nodes) for s in ("L", "R")},
    }
    run.write("result.json", json.dumps(result, indent=2) + "\n")
    run.manifest.results = result
    run.manifest.converged = {"alternation": st.converged}
    print(f"d = {ev.d:.6g} mm, stiffness = {stiffness if stiffness is None else round(stiffness, 3)} N/mm, "
          f"converged = {st.converged} after {st.iterations} iterations")
    return run.finish(EXIT_OK if st.converged else EXIT_SOLVER)


def cmd_grad_check(cfg: RunConfig, out) -> int:
    run = Run("grad-check", cfg, out)
    theta = cfg.designs()[0]
    model = JointModel(cfg.space, theta, cfg.sim)
    rep, gX, base = vertex_fd_check(model, step=cfg.fd_step)
    run.write("gradcheck_vertices.csv", gradcheck_csv(rep))
    for s in ("L", "R"):
        run.write(f"grad_{s}.txt", mesh_text(model.meshes[s], base.nodes[s], gX[s]))
    results = {"vertex_mean_rel_diff": rep.mean_rel_diff, "n_vertex_components": len(rep.fd)}
    worst = rep.mean_rel_diff
    if cfg.grad_check_theta:
        T = base.state.iterations
        g = grad_wrt_params(base.state, model.morphs).theta
        trep = fd_gradient(lambda t: model.evaluate(t, fixed_iters=T).d, theta, cfg.fd_step, analytic=g,
                           labels=list(DesignSpace.parse(cfg.space).param_names))
        run.write("gradcheck_theta.csv", gradcheck_csv(trep))
        results["theta_mean_rel_diff"] = trep.mean_rel_diff
        worst = max(worst, trep.mean_rel_diff)
    run.manifest.results = results
    run.manifest.converged = {"alternation": base.state.converged}
    ok = worst <= cfg.threshold
    print(f"mean relative difference {worst:.3e} (threshold {cfg.threshold:g}): {'pass' if ok else 'FAIL'}")
    return run.finish(EXIT_OK if ok else EXIT_GRADCHECK)


def _optimize_job(args):
    cfg_dict, theta0 = args
    cfg = config_from_dict(cfg_dict)
    return optimize(theta0, cfg.space, cfg.sim, cfg.objective, cfg.optimizer)


def _run_jobs(cfg: RunConfig, jobs_args):
    if cfg.jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            return list(ex.map(_optimize_job, jobs_args))
    return [_optimize_job(a) for a in jobs_args]


def _write_trace(run: Run, prefix: str, space: DesignSpace, trace, sim):
    run.write(f"{prefix}/trace.csv", trace_csv(trace, space.param_names))
    run.write(f"{prefix}/trace.json", json.dumps(trace.to_dict(), indent=2) + "\n")
    for s in trace.steps:
        run.write(f"{prefix}/step_{s.step:02d}.svg", geometry_svg(build_geometry(space, s.theta, sim.domain)))
    _write_geometry(run, f"{prefix}/best", build_geometry(space, trace.best.theta, sim.domain))


def _summary(trace) -> dict:
    return {
        "theta0": trace.initial.theta.tolist(),
        "best_theta": trace.best.theta.tolist(),
        "initial_d": trace.initial.d,
        "best_d": trace.best.d,
        "best_index": trace.best_index,
        "step_kinds": [s.step_kind for s in trace.steps],
    }


def cmd_optimize(cfg: RunConfig, out) -> int:
    run = Run("optimize", cfg, out)
    space = DesignSpace.parse(cfg.space)
    starts = cfg.designs()
    traces = _run_jobs(cfg, [(cfg.to_dict(), t) for t in starts])
    runs = []
    for i, tr in enumerate(traces):
        _write_trace(run, f"run_{i}", space, tr, cfg.sim)
        runs.append(_summary(tr))
        print(f"run {i}: d {tr.initial.d:.6g} -> best {tr.best.d:.6g} at step {tr.best_index}")
    results = {"runs": runs}
    if len(traces) > 1:
        results["pairwise"] = [
            {
                "runs": [i, j],
                "initial_distance": normalized_distance(space, traces[i].initial.theta, traces[j].initial.theta),
                "optimized_distance": normalized_distance(space, traces[i].best.theta, traces[j].best.theta),
            }
            for i, j in combinations(range(len(traces)), 2)
        ]
    run.manifest.results = results
    run.manifest.converged = {f"run_{i}": all(s.converged for s in tr.steps) for i, tr in enumerate(traces)}
    return run.finish(EXIT_OK)


def cmd_sweep_poisson(cfg: RunConfig, out) -> int:
    run = Run("sweep-poisson", cfg, out)
    space = DesignSpace.parse(cfg.space)
    starts = cfg.designs()
    nus = [float(nu) for nu in cfg.nu_list]
    jobs = []
    for nu in nus:
        sub = replace(cfg, sim=replace(cfg.sim, nu=nu))
        jobs += [(sub.to_dict(), t) for t in starts]
    traces = _run_jobs(cfg, jobs)
    rows = ["nu,run," + ",".join(space.param_names) + ",initial_d,best_d"]
    best = {}
    for k, tr in enumerate(traces):
        nu, i = nus[k // len(starts)], k % len(starts)
        _write_trace(run, f"nu_{nu:g}/run_{i}", space, tr, replace(cfg.sim, nu=nu))
        best[(nu, i)] = tr.best.theta
        rows.append(f"{nu!r},{i}," + ",".join(repr(float(v)) for v in tr.best.theta) + f",{tr.initial.d!r},{tr.best.d!r}")
    run.write("poisson.csv", "\n".join(rows) + "\n")
    dist_rows = ["run,nu_a,nu_b,normalized_distance"]
    pairs = []
    for i in range(len(starts)):
        for a, b in combinations(nus, 2):
            dist = normalized_distance(space, best[(a, i)], best[(b, i)])
            dist_rows.append(f"{i},{a!r},{b!r},{dist!r}")
            pairs.append({"run": i, "nu": [a, b], "normalized_distance": dist})
    run.write("poisson_distances.csv", "\n".join(dist_rows) + "\n")
    run.manifest.results = {"pairs": pairs, "best": {f"{nu:g}/{i}": t.tolist() for (nu, i), t in best.items()}}
    for p in pairs:
        print(f"run {p['run']}: nu {p['nu'][0]:g} vs {p['nu'][1]:g} normalized distance {p['normalized_distance']:.4f}")
    return run.finish(EXIT_OK)


def cmd_export_geometry(cfg: RunConfig, out) -> int:
    run = Run("export-geometry", cfg, out)
    space = DesignSpace.parse(cfg.space)
    for i, t in enumerate(cfg.designs()):
        geom = build_geometry(space, t, cfg.sim.domain)
        _write_geometry(run, f"design_{i}", geom)
        for s in ("L", "R"):
            run.write(f"design_{i}_mesh_{s}.txt", mesh_text(triangulate(geom, s, cfg.sim.mesh_step)))
    return run.finish(EXIT_OK)


COMMANDS = {
    "simulate": cmd_simulate,
    "grad-check": cmd_grad_check,
    "optimize": cmd_optimize,
    "sweep-poisson": cmd_sweep_poisson,
    "export-geometry": cmd_export_geometry,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointopt", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--space", choices=[s.value for s in DesignSpace])
        sp.add_argument("--theta", type=float, nargs="+", help="one starting design")
        sp.add_argument("--mesh-step", type=float)
        sp.add_argument("--dump-iterations", action="store_true", default=None)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--fd-step", type=float)
        sp.add_argument("--threshold", type=float)
        if name == "sweep-poisson":
            sp.add_argument("--nu", type=float, nargs="+", dest="nu_list")
    rr = sub.add_parser("rerun", help="repeat a run from its manifest")
    rr.add_argument("manifest", type=Path)
    rr.add_argument("--out", type=Path, required=True)
    return p


def _resolve(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "space": args.space,
        "theta0": args.theta,
        "dump_iterations": args.dump_iterations,
        "jobs": args.jobs,
        "fd_step": args.fd_step,
        "threshold": args.threshold,
        "nu_list": getattr(args, "nu_list", None),
        "out": str(args.out) if args.out else None,
    }
    cfg = load_config(args.config, overrides)
    if args.mesh_step is not None:
        cfg = config_from_dict({**cfg.to_dict(), "sim": {**cfg.to_dict()["sim"], "mesh_step": args.mesh_step}})
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            man = RunManifest.read(args.manifest)
            cfg = config_from_dict(man.config)
            return COMMANDS[man.command](cfg, args.out)
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, Path(cfg.out))
    except InvalidParams as exc:
        print("invalid parameters:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except JointOptError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
