"""Reverse-mode derivatives of the alternating contact solve.

Every one-sided solve satisfies R(u, X, lines) = 0, so a seed g on its output
turns into -lam^T dR/dX and -lam^T dR/dlines with H lam = g, H the (symmetric)
penalized tangent.  Line derivatives are pushed back through the TLS fit onto
the positions of the rigid half's nodes, which seeds that half's previous
solve and its node coordinates.  Warm starts are not differentiated: a
converged Newton solve does not depend on its initial guess.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contact import SolveState, displacement_metric_seeds
from .errors import DegenerateFit, SingularSystem, SingularTangent
from .fem import factorize
from .regularizers import regularizer_min_len_grad, regularizer_min_width_grad

REL_FLOOR = 1e-12


@dataclass
class GradientVector:
    theta: np.ndarray
    nodes: dict = field(default_factory=dict, repr=False)


@dataclass
class FDCheckReport:
    adjoint: np.ndarray
    fd: np.ndarray
    rel_diff: np.ndarray
    mean_rel_diff: float
    step: float
    mode: str = "central"
    labels: list = field(default_factory=list)

    def rows(self):
        for i, (a, f, r) in enumerate(zip(self.adjoint, self.fd, self.rel_diff)):
            yield (self.labels[i] if self.labels else str(i)), a, f, r


def adjoint_solve_step(prob, record, seed: np.ndarray):
    """Adjoint of one one-sided solve.

    Returns (dL/dX contribution (N, 2), dL/dnormals (S, 2), dL/doffsets (S,)).
    """
    lam = np.zeros(prob.ndof)
    seed_f = np.asarray(seed, dtype=float)[prob.free]
    if np.any(seed_f):
        try:
            lu = factorize(prob.reduced_hessian(record.u, record.lines))
        except SingularSystem as exc:
            raise SingularTangent(str(exc)) from exc
        lam[prob.free] = lu.solve(seed_f)
    gX = -prob.shape_vjp(record.u, record.lines, lam)
    gN, gc = prob.lines_vjp(record.u, record.lines, lam)
    return gX, -gN, -gc


def line_fit_vjp(line, g_normal: np.ndarray, g_offset: float) -> np.ndarray:
    """Pull (dL/dnormal, dL/doffset) of one TLS line back to its fit points."""
    P = line.points
    w = line.fit_weights
    W = w.sum()
    c = w @ P / W
    r = P - c
    C = (w[:, None] * r).T @ r
    evals, evecs = np.linalg.eigh(C)
    gap = evals[1] - evals[0]
    if gap <= 1e-14 * max(evals[1], 1e-300):
        raise DegenerateFit("line fit has no unique direction; derivative undefined")
    n = line.normal
    t = evecs[:, 1]
    g_eff = np.asarray(g_normal, dtype=float) + g_offset * c
    beta = (g_eff @ t) / (-gap)
    rn = r @ n
    rt = r @ t
    dP = w[:, None] * beta * (rn[:, None] * t + rt[:, None] * n)
    dP += (g_offset * w / W)[:, None] * n
    return dP


def backprop_lines(lines, g_normals: np.ndarray, g_offsets: np.ndarray, n_nodes: int) -> np.ndarray:
    """dL/d(rigid X + u_rigid) per node, shape (n_nodes, 2)."""
    out = np.zeros((n_nodes, 2))
    for line in lines:
        k = line.segment
        if not (np.any(g_normals[k]) or g_offsets[k]):
            continue
        np.add.at(out, line.node_ids, line_fit_vjp(line, g_normals[k], g_offsets[k]))
    return out


def grad_wrt_mesh_coords(state: SolveState, seeds=None, mode: str = "full") -> dict:
    """Total dL/dX for both halves by a reverse sweep over the solve tape.

    ``mode="full"`` reverses every recorded solve, including the line fits;
    ``mode="frozen"`` reverses only the last two solves with lines held fixed.
    """
    probs = state.problems
    if seeds is None:
        seeds = displacement_metric_seeds({s: p.mesh for s, p in probs.items()})
    pending = {"L": np.array(seeds[0], dtype=float), "R": np.array(seeds[1], dtype=float)}
    gX = {s: np.zeros((probs[s].mesh.n_nodes, 2)) for s in ("L", "R")}
    if mode == "full":
        records = state.history
    elif mode == "frozen":
        records = state.history[-2:]
    else:
        raise ValueError(f"unknown adjoint mode {mode!r}")
    for rec in reversed(records):
        side = rec.side
        other = "R" if side == "L" else "L"
        seed = pending[side]
        pending[side] = np.zeros_like(seed)
        dX, gN, gc = adjoint_solve_step(probs[side], rec, seed)
        gX[side] += dX
        if mode == "full":
            dP = backprop_lines(rec.lines, gN, gc, probs[other].mesh.n_nodes)
            gX[other] += dP
            pending[other] += dP.ravel()
    return gX


def grad_wrt_params(state: SolveState, morphs: dict, theta=None, space=None, obj_cfg=None, w_d: float = 1.0, mode="full"):
    """dL/dtheta through the morph, plus the analytic regularizer gradient."""
    gX = grad_wrt_mesh_coords(state, mode=mode) if w_d != 0 else {
        s: np.zeros((p.mesh.n_nodes, 2)) for s, p in state.problems.items()
    }
    g = sum(morphs[s].jacobian_tvp(w_d * gX[s]) for s in ("L", "R"))
    if obj_cfg is not None:
        g = g + obj_cfg.w_min_l * regularizer_min_len_grad(theta, space, obj_cfg.min_len)
        g = g + obj_cfg.w_min_w * regularizer_min_width_grad(theta, space, obj_cfg.min_width)
    return GradientVector(np.asarray(g, dtype=float), gX)


def fd_gradient(func, x0, step: float = 1e-4, mode: str = "central", analytic=None, labels=None) -> FDCheckReport:
    """Finite-difference gradient of ``func`` at ``x0`` compared with ``analytic``."""
    x0 = np.asarray(x0, dtype=float)
    fd = np.zeros_like(x0)
    f0 = None if mode == "central" else func(x0)
    for i in range(len(x0)):
        xp = x0.copy()
        xp[i] += step
        if mode == "central":
            xm = x0.copy()
            xm[i] -= step
            fd[i] = (func(xp) - func(xm)) / (2 * step)
        elif mode == "forward":
            fd[i] = (func(xp) - f0) / step
        else:
            raise ValueError(f"unknown FD mode {mode!r}")
    adj = np.full_like(fd, np.nan) if analytic is None else np.asarray(analytic, dtype=float)
    return make_report(adj, fd, step, mode, labels)


def make_report(adjoint, fd, step, mode="central", labels=None) -> FDCheckReport:
    adjoint = np.asarray(adjoint, dtype=float)
    fd = np.asarray(fd, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(adjoint - fd) / np.abs(fd)
    mask = np.abs(fd) > REL_FLOOR
    mean = float(np.mean(rel[mask])) if np.any(mask) else float("nan")
    return FDCheckReport(adjoint, fd, rel, mean, step, mode, list(labels or []))


def vertex_fd_check(model, theta=None, nodes_per_side=None, step: float = 1e-4, mode: str = "full"):
    """Adjoint vs central FD of d over selected mesh-node coordinates.

    ``nodes_per_side`` maps "L"/"R" to node index arrays; by default every
    node on a contact edge.  FD runs reuse the base run's iteration count so
    both routes differentiate the same computation.
    """
    base = model.evaluate(theta)
    state = base.state
    gX = grad_wrt_mesh_coords(state, mode=mode)
    if nodes_per_side is None:
        nodes_per_side = {s: np.unique(np.concatenate([m.segment_nodes(k) for k in m.contact_segments()]))
                          for s, m in model.meshes.items()}
    adj, fd, labels = [], [], []
    for side in ("L", "R"):
        for node in nodes_per_side[side]:
            for c in range(2):
                vals = []
                for sgn in (1.0, -1.0):
                    X = {s: v.copy() for s, v in base.nodes.items()}
                    X[side][node, c] += sgn * step
                    vals.append(model.solve_nodes(X, fixed_iters=state.iterations).d_value)
                fd.append((vals[0] - vals[1]) / (2 * step))
                adj.append(gX[side][node, c])
                labels.append(f"{side}:{int(node)}:{'xy'[c]}")
    return make_report(adj, fd, step, "central", labels), gX, base
