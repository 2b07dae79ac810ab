"""Penalized contact between the two joint halves, solved by alternation.

Each one-sided problem treats the opposite half as rigid, represented by
straight lines fitted to its deformed contact edges.  The elastic half's
contact edges are penalized with a squared softplus of the signed distance
to the paired line, integrated by the trapezoid rule on the reference edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateFit, DomainError, NewtonDivergence, NoConvergence, SingularSystem
from .fem import (
    LoadCase,
    Material,
    constrained_dofs,
    elastic_shape_vjp,
    elastic_tangent,
    factorize,
    traction_load,
    traction_shape_vjp,
)
from .geometry import CONTACT, TRACTION, SimDomain

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltyConfig:
    w_pen: float = 1.0
    k: float = 50.0
    # 2: squared softplus; 4: literal reading with a squared softplus squared again
    power: int = 2

    def __post_init__(self):
        if not (self.w_pen > 0 and self.k > 0):
            raise DomainError("penalty weight and scale must be positive")
        if self.power not in (2, 4):
            raise DomainError("penalty power must be 2 or 4")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def penalty_derivs(s, cfg: PenaltyConfig = PenaltyConfig()):
    """p(s), p'(s), p''(s) for p = (softplus(-k s) / k) ** power."""
    s = np.asarray(s, dtype=float)
    k, q = cfg.k, cfg.power
    g = np.logaddexp(0.0, -k * s) / k
    sig = _sigmoid(-k * s)
    dg = -sig
    d2g = k * sig * (1.0 - sig)
    p = g**q
    dp = q * g ** (q - 1) * dg
    d2p = q * (q - 1) * g ** (q - 2) * dg**2 + q * g ** (q - 1) * d2g
    return p, dp, d2p


def penalty_integrand(s, cfg: PenaltyConfig = PenaltyConfig()):
    return penalty_derivs(s, cfg)[0]


@dataclass
class ContactLine:
    """Fitted line n.x = offset; n points out of the rigid half's material."""

    normal: np.ndarray
    offset: float
    segment: int
    node_ids: np.ndarray
    fit_weights: np.ndarray
    points: np.ndarray
    residual: float = 0.0

    def sdf(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.normal - self.offset


def signed_distance(point, line: ContactLine):
    return line.sdf(point)


def tls_fit(points: np.ndarray, weights: np.ndarray | None = None, ref_normal=None):
    """Weighted total-least-squares line through ``points``.

    Returns (normal, offset, residual, centroid, eigvals, eigvecs); the normal
    is the eigenvector of the smallest scatter eigenvalue, oriented to have a
    non-negative component along ``ref_normal``.
    """
    P = np.asarray(points, dtype=float)
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=float)
    c = w @ P / w.sum()
    r = P - c
    if np.max(np.linalg.norm(r, axis=1)) <= 1e-12:
        raise DegenerateFit("fit points collapse to a single point")
    C = (w[:, None] * r).T @ r
    evals, evecs = np.linalg.eigh(C)
    n = evecs[:, 0].copy()
    if ref_normal is not None and n @ np.asarray(ref_normal) < 0:
        n = -n
    return n, float(n @ c), float(evals[0]), c, evals, evecs


def fit_contact_lines(mesh_rigid, u_rigid: np.ndarray, nodes: np.ndarray | None = None) -> list[ContactLine]:
    """One TLS line per interface segment of the rigid half, in segment order."""
    X = mesh_rigid.nodes if nodes is None else nodes
    x = X + u_rigid.reshape(-1, 2)
    lines = []
    for seg in mesh_rigid.contact_segments():
        ids = mesh_rigid.segment_nodes(seg)
        d = X[ids[-1]] - X[ids[0]]
        outward = np.array([d[1], -d[0]]) / np.hypot(*d)
        w = np.ones(len(ids))
        n, off, res, *_ = tls_fit(x[ids], w, outward)
        lines.append(ContactLine(n, off, seg, ids, w, x[ids].copy(), res))
    return lines


def _line_arrays(lines: list[ContactLine]):
    nseg = max(l.segment for l in lines) + 1
    N = np.zeros((nseg, 2))
    c = np.zeros(nseg)
    for l in lines:
        N[l.segment] = l.normal
        c[l.segment] = l.offset
    return N, c


class SideProblem:
    """Penalized energy of one elastic half at fixed node coordinates."""

    def __init__(self, mesh, mat: Material, load: LoadCase, cfg: PenaltyConfig, nodes=None, extra_pins=()):
        self.mesh = mesh
        self.mat = mat
        self.load = load
        self.cfg = cfg
        self.X = mesh.nodes if nodes is None else np.asarray(nodes, dtype=float)
        self.extra_pins = tuple(extra_pins)
        self.K = elastic_tangent(mesh, mat, self.X)
        self.f = traction_load(mesh, load, self.X)
        self.fixed = constrained_dofs(mesh, self.extra_pins)
        mask = np.ones(2 * mesh.n_nodes, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)
        cmask = mesh.edge_tag == CONTACT
        self.ce = mesh.boundary_edges[cmask]
        self.ce_seg = mesh.edge_segment[cmask]
        self.ce_vec = self.X[self.ce[:, 1]] - self.X[self.ce[:, 0]]
        self.ce_len = np.linalg.norm(self.ce_vec, axis=1)

    @property
    def ndof(self) -> int:
        return 2 * self.mesh.n_nodes

    def gaps(self, u: np.ndarray, lines):
        """Signed distances (E, 2) of each contact edge's end nodes to its paired line."""
        N, c = _line_arrays(lines)
        x = self.X + u.reshape(-1, 2)
        n = N[self.ce_seg]
        return np.einsum("eaj,ej->ea", x[self.ce], n) - c[self.ce_seg][:, None], n

    def penalty_energy(self, u, lines) -> float:
        s, _ = self.gaps(u, lines)
        p = penalty_derivs(s, self.cfg)[0]
        return float(self.cfg.w_pen * np.sum(0.5 * self.ce_len * (p[:, 0] + p[:, 1])))

    def energy(self, u, lines) -> float:
        return float(0.5 * u @ (self.K @ u) - self.f @ u) + self.penalty_energy(u, lines)

    def gradient(self, u, lines) -> np.ndarray:
        s, n = self.gaps(u, lines)
        _, dp, _ = penalty_derivs(s, self.cfg)
        coef = self.cfg.w_pen * 0.5 * self.ce_len[:, None] * dp  # (E, 2)
        g = (self.K @ u - self.f).reshape(-1, 2)
        for a in range(2):
            np.add.at(g, self.ce[:, a], coef[:, a, None] * n)
        return g.ravel()

    def penalty_hessian(self, u, lines) -> sp.csr_matrix:
        s, n = self.gaps(u, lines)
        _, _, d2p = penalty_derivs(s, self.cfg)
        coef = self.cfg.w_pen * 0.5 * self.ce_len[:, None] * d2p
        nn = np.einsum("ei,ej->eij", n, n)
        rows, cols, vals = [], [], []
        for a in range(2):
            node = self.ce[:, a]
            blk = coef[:, a, None, None] * nn
            for i in range(2):
                for j in range(2):
                    rows.append(2 * node + i)
                    cols.append(2 * node + j)
                    vals.append(blk[:, i, j])
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()

    def hessian(self, u, lines) -> sp.csr_matrix:
        return (self.K + self.penalty_hessian(u, lines)).tocsr()

    def reduced_hessian(self, u, lines):
        H = self.hessian(u, lines)
        return H[self.free][:, self.free].tocsc()

    def shape_vjp(self, u, lines, lam) -> np.ndarray:
        """d/dX of lam^T R(u, X, lines) with u and lines held fixed, shape (N, 2)."""
        out = elastic_shape_vjp(self.mesh, self.mat, lam, u, self.X)
        out -= traction_shape_vjp(self.mesh, self.load, lam, self.X)
        s, n = self.gaps(u, lines)
        _, dp, d2p = penalty_derivs(s, self.cfg)
        w = self.cfg.w_pen
        L2 = lam.reshape(-1, 2)
        nl = np.einsum("eaj,ej->ea", L2[self.ce], n)  # n . lam at each edge end
        via_s = w * 0.5 * self.ce_len[:, None] * d2p * nl
        for a in range(2):
            np.add.at(out, self.ce[:, a], via_s[:, a, None] * n)
        dlen = w * 0.5 * np.sum(dp * nl, axis=1)
        t = self.ce_vec / self.ce_len[:, None]
        np.add.at(out, self.ce[:, 1], dlen[:, None] * t)
        np.add.at(out, self.ce[:, 0], -dlen[:, None] * t)
        return out

    def lines_vjp(self, u, lines, lam):
        """d/d(normal, offset) of lam^T R for every segment: arrays (S, 2), (S,)."""
        N, _ = _line_arrays(lines)
        s, n = self.gaps(u, lines)
        _, dp, d2p = penalty_derivs(s, self.cfg)
        w = self.cfg.w_pen
        x = self.X + u.reshape(-1, 2)
        L2 = lam.reshape(-1, 2)
        nl = np.einsum("eaj,ej->ea", L2[self.ce], n)
        half = w * 0.5 * self.ce_len[:, None]
        gN = np.zeros_like(N)
        gc = np.zeros(len(N))
        for a in range(2):
            term = (half[:, 0] * d2p[:, a] * nl[:, a])[:, None] * x[self.ce[:, a]]
            term += (half[:, 0] * dp[:, a])[:, None] * L2[self.ce[:, a]]
            np.add.at(gN, self.ce_seg, term)
            np.add.at(gc, self.ce_seg, -half[:, 0] * d2p[:, a] * nl[:, a])
        return gN, gc


@dataclass
class NewtonInfo:
    iterations: int
    residual: float
    converged: bool
    energy: float


def _newton_direction(H, R):
    """Solve H du = -R; if H is singular (a half that has separated from every
    line has no x-restraint), retry with a growing diagonal shift."""
    try:
        return factorize(H).solve(-R)
    except SingularSystem:
        pass
    scale = np.abs(H.diagonal()).max()
    for shift in (1e-10, 1e-8, 1e-6, 1e-4):
        try:
            return factorize(H + shift * scale * sp.identity(H.shape[0], format="csc")).solve(-R)
        except SingularSystem:
            continue
    raise SingularSystem("tangent singular even after diagonal shifts")


def newton_solve_side(prob: SideProblem, lines, u_init=None, tol: float = 1e-9, max_iter: int = 50):
    """Minimize the penalized energy by damped Newton; returns (u, NewtonInfo).

    After the residual tolerance is met, up to two extra undamped steps are
    taken while they keep reducing the residual, so that converged fields are
    accurate to near machine precision (finite-difference checks rely on it).
    """
    u = np.zeros(prob.ndof) if u_init is None else np.array(u_init, dtype=float)
    u[prob.fixed] = 0.0
    free = prob.free
    E = prob.energy(u, lines)
    R = prob.gradient(u, lines)[free]
    rn = np.max(np.abs(R)) if len(R) else 0.0
    it = 0
    while rn > tol and it < max_iter:
        it += 1
        du = _newton_direction(prob.reduced_hessian(u, lines), R)
        slope = R @ du
        alpha, back = 1.0, 0
        while True:
            trial = u.copy()
            trial[free] += alpha * du
            E_new = prob.energy(trial, lines)
            if E_new <= E + 1e-4 * alpha * slope:
                break
            if abs(E_new - E) <= 1e-13 * max(1.0, abs(E)):
                R_try = prob.gradient(trial, lines)[free]
                if np.max(np.abs(R_try)) < rn:
                    break
            alpha *= 0.5
            back += 1
            if back >= 20:
                raise NewtonDivergence(f"energy failed to decrease after {back} backtracks (residual {rn:.3e})")
        u, E = trial, E_new
        R = prob.gradient(u, lines)[free]
        rn = np.max(np.abs(R))
    converged = rn <= tol
    if converged:
        for _ in range(2):
            trial = u.copy()
            trial[free] += _newton_direction(prob.reduced_hessian(u, lines), R)
            R_try = prob.gradient(trial, lines)[free]
            rn_try = np.max(np.abs(R_try))
            if not rn_try < rn:
                break
            u, R, rn = trial, R_try, rn_try
        E = prob.energy(u, lines)
    return u, NewtonInfo(it, float(rn), bool(converged), float(E))


@dataclass
class SolveRecord:
    iteration: int
    side: str
    u: np.ndarray
    lines: list
    residual: float
    newton_iters: int


@dataclass
class SolveState:
    u_L: np.ndarray
    u_R: np.ndarray
    history: list = field(default_factory=list)
    changes: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    d_value: float = float("nan")
    problems: dict = field(default_factory=dict, repr=False)

    @property
    def tape(self) -> list:
        return self.history


def _solve_with_continuation(prob: SideProblem, lines, u_init, tol, max_iter, allow_continuation):
    try:
        return newton_solve_side(prob, lines, u_init, tol, max_iter)
    except NewtonDivergence:
        if not allow_continuation or prob.load.traction == 0:
            raise
    log.info("newton stalled from rest; applying load continuation")
    full = prob.load
    u = u_init
    for frac in (0.25, 0.5):
        prob.f = traction_load(prob.mesh, LoadCase(full.traction * frac, full.direction, full.edge_tag), prob.X)
        u, _ = newton_solve_side(prob, lines, u, tol, max_iter)
    prob.f = traction_load(prob.mesh, full, prob.X)
    return newton_solve_side(prob, lines, u, tol, max_iter)


def iteration_change(new_L, old_L, new_R, old_R) -> float:
    """Largest node-displacement change over one iteration, modulo a common x-shift.

    Nothing anchors the assembly horizontally, so both halves may drift by the
    same rigid translation every iteration without changing the relative
    configuration (or d); that shift is removed before taking the maximum.
    """
    dL = (new_L - old_L).reshape(-1, 2)
    dR = (new_R - old_R).reshape(-1, 2)
    shift = np.array([0.5 * (dL[:, 0].mean() + dR[:, 0].mean()), 0.0])
    return float(max(np.linalg.norm(dL - shift, axis=1).max(), np.linalg.norm(dR - shift, axis=1).max()))


def alternate(
    prob_L: SideProblem,
    prob_R: SideProblem,
    max_iters: int = 24,
    tol: float = 1e-6,
    fixed_iters: int | None = None,
    newton_tol: float = 1e-9,
    newton_max_iter: int = 50,
    raise_on_failure: bool = False,
) -> SolveState:
    """Alternate one-sided solves until the fields stop changing.

    Each iteration solves the left half against lines fitted to the right
    half's latest deformed contact edges, then the right half against the
    left's.  ``fixed_iters`` forces an exact iteration count (used when two
    runs must perform the same computation, e.g. finite differences).
    """
    u_L = np.zeros(prob_L.ndof)
    u_R = np.zeros(prob_R.ndof)
    state = SolveState(u_L, u_R, problems={"L": prob_L, "R": prob_R})
    n_iter = fixed_iters if fixed_iters is not None else max_iters
    for t in range(1, n_iter + 1):
        lines_R = fit_contact_lines(prob_R.mesh, u_R, prob_R.X)
        new_L, info_L = _solve_with_continuation(prob_L, lines_R, u_L, newton_tol, newton_max_iter, t == 1)
        state.history.append(SolveRecord(t, "L", new_L, lines_R, info_L.residual, info_L.iterations))
        lines_L = fit_contact_lines(prob_L.mesh, new_L, prob_L.X)
        new_R, info_R = _solve_with_continuation(prob_R, lines_L, u_R, newton_tol, newton_max_iter, t == 1)
        state.history.append(SolveRecord(t, "R", new_R, lines_L, info_R.residual, info_R.iterations))
        change = iteration_change(new_L, u_L, new_R, u_R)
        state.changes.append(change)
        u_L, u_R = new_L, new_R
        state.iterations = t
        if change <= tol:
            state.converged = True
            if fixed_iters is None:
                break
    state.u_L, state.u_R = u_L, u_R
    state.d_value = displacement_metric(state)
    if not state.converged:
        log.warning("alternating solve did not converge in %d iterations (last change %.3e)", n_iter, state.changes[-1])
        if raise_on_failure:
            raise NoConvergence(f"no convergence after {n_iter} iterations")
    return state


def outer_nodes(mesh) -> np.ndarray:
    return mesh.tagged_nodes(TRACTION)


def displacement_metric(state: SolveState, meshes=None) -> float:
    """Mean horizontal displacement of the right outer edge minus that of the left."""
    if meshes is None:
        meshes = {s: p.mesh for s, p in state.problems.items()}
    nl, nr = outer_nodes(meshes["L"]), outer_nodes(meshes["R"])
    return float(np.mean(state.u_R[2 * nr]) - np.mean(state.u_L[2 * nl]))


def displacement_metric_seeds(meshes) -> tuple[np.ndarray, np.ndarray]:
    """d(d)/d(u_L) and d(d)/d(u_R)."""
    out = []
    for side, sign in (("L", -1.0), ("R", 1.0)):
        mesh = meshes[side]
        nodes = outer_nodes(mesh)
        g = np.zeros(2 * mesh.n_nodes)
        g[2 * nodes] = sign / len(nodes)
        out.append(g)
    return out[0], out[1]


def simulated_stiffness(d: float, load: LoadCase | float, domain: SimDomain = SimDomain()) -> float:
    """Force over elongation in N/mm for the full (mirrored) joint."""
    if d <= 0:
        raise DomainError(f"elongation must be positive, got {d}")
    T = load.traction if isinstance(load, LoadCase) else float(load)
    force_N = T * 2.0 * domain.height * domain.thickness * 1000.0
    return force_N / d
