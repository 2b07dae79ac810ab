"""Plane-stress linear elasticity on P1 triangles.

Units are mm and GPa, so energies are GPa*mm^2 per unit thickness and nodal
forces GPa*mm.  Displacement vectors interleave (ux, uy) by node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, MissingTag, SingularSystem
from .geometry import SYMMETRY, TRACTION


def lame_parameters(E: float, nu: float, convention: str = "reduced") -> tuple[float, float]:
    """Lame constants for plane stress.

    ``reduced`` uses mu = E / (2 (1 - nu^2)); ``standard`` the textbook shear
    modulus E / (2 (1 + nu)).  lambda = E nu / (1 - nu^2) in both.
    """
    if not (E > 0 and 0 <= nu < 0.5):
        raise DomainError(f"need E > 0 and 0 <= nu < 0.5, got E={E}, nu={nu}")
    lam = E * nu / (1.0 - nu**2)
    if convention == "reduced":
        mu = E / (2.0 * (1.0 - nu**2))
    elif convention == "standard":
        mu = E / (2.0 * (1.0 + nu))
    else:
        raise DomainError(f"unknown lame convention {convention!r}")
    return lam, mu


@dataclass(frozen=True)
class Material:
    E: float = 1.0
    nu: float = 0.4
    lame_convention: str = "reduced"

    def __post_init__(self):
        lame_parameters(self.E, self.nu, self.lame_convention)

    @property
    def lam(self) -> float:
        return lame_parameters(self.E, self.nu, self.lame_convention)[0]

    @property
    def mu(self) -> float:
        return lame_parameters(self.E, self.nu, self.lame_convention)[1]

    def D(self) -> np.ndarray:
        """Voigt stiffness for (exx, eyy, 2 exy)."""
        lam, mu = lame_parameters(self.E, self.nu, self.lame_convention)
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


@dataclass(frozen=True)
class LoadCase:
    traction: float
    direction: tuple = (1.0, 0.0)
    edge_tag: str = TRACTION

    def __post_init__(self):
        if self.traction < 0:
            raise DomainError("traction magnitude must be >= 0")
        if not np.isclose(np.hypot(*self.direction), 1.0):
            raise DomainError("traction direction must be a unit vector")


def p1_gradients(nodes: np.ndarray, tris: np.ndarray):
    """Element areas (M,) and shape-function gradients (M, 3, 2)."""
    p0, p1, p2 = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    det = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    g = np.empty((len(tris), 3, 2))
    g[:, 0, 0] = p1[:, 1] - p2[:, 1]
    g[:, 0, 1] = p2[:, 0] - p1[:, 0]
    g[:, 1, 0] = p2[:, 1] - p0[:, 1]
    g[:, 1, 1] = p0[:, 0] - p2[:, 0]
    g[:, 2, 0] = p0[:, 1] - p1[:, 1]
    g[:, 2, 1] = p1[:, 0] - p0[:, 0]
    g /= det[:, None, None]
    return 0.5 * det, g


def _b_matrices(g: np.ndarray) -> np.ndarray:
    M = len(g)
    B = np.zeros((M, 3, 6))
    B[:, 0, 0::2] = g[:, :, 0]
    B[:, 1, 1::2] = g[:, :, 1]
    B[:, 2, 0::2] = g[:, :, 1]
    B[:, 2, 1::2] = g[:, :, 0]
    return B


def _element_dofs(tris: np.ndarray) -> np.ndarray:
    dofs = np.empty((len(tris), 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * tris
    dofs[:, 1::2] = 2 * tris + 1
    return dofs


def elastic_tangent(mesh, mat: Material, nodes: np.ndarray | None = None) -> sp.csr_matrix:
    """Global stiffness K; symmetric, with the rigid modes in its kernel."""
    X = mesh.nodes if nodes is None else nodes
    area, g = p1_gradients(X, mesh.triangles)
    B = _b_matrices(g)
    Ke = np.einsum("mki,kl,mlj->mij", B, mat.D(), B) * area[:, None, None]
    Ke = 0.5 * (Ke + Ke.transpose(0, 2, 1))
    dofs = _element_dofs(mesh.triangles)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * len(X)
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    # duplicate summation order differs between (i, j) and (j, i); symmetrize exactly
    return ((K + K.T) * 0.5).tocsr()


def traction_edges(mesh, load: LoadCase) -> np.ndarray:
    if not mesh.has_tag(load.edge_tag):
        raise MissingTag(load.edge_tag)
    return mesh.boundary_edges[mesh.edge_tag == load.edge_tag]


def traction_load(mesh, load: LoadCase, nodes: np.ndarray | None = None) -> np.ndarray:
    """Nodal forces from a uniform traction, integrated edge-wise by the trapezoid rule."""
    X = mesh.nodes if nodes is None else nodes
    f = np.zeros(2 * len(X))
    if load.traction == 0:
        return f
    e = traction_edges(mesh, load)
    length = np.linalg.norm(X[e[:, 1]] - X[e[:, 0]], axis=1)
    share = 0.5 * load.traction * length
    for c in range(2):
        np.add.at(f, 2 * e[:, 0] + c, share * load.direction[c])
        np.add.at(f, 2 * e[:, 1] + c, share * load.direction[c])
    return f


def elastic_energy(mesh, u: np.ndarray, mat: Material, load: LoadCase) -> float:
    K = elastic_tangent(mesh, mat)
    f = traction_load(mesh, load)
    return float(0.5 * u @ (K @ u) - f @ u)


def strain_energy(mesh, u: np.ndarray, mat: Material) -> float:
    area, g = p1_gradients(mesh.nodes, mesh.triangles)
    eps = np.einsum("mij,mj->mi", _b_matrices(g), u[_element_dofs(mesh.triangles)])
    return float(0.5 * np.sum(area * np.einsum("mi,ij,mj->m", eps, mat.D(), eps)))


def elastic_residual(mesh, u: np.ndarray, mat: Material, load: LoadCase) -> np.ndarray:
    """Gradient of the elastic energy with respect to ``u``."""
    return elastic_tangent(mesh, mat) @ u - traction_load(mesh, load)


def element_stress(mesh, u: np.ndarray, mat: Material) -> np.ndarray:
    """Constant stress (sxx, syy, sxy) of every element."""
    _, g = p1_gradients(mesh.nodes, mesh.triangles)
    eps = np.einsum("mij,mj->mi", _b_matrices(g), u[_element_dofs(mesh.triangles)])
    return eps @ mat.D().T


def constrained_dofs(mesh, extra_pins=()) -> np.ndarray:
    """Vertical dofs of the symmetry edge plus any (node, component) pins."""
    if not mesh.has_tag(SYMMETRY):
        raise MissingTag(SYMMETRY)
    fixed = set((2 * mesh.tagged_nodes(SYMMETRY) + 1).tolist())
    fixed.update(2 * int(n) + int(c) for n, c in extra_pins)
    return np.array(sorted(fixed), dtype=np.int64)


def free_dofs(mesh, extra_pins=()) -> np.ndarray:
    mask = np.ones(2 * mesh.n_nodes, dtype=bool)
    mask[constrained_dofs(mesh, extra_pins)] = False
    return np.flatnonzero(mask)


def apply_symmetry(K: sp.spmatrix, rhs: np.ndarray, mesh, extra_pins=()):
    """Eliminate constrained rows/columns; returns (K_ff, rhs_f, free dofs)."""
    free = free_dofs(mesh, extra_pins)
    K = sp.csr_matrix(K)
    return K[free][:, free].tocsc(), rhs[free], free


def factorize(A: sp.spmatrix):
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    diag = np.abs(lu.U.diagonal())
    if diag.min() <= 1e-14 * diag.max():
        raise SingularSystem("constrained system is singular")
    return lu


def elastic_solve(mesh, mat: Material, load: LoadCase, extra_pins=()) -> np.ndarray:
    """Contact-free static solve under symmetry and pin constraints."""
    K = elastic_tangent(mesh, mat)
    f = traction_load(mesh, load)
    Kff, ff, free = apply_symmetry(K, f, mesh, extra_pins)
    u = np.zeros(2 * mesh.n_nodes)
    if not np.any(ff):
        return u
    u[free] = factorize(Kff).solve(ff)
    # one refinement step keeps the relative residual well below 1e-10
    r = ff - Kff @ u[free]
    u[free] += factorize(Kff).solve(r)
    res = np.linalg.norm(Kff @ u[free] - ff)
    if res > 1e-10 * np.linalg.norm(ff):
        raise SingularSystem(f"residual {res:.3e} exceeds tolerance")
    return u


def elastic_shape_vjp(mesh, mat: Material, lam: np.ndarray, u: np.ndarray, nodes: np.ndarray | None = None):
    """d/dX of lam^T K(X) u with the fields held fixed, shape (N, 2)."""
    X = mesh.nodes if nodes is None else nodes
    T = mesh.triangles
    area, g = p1_gradients(X, T)
    lam_mu = lame_parameters(mat.E, mat.nu, mat.lame_convention)
    ue = u.reshape(-1, 2)[T]  # (M, 3, 2)
    le = lam.reshape(-1, 2)[T]
    gu = np.einsum("mai,maj->mij", ue, g)  # grad u, (M, 2, 2)
    gl = np.einsum("mai,maj->mij", le, g)

    def stress(grad):
        eps = 0.5 * (grad + grad.transpose(0, 2, 1))
        tr = eps[:, 0, 0] + eps[:, 1, 1]
        return lam_mu[0] * tr[:, None, None] * np.eye(2) + 2 * lam_mu[1] * eps

    su, sl = stress(gu), stress(gl)
    dens = np.einsum("mij,mij->m", sl, 0.5 * (gu + gu.transpose(0, 2, 1)))
    # per-element tensor E_m such that d/dX_a = area * E_m @ g_a
    Em = dens[:, None, None] * np.eye(2) - np.einsum("mik,mij->mkj", gu, sl) - np.einsum("mik,mij->mkj", gl, su)
    contrib = area[:, None, None] * np.einsum("mkj,maj->mak", Em, g)
    out = np.zeros_like(X)
    for a in range(3):
        np.add.at(out, T[:, a], contrib[:, a])
    return out


def traction_shape_vjp(mesh, load: LoadCase, lam: np.ndarray, nodes: np.ndarray | None = None):
    """d/dX of lam^T f(X) for the traction load vector."""
    X = mesh.nodes if nodes is None else nodes
    out = np.zeros_like(X)
    if load.traction == 0:
        return out
    e = traction_edges(mesh, load)
    d = X[e[:, 1]] - X[e[:, 0]]
    length = np.linalg.norm(d, axis=1)
    L2 = lam.reshape(-1, 2)
    direction = np.asarray(load.direction, dtype=float)
    w = 0.5 * load.traction * ((L2[e[:, 0]] + L2[e[:, 1]]) @ direction)
    dl = d / length[:, None]
    np.add.at(out, e[:, 1], w[:, None] * dl)
    np.add.at(out, e[:, 0], -w[:, None] * dl)
    return out
