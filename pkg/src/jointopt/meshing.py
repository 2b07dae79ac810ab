"""Triangulation of joint halves and the shape-parameter morph of their nodes.

Boundary nodes are placed by the caller (each polygon edge split into equal
pieces no longer than the target step) and Triangle is told not to add
Steiner points on the boundary, so every boundary node is described exactly
by (polygon edge, fraction along that edge).  That description, together with
a harmonic extension into the interior, gives a morph that is affine in the
shape parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import triangle

from .errors import MeshFailure, MorphDegenerate
from .geometry import CONTACT, JointGeometry, polygon_jacobian, polygon_vertices

MIN_ANGLE_DEG = 15.0
MAX_EDGE_FACTOR = 1.5
# Triangle's quality switch; comfortably above the 15 degree acceptance bound.
_QUALITY_ANGLE = 28.0


@dataclass
class TriMesh:
    nodes: np.ndarray  # (N, 2) mm
    triangles: np.ndarray  # (M, 3), counter-clockwise
    boundary_edges: np.ndarray  # (B, 2), along the polygon in CCW order
    edge_poly: np.ndarray  # (B,) polygon edge index of each boundary edge
    edge_tag: np.ndarray  # (B,) tag string
    edge_segment: np.ndarray  # (B,) interface segment id, -1 if not contact
    bnd_poly_edge: np.ndarray  # (Nb,) polygon edge carrying boundary node i
    bnd_frac: np.ndarray  # (Nb,) fraction along that edge
    side: str = "L"
    h: float = 0.5
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_boundary(self) -> int:
        # boundary nodes are numbered first
        return len(self.bnd_frac)

    def with_nodes(self, nodes: np.ndarray) -> "TriMesh":
        return replace(self, nodes=np.asarray(nodes, dtype=float), _cache=self._cache)

    def tagged_nodes(self, tag: str) -> np.ndarray:
        key = ("tag", tag)
        if key not in self._cache:
            self._cache[key] = np.unique(self.boundary_edges[self.edge_tag == tag])
        return self._cache[key]

    def has_tag(self, tag: str) -> bool:
        return bool(np.any(self.edge_tag == tag))

    def contact_segments(self) -> list[int]:
        return sorted(set(int(s) for s in self.edge_segment if s >= 0))

    def segment_nodes(self, seg: int) -> np.ndarray:
        """Nodes on one interface segment, ordered along the polygon boundary."""
        key = ("seg", seg)
        if key not in self._cache:
            edges = self.boundary_edges[self.edge_segment == seg]
            self._cache[key] = np.concatenate([edges[:, 0], edges[-1:, 1]])
        return self._cache[key]

    def node_markers(self) -> list[tuple[int, str]]:
        """(node, tag) pairs, interface edges reported as interface-edge-k."""
        pairs = set()
        for (i, j), tag, seg in zip(self.boundary_edges, self.edge_tag, self.edge_segment):
            name = f"interface-edge-{seg}" if tag == CONTACT else str(tag)
            pairs.add((int(i), name))
            pairs.add((int(j), name))
        return sorted(pairs)

    def triangle_areas(self, nodes: np.ndarray | None = None) -> np.ndarray:
        X = self.nodes if nodes is None else nodes
        p0, p1, p2 = X[self.triangles[:, 0]], X[self.triangles[:, 1]], X[self.triangles[:, 2]]
        e1, e2 = p1 - p0, p2 - p0
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        X, T = self.nodes, self.triangles
        e = np.concatenate([X[T[:, 1]] - X[T[:, 0]], X[T[:, 2]] - X[T[:, 1]], X[T[:, 0]] - X[T[:, 2]]])
        return np.hypot(e[:, 0], e[:, 1])

    def min_angle(self) -> np.ndarray:
        """Smallest interior angle of each triangle in degrees."""
        X, T = self.nodes, self.triangles
        P = [X[T[:, i]] for i in range(3)]
        angles = []
        for i in range(3):
            u = P[(i + 1) % 3] - P[i]
            v = P[(i + 2) % 3] - P[i]
            c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
        return np.min(angles, axis=0)

    def graph_edges(self) -> np.ndarray:
        T = self.triangles
        e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


def _boundary_points(poly: np.ndarray, h: float):
    pts, edge_of, frac = [], [], []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        m = max(1, int(np.ceil(np.hypot(*(q - p)) / h - 1e-9)))
        for j in range(m):
            t = j / m
            pts.append(p + (q - p) * t)
            edge_of.append(k)
            frac.append(t)
    return np.array(pts), np.array(edge_of), np.array(frac)


def triangulate(geom: JointGeometry, side: str, h: float = 0.5) -> TriMesh:
    """Quality constrained-Delaunay mesh of one joint half at target step ``h``."""
    if h <= 0:
        raise ValueError("mesh step must be positive")
    poly = geom.polygon(side)
    tags = geom.tags(side)
    pts, edge_of, frac = _boundary_points(poly, h)
    nb = len(pts)
    segs = np.column_stack([np.arange(nb), (np.arange(nb) + 1) % nb])

    max_area = np.sqrt(3.0) / 4.0 * h * h
    for attempt in range(4):
        opts = f"pq{_QUALITY_ANGLE:g}a{max_area:.17g}YQ"
        out = triangle.triangulate({"vertices": pts, "segments": segs}, opts)
        nodes = np.asarray(out["vertices"], dtype=float)
        tris = np.asarray(out["triangles"], dtype=np.int64)
        if not np.array_equal(nodes[:nb], pts):
            raise MeshFailure("mesher moved or reordered boundary nodes")
        mesh = TriMesh(
            nodes=nodes,
            triangles=tris,
            boundary_edges=segs,
            edge_poly=edge_of.copy(),
            edge_tag=np.array([tags[k][0] for k in edge_of], dtype=object),
            edge_segment=np.array([tags[k][1] for k in edge_of], dtype=np.int64),
            bnd_poly_edge=edge_of,
            bnd_frac=frac,
            side=side,
            h=h,
        )
        areas = mesh.triangle_areas()
        flip = areas < 0
        if np.any(flip):
            tris[flip] = tris[flip][:, [0, 2, 1]]
        if mesh.edge_lengths().max() <= MAX_EDGE_FACTOR * h:
            break
        max_area *= 0.5
    else:
        raise MeshFailure(f"could not meet max edge length {MAX_EDGE_FACTOR * h:g} mm")

    angles = mesh.min_angle()
    if angles.min() < MIN_ANGLE_DEG:
        bad = int(np.argmin(angles))
        centroid = nodes[tris[bad]].mean(axis=0)
        raise MeshFailure(
            f"min angle {angles.min():.2f} deg < {MIN_ANGLE_DEG} near ({centroid[0]:.3f}, {centroid[1]:.3f})"
        )
    if np.any(mesh.triangle_areas() <= 0):
        raise MeshFailure("degenerate triangle produced")
    return mesh


def graph_laplacian(mesh: TriMesh) -> sp.csr_matrix:
    e = mesh.graph_edges()
    n = mesh.n_nodes
    w = np.ones(len(e))
    A = sp.coo_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)).tocsr()
    return (sp.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()


class MorphMap:
    """Affine map from shape parameters to node coordinates at fixed topology.

    Boundary node i sits at ``p + (q - p) * t`` on its polygon edge (p, q);
    interior nodes follow the discrete-harmonic extension of the boundary
    displacement, computed with the uniform graph Laplacian of the reference
    mesh.
    """

    def __init__(self, mesh: TriMesh, ref_polygon: np.ndarray, poly_jac: np.ndarray | None, theta_ref=None):
        self.mesh = mesh
        self.ref_nodes = mesh.nodes.copy()
        self.ref_polygon = np.asarray(ref_polygon, dtype=float)
        self.poly_jac = poly_jac
        self.theta_ref = None if theta_ref is None else np.asarray(theta_ref, dtype=float).copy()
        nb = mesh.n_boundary
        self.nb = nb
        self.edge = mesh.bnd_poly_edge
        self.edge_next = (self.edge + 1) % len(self.ref_polygon)
        self.frac = mesh.bnd_frac
        lap = graph_laplacian(mesh)
        self._L_ib = lap[nb:, :nb].tocsr()
        self._lu = spla.splu(lap[nb:, nb:].tocsc()) if mesh.n_nodes > nb else None

    def _extend(self, db: np.ndarray) -> np.ndarray:
        # interior displacement from boundary displacement: -L_ii^{-1} L_ib db
        if self._lu is None:
            return np.zeros((0, 2))
        return -self._lu.solve(np.asarray(self._L_ib @ db))

    def _extend_T(self, wi: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros((self.nb, 2))
        return -np.asarray(self._L_ib.T @ self._lu.solve(wi, trans="T"))

    def boundary_from_polygon(self, poly: np.ndarray) -> np.ndarray:
        p, q = poly[self.edge], poly[self.edge_next]
        return p + (q - p) * self.frac[:, None]

    def nodes_from_polygon(self, poly: np.ndarray, check: bool = True) -> np.ndarray:
        poly = np.asarray(poly, dtype=float)
        X = np.empty_like(self.ref_nodes)
        X[: self.nb] = self.boundary_from_polygon(poly)
        X[self.nb :] = self.ref_nodes[self.nb :] + self._extend(X[: self.nb] - self.ref_nodes[: self.nb])
        if check and np.any(self.mesh.triangle_areas(X) <= 0):
            raise MorphDegenerate("morph inverted at least one triangle; remesh required")
        return X

    def morph_nodes(self, theta_new, check: bool = True) -> np.ndarray:
        theta_new = np.asarray(theta_new, dtype=float)
        poly = self.ref_polygon + self.poly_jac @ (theta_new - self.theta_ref)
        return self.nodes_from_polygon(poly, check=check)

    def jvp_polygon(self, dpoly: np.ndarray) -> np.ndarray:
        dX = np.empty_like(self.ref_nodes)
        p, q = dpoly[self.edge], dpoly[self.edge_next]
        dX[: self.nb] = p + (q - p) * self.frac[:, None]
        dX[self.nb :] = self._extend(dX[: self.nb])
        return dX

    def vjp_polygon(self, w: np.ndarray) -> np.ndarray:
        wb = w[: self.nb] + self._extend_T(w[self.nb :])
        out = np.zeros_like(self.ref_polygon)
        np.add.at(out, self.edge, wb * (1.0 - self.frac)[:, None])
        np.add.at(out, self.edge_next, wb * self.frac[:, None])
        return out

    def jacobian_vp(self, v_theta) -> np.ndarray:
        """dX/dtheta . v, shape (N, 2); the morph is affine so theta is not needed."""
        return self.jvp_polygon(self.poly_jac @ np.asarray(v_theta, dtype=float))

    def jacobian_tvp(self, w: np.ndarray) -> np.ndarray:
        """(dX/dtheta)^T . w for a per-node covector ``w`` of shape (N, 2)."""
        return np.einsum("pij,pi->j", self.poly_jac, self.vjp_polygon(np.asarray(w, dtype=float)))


def build_morph(geom: JointGeometry, mesh: TriMesh, theta_ref=None) -> MorphMap:
    theta_ref = geom.theta if theta_ref is None else theta_ref
    poly = polygon_vertices(geom.space, theta_ref, mesh.side, geom.domain)
    jac = polygon_jacobian(geom.space, mesh.side, geom.domain)
    return MorphMap(mesh, poly, jac, theta_ref)


def morph_nodes(mmap: MorphMap, theta_new) -> np.ndarray:
    return mmap.morph_nodes(theta_new)


def morph_jacobian_vp(mmap: MorphMap, theta, v_theta) -> np.ndarray:
    return mmap.jacobian_vp(v_theta)
