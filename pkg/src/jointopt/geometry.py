"""Parametric joint design spaces and the polygons of both joint halves.

All coordinates are in mm.  Only the lower half of the joint is modelled:
the half-block spans x in [-15, 15], y in [0, 10], with the symmetry plane at
y = 10.  The interface polyline runs from the bottom edge (y = 0) to the
symmetry edge (y = 10); the left half lies on its -x side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidParams

CONTACT = "contact"
TRACTION = "traction"
SYMMETRY = "symmetry"
FREE = "free"


@dataclass(frozen=True)
class SimDomain:
    half_width: float = 15.0
    height: float = 10.0
    thickness: float = 5.0

    def __post_init__(self):
        if self.thickness <= 0 or self.half_width <= 0 or self.height <= 0:
            raise ValueError("domain dimensions must be positive")


DEFAULT_DOMAIN = SimDomain()


class DesignSpace(str, Enum):
    SINGLE = "single"
    COMPLEX = "complex"
    DOUBLE = "double"

    @property
    def param_names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self]

    @property
    def dim(self) -> int:
        return len(PARAM_NAMES[self])

    @classmethod
    def parse(cls, value) -> "DesignSpace":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "").replace("-", "").replace("dovetail", "")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown design space {value!r}") from None


PARAM_NAMES = {
    DesignSpace.SINGLE: ("a", "b", "L"),
    DesignSpace.COMPLEX: ("x0", "y1", "x1", "a", "b", "L"),
    DesignSpace.DOUBLE: ("x0", "x1", "y1", "a", "b", "L"),
}

# Sampling boxes for random initial designs; their widths also normalize
# parameter-space distances.
PARAM_BOX = {
    DesignSpace.SINGLE: ((1.5, 3.5), (2.5, 6.0), (3.0, 8.0)),
    DesignSpace.COMPLEX: ((-8.0, -3.0), (1.5, 3.5), (-1.5, 1.5), (1.5, 3.0), (3.0, 5.5), (3.0, 6.0)),
    DesignSpace.DOUBLE: ((-5.0, -1.5), (-1.0, 1.5), (1.5, 3.5), (1.5, 3.0), (3.0, 5.5), (3.0, 6.0)),
}

DEFAULT_THETA = {
    DesignSpace.SINGLE: (2.0, 4.0, 5.0),
    DesignSpace.COMPLEX: (-5.0, 2.5, 0.0, 2.0, 4.0, 5.0),
    DesignSpace.DOUBLE: (-3.0, 0.0, 2.5, 2.0, 4.0, 5.0),
}


def _as_theta(space: DesignSpace, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != space.dim:
        raise InvalidParams([f"{space.value} expects {space.dim} parameters, got {theta.shape[0]}"])
    return theta


def interface_vertices(space: DesignSpace, theta, domain: SimDomain = DEFAULT_DOMAIN) -> np.ndarray:
    """Interface polyline from y = 0 to y = height, shape (n, 2)."""
    space = DesignSpace.parse(space)
    t = _as_theta(space, theta)
    H = domain.height
    if space is DesignSpace.SINGLE:
        a, b, L = t
        pts = [(0.0, 0.0), (0.0, H - a), (L, H - b), (L, H)]
    elif space is DesignSpace.COMPLEX:
        x0, y1, x1, a, b, L = t
        pts = [(x0, 0.0), (x0, y1), (x1, y1), (x1, H - a), (x1 + L, H - b), (x1 + L, H)]
    else:
        x0, x1, y1, a, b, L = t
        pts = [(x0, 0.0), (x1, y1), (x1, H - a), (x1 + L, H - b), (x1 + L, H)]
    return np.array(pts, dtype=float)


def _affine_jacobian(fn, space: DesignSpace) -> np.ndarray:
    # fn is affine in theta with 0/+-1 coefficients, so differences are exact
    base = fn(np.zeros(space.dim))
    jac = np.empty(base.shape + (space.dim,))
    for j in range(space.dim):
        e = np.zeros(space.dim)
        e[j] = 1.0
        jac[..., j] = fn(e) - base
    return jac


def interface_jacobian(space: DesignSpace, domain: SimDomain = DEFAULT_DOMAIN) -> np.ndarray:
    """d(interface vertices)/d(theta), shape (n, 2, dim); constant in theta."""
    space = DesignSpace.parse(space)
    return _affine_jacobian(lambda t: interface_vertices(space, t, domain), space)


def polygon_vertices(space: DesignSpace, theta, side: str, domain: SimDomain = DEFAULT_DOMAIN) -> np.ndarray:
    """Counter-clockwise vertex list of one joint half."""
    iface = interface_vertices(space, theta, domain)
    W, H = domain.half_width, domain.height
    if side == "L":
        return np.vstack([[(-W, 0.0)], iface, [(-W, H)]])
    if side == "R":
        return np.vstack([iface[:1], [(W, 0.0), (W, H)], iface[:0:-1]])
    raise ValueError(f"side must be 'L' or 'R', got {side!r}")


def polygon_jacobian(space: DesignSpace, side: str, domain: SimDomain = DEFAULT_DOMAIN) -> np.ndarray:
    space = DesignSpace.parse(space)
    return _affine_jacobian(lambda t: polygon_vertices(space, t, side, domain), space)


def polygon_edge_tags(n_interface: int, side: str) -> list[tuple[str, int]]:
    """(tag, interface segment index or -1) for each polygon edge k -> k+1."""
    n_seg = n_interface - 1
    if side == "L":
        return [(FREE, -1)] + [(CONTACT, k) for k in range(n_seg)] + [(SYMMETRY, -1), (TRACTION, -1)]
    return [(FREE, -1), (TRACTION, -1), (SYMMETRY, -1)] + [(CONTACT, k) for k in reversed(range(n_seg))]


@dataclass
class JointGeometry:
    space: DesignSpace
    theta: np.ndarray
    interface: np.ndarray
    left_polygon: np.ndarray
    right_polygon: np.ndarray
    left_tags: list
    right_tags: list
    domain: SimDomain = field(default=DEFAULT_DOMAIN)

    def polygon(self, side: str) -> np.ndarray:
        return self.left_polygon if side == "L" else self.right_polygon

    def tags(self, side: str) -> list:
        return self.left_tags if side == "L" else self.right_tags

    @property
    def n_contact(self) -> int:
        return len(self.interface) - 1

    @property
    def contact_edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Interface segments in order from the bottom edge upwards."""
        return [(self.interface[k], self.interface[k + 1]) for k in range(self.n_contact)]

    def side_contact_edges(self, side: str) -> list[tuple[int, np.ndarray, np.ndarray]]:
        """Contact edges of one half as (segment id, start, end) in that polygon's order."""
        poly = self.polygon(side)
        out = []
        for k, (tag, seg) in enumerate(self.tags(side)):
            if tag == CONTACT:
                out.append((seg, poly[k], poly[(k + 1) % len(poly)]))
        return out

    @property
    def free_edges(self) -> list[tuple[str, str, np.ndarray, np.ndarray]]:
        out = []
        for side in ("L", "R"):
            poly = self.polygon(side)
            for k, (tag, _) in enumerate(self.tags(side)):
                if tag != CONTACT:
                    out.append((side, tag, poly[k], poly[(k + 1) % len(poly)]))
        return out


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _segments_touch(p1, p2, q1, q2, eps=1e-12) -> bool:
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    ):
        return True

    def on_seg(a, b, c, d):
        return abs(d) <= eps and min(a[0], b[0]) - eps <= c[0] <= max(a[0], b[0]) + eps and (
            min(a[1], b[1]) - eps <= c[1] <= max(a[1], b[1]) + eps
        )

    return (
        on_seg(q1, q2, p1, d1)
        or on_seg(q1, q2, p2, d2)
        or on_seg(p1, p2, q1, d3)
        or on_seg(p1, p2, q2, d4)
    )


def is_simple_polygon(poly: np.ndarray) -> bool:
    n = len(poly)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_touch(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                return False
    return polygon_area(poly) > 0


def validate_params(space: DesignSpace, theta, domain: SimDomain = DEFAULT_DOMAIN) -> list[str]:
    """Return every constraint violation of ``theta``; empty means valid."""
    space = DesignSpace.parse(space)
    t = _as_theta(space, theta)
    names = dict(zip(space.param_names, t))
    out = []
    if not np.all(np.isfinite(t)):
        return ["all parameters must be finite"]
    a, b, L = names["a"], names["b"], names["L"]
    H, W = domain.height, domain.half_width
    if not a > 0:
        out.append("a > 0")
    if not b >= a:
        out.append("b >= a (tail must flare to hold tension)")
    if not b <= H:
        out.append(f"b <= {H:g}")
    elif not b < H:
        out.append("tail corner (L, 10-b) must lie above the bottom edge")
    if not L > 0:
        out.append("L > 0")
    if space is not DesignSpace.SINGLE:
        y1 = names["y1"]
        if not y1 > 0:
            out.append("y1 > 0")
        if not y1 < H - b:
            out.append("y1 < 10 - b (shoulder below the tail)")
    if space is DesignSpace.COMPLEX and names["x0"] == names["x1"]:
        out.append("x0 != x1 (shoulder must have positive length)")

    iface = interface_vertices(space, t, domain)
    if np.any(iface[:, 0] <= -W) or np.any(iface[:, 0] >= W):
        out.append(f"interface vertices must lie strictly inside -{W:g} < x < {W:g}")
    if np.any(iface[:, 1] < 0) or np.any(iface[:, 1] > H):
        out.append(f"interface vertices must lie inside 0 <= y <= {H:g}")
    seg = np.linalg.norm(np.diff(iface, axis=0), axis=1)
    if np.any(seg <= 1e-9):
        out.append("every contact edge must have positive length")
    if not out:
        for side in ("L", "R"):
            if not is_simple_polygon(polygon_vertices(space, t, side, domain)):
                out.append(f"{side} polygon self-intersects")
    return out


def build_geometry(space: DesignSpace, theta, domain: SimDomain = DEFAULT_DOMAIN) -> JointGeometry:
    space = DesignSpace.parse(space)
    t = _as_theta(space, theta)
    violations = validate_params(space, t, domain)
    if violations:
        raise InvalidParams(violations)
    iface = interface_vertices(space, t, domain)
    n = len(iface)
    return JointGeometry(
        space=space,
        theta=t.copy(),
        interface=iface,
        left_polygon=polygon_vertices(space, t, "L", domain),
        right_polygon=polygon_vertices(space, t, "R", domain),
        left_tags=polygon_edge_tags(n, "L"),
        right_tags=polygon_edge_tags(n, "R"),
        domain=domain,
    )


def joint_width(space: DesignSpace, theta) -> float:
    """Full-joint neck width of the tail (twice the half-domain neck height)."""
    space = DesignSpace.parse(space)
    t = _as_theta(space, theta)
    violations = validate_params(space, t)
    if violations:
        raise InvalidParams(violations)
    return 2.0 * float(t[space.param_names.index("a")])


def joint_width_grad(space: DesignSpace, theta) -> np.ndarray:
    space = DesignSpace.parse(space)
    g = np.zeros(space.dim)
    g[space.param_names.index("a")] = 2.0
    return g


def contact_edge_lengths(geom: JointGeometry) -> list[float]:
    return [float(np.hypot(*(q - p))) for p, q in geom.contact_edges]


def contact_length_jacobian(space: DesignSpace, theta, domain: SimDomain = DEFAULT_DOMAIN) -> np.ndarray:
    """d(contact edge lengths)/d(theta), shape (n_edges, dim)."""
    space = DesignSpace.parse(space)
    iface = interface_vertices(space, theta, domain)
    J = interface_jacobian(space, domain)
    d = np.diff(iface, axis=0)
    length = np.linalg.norm(d, axis=1)
    dJ = J[1:] - J[:-1]
    return np.einsum("ei,eij->ej", d / length[:, None], dJ)


def flank_slope(space: DesignSpace, theta) -> float:
    """Flare of the tail flank, (b - a) / L."""
    space = DesignSpace.parse(space)
    p = dict(zip(space.param_names, np.asarray(theta, dtype=float)))
    return float((p["b"] - p["a"]) / p["L"])


def sample_params(
    space: DesignSpace, rng: np.random.Generator, max_tries: int = 1000, min_flare: float = 0.3
) -> np.ndarray:
    """Draw a feasible design uniformly from the space's sampling box.

    Designs flaring less than ``min_flare`` are skipped: the alternating
    contact solve stops contracting on nearly parallel flanks.
    """
    space = DesignSpace.parse(space)
    box = np.array(PARAM_BOX[space])
    for _ in range(max_tries):
        t = np.round(rng.uniform(box[:, 0], box[:, 1]), 3)
        if not validate_params(space, t) and flank_slope(space, t) >= min_flare:
            return t
    raise RuntimeError(f"could not sample a feasible {space.value} design")


def normalized_distance(space: DesignSpace, t1, t2) -> float:
    """RMS parameter difference, each component scaled by its sampling-box width."""
    space = DesignSpace.parse(space)
    span = np.array([hi - lo for lo, hi in PARAM_BOX[space]])
    diff = (np.asarray(t1, float) - np.asarray(t2, float)) / span
    return float(np.sqrt(np.mean(diff**2)))
