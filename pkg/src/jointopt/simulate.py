"""Forward simulation of a joint design: geometry -> meshes -> alternating solve."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .contact import PenaltyConfig, SideProblem, SolveState, alternate, simulated_stiffness
from .errors import DomainError
from .fem import LoadCase, Material
from .geometry import DEFAULT_DOMAIN, DesignSpace, SimDomain, build_geometry
from .meshing import build_morph, triangulate

# Tractions in GPa; the single dovetail is loaded more lightly.
DEFAULT_TRACTION = {DesignSpace.SINGLE: 0.001, DesignSpace.COMPLEX: 0.003, DesignSpace.DOUBLE: 0.003}


@dataclass
class SimConfig:
    E: float = 1.0
    nu: float = 0.4
    lame_convention: str = "reduced"
    traction: float | None = None
    mesh_step: float = 0.5
    w_pen: float = 1.0
    k: float = 50.0
    penalty_power: int = 2
    max_iters: int = 24
    tol: float = 1e-6
    newton_tol: float = 1e-9
    newton_max_iter: int = 50
    thickness: float = 5.0

    def __post_init__(self):
        # constructing these validates E, nu, the convention and the penalty
        self.material, self.penalty
        if self.traction is not None and self.traction < 0:
            raise DomainError("traction must be >= 0")
        if not (self.mesh_step > 0 and self.thickness > 0 and self.max_iters >= 1):
            raise DomainError("mesh_step, thickness and max_iters must be positive")

    @property
    def material(self) -> Material:
        return Material(self.E, self.nu, self.lame_convention)

    @property
    def penalty(self) -> PenaltyConfig:
        return PenaltyConfig(self.w_pen, self.k, self.penalty_power)

    @property
    def domain(self) -> SimDomain:
        return SimDomain(DEFAULT_DOMAIN.half_width, DEFAULT_DOMAIN.height, self.thickness)

    def traction_for(self, space: DesignSpace) -> float:
        return DEFAULT_TRACTION[DesignSpace.parse(space)] if self.traction is None else float(self.traction)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Evaluation:
    theta: np.ndarray
    d: float
    state: SolveState
    nodes: dict = field(repr=False)


class JointModel:
    """A design space, a reference design and its frozen-topology meshes.

    Evaluations at other parameter values morph the reference meshes; the
    topology never changes inside one model.
    """

    def __init__(self, space, theta_ref, cfg: SimConfig | None = None):
        self.space = DesignSpace.parse(space)
        self.cfg = cfg or SimConfig()
        self.theta_ref = np.asarray(theta_ref, dtype=float).copy()
        self.geom = build_geometry(self.space, self.theta_ref, self.cfg.domain)
        self.meshes = {s: triangulate(self.geom, s, self.cfg.mesh_step) for s in ("L", "R")}
        self.morphs = {s: build_morph(self.geom, self.meshes[s], self.theta_ref) for s in ("L", "R")}

    @property
    def traction(self) -> float:
        return self.cfg.traction_for(self.space)

    def load(self, side: str) -> LoadCase:
        return LoadCase(self.traction, (-1.0, 0.0) if side == "L" else (1.0, 0.0))

    def nodes(self, theta) -> dict:
        return {s: self.morphs[s].morph_nodes(theta) for s in ("L", "R")}

    def problems(self, nodes: dict) -> dict:
        cfg = self.cfg
        return {
            s: SideProblem(self.meshes[s], cfg.material, self.load(s), cfg.penalty, nodes[s]) for s in ("L", "R")
        }

    def solve_nodes(self, nodes: dict, fixed_iters: int | None = None) -> SolveState:
        probs = self.problems(nodes)
        cfg = self.cfg
        return alternate(
            probs["L"],
            probs["R"],
            max_iters=cfg.max_iters,
            tol=cfg.tol,
            fixed_iters=fixed_iters,
            newton_tol=cfg.newton_tol,
            newton_max_iter=cfg.newton_max_iter,
        )

    def evaluate(self, theta=None, fixed_iters: int | None = None) -> Evaluation:
        theta = self.theta_ref if theta is None else np.asarray(theta, dtype=float)
        nodes = self.nodes(theta)
        state = self.solve_nodes(nodes, fixed_iters)
        return Evaluation(theta.copy(), state.d_value, state, nodes)

    def stiffness(self, d: float) -> float:
        return simulated_stiffness(d, self.traction, self.cfg.domain)
