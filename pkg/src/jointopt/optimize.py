"""Noise-averaged regularized objective and the gradient-descent driver."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .adjoint import GradientVector, grad_wrt_params
from .errors import InvalidParams, JointOptError, LineSearchFailure
from .geometry import DesignSpace, validate_params
from .regularizers import regularizer_min_len, regularizer_min_width
from .simulate import JointModel, SimConfig

log = logging.getLogger(__name__)

NOISE_STREAM = 0
FALLBACK_STREAM = 1


@dataclass
class ObjectiveConfig:
    w_min_l: float = 1.0
    w_min_w: float = 1.0
    min_len: float = 1.5
    min_width: float = 3.5
    noise_sigma: float = 0.01
    noise_samples: int = 3
    rng_seed: int = 0
    max_redraws: int = 5

    def __post_init__(self):
        if self.w_min_l < 0 or self.w_min_w < 0:
            raise ValueError("regularizer weights must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noise_samples < 1:
            raise ValueError("noise_samples must be >= 1")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must fit in 64 bits")


@dataclass
class OptimizerConfig:
    steps: int = 15
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 20
    # first Wolfe trial moves theta by this many mm
    initial_step: float = 0.5
    fallback_sigma: float = 0.5
    max_retries: int = 3
    adjoint_mode: str = "full"

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.steps < 0 or self.max_ls_evals < 1 or self.initial_step <= 0:
            raise ValueError("invalid optimizer budget")


def rng_for(seed: int, stream: int, *ids: int) -> np.random.Generator:
    """Counter-based generator for (seed, stream, ids); independent of call order."""
    counter = [0] * (4 - len(ids)) + [int(i) for i in ids]
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(stream) << 64), counter=counter))


def regularizer_value(theta, space, cfg: ObjectiveConfig) -> float:
    return cfg.w_min_l * regularizer_min_len(theta, space, cfg.min_len) + cfg.w_min_w * regularizer_min_width(
        theta, space, cfg.min_width
    )


@dataclass
class SampleReport:
    theta: np.ndarray
    L: float
    d: float
    converged: bool
    iterations: int
    redraws: int
    error: str = ""
    state: object = field(default=None, repr=False)


class NoisyObjective:
    """L(theta) = mean over noise samples of d + regularizers, on one frozen mesh.

    The noise for sample i at optimizer step k comes from the counter-based
    stream (rng_seed, k, i, attempt), so every point evaluated during one step
    sees the same perturbation sequence and the function stays deterministic.
    """

    def __init__(self, model: JointModel, cfg: ObjectiveConfig | None = None, step: int = 0, adjoint_mode="full"):
        self.model = model
        self.cfg = cfg or ObjectiveConfig()
        self.step = int(step)
        self.adjoint_mode = adjoint_mode
        self.n_evals = 0
        self._cache = {}

    @property
    def space(self) -> DesignSpace:
        return self.model.space

    def _perturbed(self, theta, i):
        cfg = self.cfg
        for attempt in range(cfg.max_redraws + 1):
            if cfg.noise_sigma == 0:
                eta = np.zeros_like(theta)
            else:
                eta = cfg.noise_sigma * rng_for(cfg.rng_seed, NOISE_STREAM, attempt, i, self.step).standard_normal(len(theta))
            ts = theta + eta
            if not validate_params(self.space, ts, self.model.cfg.domain):
                return ts, attempt
            if cfg.noise_sigma == 0:
                break
        return None, cfg.max_redraws

    def _sample(self, theta, i) -> SampleReport:
        ts, redraws = self._perturbed(theta, i)
        if ts is None:
            return SampleReport(theta + 0.0, np.inf, np.inf, False, 0, redraws, "infeasible sample")
        try:
            state = self.model.solve_nodes(self.model.nodes(ts))
        except JointOptError as exc:
            return SampleReport(ts, np.inf, np.inf, False, 0, redraws, f"{type(exc).__name__}: {exc}")
        d = state.d_value
        L = d + regularizer_value(ts, self.space, self.cfg)
        return SampleReport(ts, L, d, state.converged, state.iterations, redraws, state=state)

    def evaluate(self, theta) -> list[SampleReport]:
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key not in self._cache:
            self.n_evals += 1
            self._cache = {key: [self._sample(theta, i) for i in range(self.cfg.noise_samples)]}
        return self._cache[key]

    def value(self, theta) -> float:
        return float(np.mean([s.L for s in self.evaluate(theta)]))

    def __call__(self, theta):
        reps = self.evaluate(theta)
        return self.value(theta), float(np.mean([s.d for s in reps])), reps

    def grad(self, theta) -> GradientVector:
        reps = self.evaluate(theta)
        if not all(np.isfinite(s.L) for s in reps):
            raise JointOptError("gradient requested at a point with failed samples")
        gs = [
            grad_wrt_params(s.state, self.model.morphs, s.theta, self.space, self.cfg, mode=self.adjoint_mode).theta
            for s in reps
        ]
        return GradientVector(np.mean(gs, axis=0))


def objective(theta, cfg: ObjectiveConfig, pipeline, step: int = 0):
    """(L, d, sample reports); ``pipeline`` is a JointModel or a NoisyObjective."""
    obj = pipeline if isinstance(pipeline, NoisyObjective) else NoisyObjective(pipeline, cfg, step)
    return obj(theta)


def objective_grad(theta, cfg: ObjectiveConfig, pipeline, step: int = 0) -> GradientVector:
    obj = pipeline if isinstance(pipeline, NoisyObjective) else NoisyObjective(pipeline, cfg, step)
    return obj.grad(theta)


@dataclass
class LineSearchResult:
    alpha: float
    L: float
    n_evals: int


def wolfe_line_search(
    fun, grad, theta, direction, L0: float, g0, c1=1e-4, c2=0.9, alpha0=1.0, alpha_max=None, max_evals=20
) -> LineSearchResult:
    """Bracketing/zoom search for a step satisfying the strong Wolfe conditions.

    ``fun`` may return +inf for infeasible points; those count as failing the
    decrease condition.  Raises LineSearchFailure once ``max_evals`` function
    evaluations are spent.
    """
    theta = np.asarray(theta, dtype=float)
    p = np.asarray(direction, dtype=float)
    dphi0 = float(np.asarray(g0) @ p)
    if not dphi0 < 0:
        raise ValueError(f"not a descent direction (g.p = {dphi0})")
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        return float(fun(theta + a * p))

    def dphi(a):
        return float(np.asarray(grad(theta + a * p)) @ p)

    def armijo_fails(a, f):
        return not np.isfinite(f) or f > L0 + c1 * a * dphi0

    def zoom(lo, hi, f_lo, f_hi, d_lo):
        while evals < max_evals:
            span = hi - lo
            a = lo + 0.5 * span
            if np.isfinite(f_hi):
                # minimizer of the quadratic through f_lo, d_lo and f_hi
                denom = 2.0 * (f_hi - f_lo - d_lo * span)
                if denom > 0:
                    a = lo - d_lo * span**2 / denom
                left, right = sorted((lo, hi))
                a = float(np.clip(a, left + 0.1 * abs(span), right - 0.1 * abs(span)))
            f = phi(a)
            if armijo_fails(a, f) or f >= f_lo:
                hi, f_hi = a, f
                continue
            d = dphi(a)
            if abs(d) <= -c2 * dphi0:
                return LineSearchResult(a, f, evals)
            if d * (hi - lo) >= 0:
                hi, f_hi = lo, f_lo
            lo, f_lo, d_lo = a, f, d
        raise LineSearchFailure(f"no strong-Wolfe step within {max_evals} evaluations")

    a_prev, f_prev, d_prev = 0.0, L0, dphi0
    a = alpha0 if alpha_max is None else min(alpha0, alpha_max)
    first = True
    while evals < max_evals:
        f = phi(a)
        if armijo_fails(a, f) or (not first and f >= f_prev):
            return zoom(a_prev, a, f_prev, f, d_prev)
        d = dphi(a)
        if abs(d) <= -c2 * dphi0:
            return LineSearchResult(a, f, evals)
        if d >= 0:
            return zoom(a, a_prev, f, f_prev, d)
        a_prev, f_prev, d_prev = a, f, d
        a = 2.0 * a if alpha_max is None else min(2.0 * a, alpha_max)
        if a == a_prev:
            break
        first = False
    raise LineSearchFailure(f"no strong-Wolfe step within {max_evals} evaluations")


@dataclass
class OptStep:
    step: int
    theta: np.ndarray
    L: float
    d: float
    step_size: float
    step_kind: str
    grad_norm: float
    ls_evals: int = 0
    converged: bool = True
    note: str = ""


@dataclass
class OptTrace:
    space: str
    steps: list = field(default_factory=list)

    @property
    def best_index(self) -> int:
        return int(np.argmin([s.d for s in self.steps]))

    @property
    def best(self) -> OptStep:
        return self.steps[self.best_index]

    @property
    def initial(self) -> OptStep:
        return self.steps[0]

    def to_dict(self) -> dict:
        rows = []
        for s in self.steps:
            r = asdict(s)
            r["theta"] = [float(v) for v in s.theta]
            rows.append(r)
        return {"space": self.space, "best_index": self.best_index, "steps": rows}


def _evaluate_at(space, theta, sim: SimConfig, cfg: ObjectiveConfig, step: int, mode: str):
    """Remesh at ``theta`` and evaluate value and gradient; None if infeasible."""
    if validate_params(space, theta, sim.domain):
        return None
    try:
        model = JointModel(space, theta, sim)
        obj = NoisyObjective(model, cfg, step, mode)
        L, d, reps = obj(theta)
        if not np.isfinite(L):
            return None
        return obj, L, d, reps, obj.grad(theta).theta
    except JointOptError as exc:
        log.info("candidate %s rejected: %s", np.round(theta, 4), exc)
        return None


def optimize(
    theta0,
    space,
    sim: SimConfig | None = None,
    cfg: ObjectiveConfig | None = None,
    opt: OptimizerConfig | None = None,
    steps: int | None = None,
    callback=None,
) -> OptTrace:
    """Gradient descent with a strong-Wolfe search and a random fallback step.

    Each accepted iterate is remeshed; line-search trials morph the current
    iterate's mesh.  Step sizes are recorded in mm along the unit negative
    gradient, so Wolfe and fallback steps are comparable.
    """
    space = DesignSpace.parse(space)
    sim = sim or SimConfig()
    cfg = cfg or ObjectiveConfig()
    opt = opt or OptimizerConfig()
    n_steps = opt.steps if steps is None else steps
    theta = np.asarray(theta0, dtype=float).copy()
    bad = validate_params(space, theta, sim.domain)
    if bad:
        raise InvalidParams(bad)
    cur = _evaluate_at(space, theta, sim, cfg, 0, opt.adjoint_mode)
    if cur is None:
        raise JointOptError(f"initial design {theta} could not be evaluated")
    obj, L, d, reps, g = cur
    trace = OptTrace(space.value)
    trace.steps.append(OptStep(0, theta.copy(), L, d, 0.0, "init", float(np.linalg.norm(g)), 0, all(r.converged for r in reps)))
    if callback:
        callback(trace.steps[-1])

    for k in range(1, n_steps + 1):
        gnorm = float(np.linalg.norm(g))
        new, kind, size, evals, note = None, "no-move", 0.0, 0, ""
        if gnorm > 0 and np.all(np.isfinite(g)):
            p = -g
            try:
                res = wolfe_line_search(
                    obj.value,
                    lambda t: obj.grad(t).theta,
                    theta,
                    p,
                    L,
                    g,
                    opt.c1,
                    opt.c2,
                    alpha0=opt.initial_step / gnorm,
                    max_evals=opt.max_ls_evals,
                )
                evals = res.n_evals
                cand = theta + res.alpha * p
                new = _evaluate_at(space, cand, sim, cfg, k, opt.adjoint_mode)
                kind, size = "wolfe", res.alpha * gnorm
                if new is None:
                    note = "wolfe step infeasible after remeshing"
            except LineSearchFailure as exc:
                evals = obj.n_evals - 1
                note = str(exc)
            if new is None:
                unit = p / gnorm
                for attempt in range(opt.max_retries + 1):
                    s = opt.fallback_sigma * rng_for(cfg.rng_seed, FALLBACK_STREAM, attempt, 0, k).standard_normal()
                    new = _evaluate_at(space, theta + s * unit, sim, cfg, k, opt.adjoint_mode)
                    if new is not None:
                        kind, size = "random-fallback", float(s)
                        theta = theta + s * unit
                        break
            else:
                theta = cand
        if new is None:
            # carried over unchanged; re-evaluated with this step's noise
            kind, size = "no-move", 0.0
            new = _evaluate_at(space, theta, sim, cfg, k, opt.adjoint_mode)
            if new is None:
                raise JointOptError(f"current design {theta} became unevaluable")
        obj, L, d, reps, g = new
        trace.steps.append(
            OptStep(k, theta.copy(), L, d, float(size), kind, float(np.linalg.norm(g)), evals,
                    all(r.converged for r in reps), note)
        )
        log.info("step %d %s size %.4f L %.6f d %.6f", k, kind, size, L, d)
        if callback:
            callback(trace.steps[-1])
    return trace
