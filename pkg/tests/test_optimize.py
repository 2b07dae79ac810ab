import numpy as np
import pytest

from jointopt.adjoint import fd_gradient, grad_wrt_params
from jointopt.errors import LineSearchFailure
from jointopt.geometry import DEFAULT_THETA
from jointopt.optimize import (
    NoisyObjective,
    ObjectiveConfig,
    OptimizerConfig,
    optimize,
    rng_for,
    wolfe_line_search,
)
from jointopt.regularizers import (
    min_len_penalty,
    min_width_penalty,
    regularizer_min_len,
    regularizer_min_len_grad,
    regularizer_min_width,
    regularizer_min_width_grad,
)
from jointopt.simulate import JointModel, SimConfig

COARSE = SimConfig(mesh_step=1.5)


def test_penalty_examples():
    assert min_len_penalty([1.0, 2.0, 3.0], 1.5) == pytest.approx(0.25)
    assert min_len_penalty([2.0, 2.0], 1.5) == 0.0
    assert min_width_penalty(3.0, 3.5) == pytest.approx(0.25)
    assert min_width_penalty(4.0, 3.5) == 0.0


@pytest.mark.parametrize("space,theta", [("single", [1.2, 1.5, 1.0]), ("single", [1.0, 4.0, 5.0]),
                                         ("double", [2.0, 4.0, 5.0, 1.5, 3.0, 2.0])])
def test_regularizer_gradients_match_fd(space, theta):
    for val, grad, m in ((regularizer_min_len, regularizer_min_len_grad, 3.0),
                         (regularizer_min_width, regularizer_min_width_grad, 3.5)):
        rep = fd_gradient(lambda t: val(t, space, m), theta, 1e-6, analytic=grad(theta, space, m))
        np.testing.assert_allclose(rep.adjoint, rep.fd, atol=1e-6)


def _quad(c=3.0):
    return (lambda x: float((x[0] - c) ** 2)), (lambda x: np.array([2 * (x[0] - c)]))


def test_wolfe_on_quadratic():
    f, g = _quad()
    x0 = np.zeros(1)
    res = wolfe_line_search(f, g, x0, -g(x0), f(x0), g(x0), alpha0=0.1)
    a, dphi0 = res.alpha, g(x0) @ -g(x0)
    x = x0 - a * g(x0)
    assert f(x) <= f(x0) + 1e-4 * a * dphi0
    assert abs(g(x) @ -g(x0)) <= 0.9 * abs(dphi0)
    assert res.n_evals <= 20


def test_wolfe_treats_infinity_as_infeasible():
    f0, g = _quad()
    f = lambda x: np.inf if x[0] > 1.0 else f0(x)
    res = wolfe_line_search(f, g, np.zeros(1), np.ones(1), f(np.zeros(1)), g(np.zeros(1)), alpha0=4.0)
    assert 0.3 <= res.alpha <= 1.0


def test_wolfe_rejects_ascent_direction():
    f, g = _quad()
    with pytest.raises(ValueError):
        wolfe_line_search(f, g, np.zeros(1), np.array([-1.0]), f(np.zeros(1)), g(np.zeros(1)))


def test_wolfe_budget_exhaustion():
    # unbounded linear decrease: the curvature condition can never hold
    f = lambda x: -float(x[0])
    g = lambda x: np.array([-1.0])
    with pytest.raises(LineSearchFailure):
        wolfe_line_search(f, g, np.zeros(1), np.ones(1), 0.0, g(None), max_evals=20)


def test_rng_is_counter_based():
    a = rng_for(7, 0, 1, 2, 3).standard_normal(4)
    b = rng_for(7, 0, 1, 2, 3).standard_normal(4)
    c = rng_for(7, 0, 1, 2, 4).standard_normal(4)
    d = rng_for(7, 1, 1, 2, 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_config_validation():
    with pytest.raises(ValueError):
        ObjectiveConfig(noise_samples=0)
    with pytest.raises(ValueError):
        OptimizerConfig(c1=0.9, c2=0.1)


@pytest.fixture(scope="module")
def coarse_model():
    return JointModel("single", DEFAULT_THETA["single"], COARSE)


def test_zero_noise_objective_is_plain_pipeline(coarse_model):
    m = coarse_model
    base = m.evaluate()
    cfg = ObjectiveConfig(noise_sigma=0.0)
    plain = grad_wrt_params(base.state, m.morphs, m.theta_ref, "single", cfg).theta
    for n in (1, 3):
        obj = NoisyObjective(m, ObjectiveConfig(noise_sigma=0.0, noise_samples=n))
        L, d, _ = obj(m.theta_ref)
        assert d == base.d
        np.testing.assert_array_equal(obj.grad(m.theta_ref).theta, plain)


def test_noise_is_deterministic_and_shared_within_a_step(coarse_model):
    a = NoisyObjective(coarse_model, ObjectiveConfig(), step=2)
    b = NoisyObjective(coarse_model, ObjectiveConfig(), step=2)
    c = NoisyObjective(coarse_model, ObjectiveConfig(), step=3)
    t = coarse_model.theta_ref
    ta = [s.theta for s in a.evaluate(t)]
    assert all(np.array_equal(x, y) for x, y in zip(ta, [s.theta for s in b.evaluate(t)]))
    assert not np.allclose(ta[0], c.evaluate(t)[0].theta)
    shifted = [s.theta for s in a.evaluate(t + 0.1)]
    np.testing.assert_allclose(np.array(shifted) - np.array(ta), 0.1, atol=1e-14)


def test_noisy_objective_gradient_matches_fd(coarse_model):
    obj = NoisyObjective(coarse_model, ObjectiveConfig(min_len=4.0), step=1)
    t = coarse_model.theta_ref
    g = obj.grad(t).theta
    rep = fd_gradient(obj.value, t, 1e-4, analytic=g)
    assert np.linalg.norm(g - rep.fd) <= 1e-3 * np.linalg.norm(rep.fd)


def test_infeasible_samples_give_infinity(coarse_model):
    obj = NoisyObjective(coarse_model, ObjectiveConfig(noise_sigma=0.0))
    assert obj.value(np.array([2.0, 1.0, 5.0])) == np.inf


@pytest.fixture(scope="module")
def short_runs():
    opt = OptimizerConfig(steps=2)
    run = lambda: optimize(DEFAULT_THETA["single"], "single", COARSE, ObjectiveConfig(), opt)
    return run(), run()


def test_short_run_improves_and_records(short_runs):
    tr, _ = short_runs
    assert [s.step for s in tr.steps] == [0, 1, 2]
    assert tr.steps[0].step_kind == "init"
    assert all(s.step_kind in {"wolfe", "random-fallback", "no-move"} for s in tr.steps[1:])
    assert tr.best.d <= tr.initial.d
    assert tr.best_index == int(np.argmin([s.d for s in tr.steps]))
    assert tr.to_dict()["best_index"] == tr.best_index


def test_short_run_is_deterministic(short_runs):
    a, b = short_runs
    for x, y in zip(a.steps, b.steps):
        assert np.array_equal(x.theta, y.theta) and x.d == y.d and x.step_kind == y.step_kind
