"""Geometric penalties on short contact edges and narrow tails."""

from __future__ import annotations

import numpy as np

from .geometry import (
    DesignSpace,
    contact_length_jacobian,
    interface_vertices,
    joint_width_grad,
)


def _lengths(space, theta) -> np.ndarray:
    return np.linalg.norm(np.diff(interface_vertices(space, theta), axis=0), axis=1)


def min_len_penalty(lengths, min_len: float = 1.5) -> float:
    short = np.maximum(min_len - np.abs(np.asarray(lengths, dtype=float)), 0.0)
    return float(np.sum(short**2))


def min_width_penalty(width: float, min_width: float = 3.5) -> float:
    return float(max(min_width - width, 0.0) ** 2)


def regularizer_min_len(theta, space, min_len: float = 1.5) -> float:
    return min_len_penalty(_lengths(DesignSpace.parse(space), theta), min_len)


def regularizer_min_len_grad(theta, space, min_len: float = 1.5) -> np.ndarray:
    space = DesignSpace.parse(space)
    short = np.maximum(min_len - _lengths(space, theta), 0.0)
    return -2.0 * short @ contact_length_jacobian(space, theta)


def _width(space, theta) -> float:
    # unvalidated: the regularizer must stay defined for perturbed samples
    return 2.0 * float(np.asarray(theta, dtype=float)[space.param_names.index("a")])


def regularizer_min_width(theta, space, min_width: float = 3.5) -> float:
    return min_width_penalty(_width(DesignSpace.parse(space), theta), min_width)


def regularizer_min_width_grad(theta, space, min_width: float = 3.5) -> np.ndarray:
    space = DesignSpace.parse(space)
    gap = max(min_width - _width(space, theta), 0.0)
    return -2.0 * gap * joint_width_grad(space, theta)
