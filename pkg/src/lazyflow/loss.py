"""Loss functionals on the output space and the scale-normalized objective.

Gradients are taken with respect to the weighted inner product of the
evaluation set, so for the square loss the gradient is simply ``y - target``
regardless of the weights.  Each loss declares its strong-convexity and
smoothness constants in that geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DimensionError, EvaluationSet, _as_float_array


def _as_target(target) -> np.ndarray:
    t = _as_float_array(target, "target")
    if t.ndim == 1:
        t = t[:, None]
    return t


@dataclass(frozen=True, eq=False)
class SquareLoss:
    """0.5 * ||y - target||^2 in the weighted norm; constants m = M = 1."""

    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", _as_target(self.target))

    strong_convexity: float = 1.0
    smoothness: float = 1.0

    @property
    def condition_number(self) -> float:
        return 1.0

    @property
    def minimizer(self) -> np.ndarray:
        return self.target

    def value(self, y: np.ndarray, space: EvaluationSet) -> float:
        return 0.5 * space.sq_norm(y - self.target)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        return y - self.target


@dataclass(frozen=True, eq=False)
class QuadraticLoss:
    """0.5 * <coeffs * (y - target), y - target> with positive per-entry coeffs.

    Strongly convex with constant min(coeffs) and smooth with max(coeffs);
    used to exercise bound checks at condition numbers other than 1.
    """

    target: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        target = _as_target(self.target)
        coeffs = _as_float_array(self.coeffs, "coeffs")
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        if coeffs.shape != target.shape:
            raise DimensionError("coeffs", target.shape, coeffs.shape)
        if np.any(coeffs <= 0):
            raise ValueError("coeffs must be positive")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def strong_convexity(self) -> float:
        return float(self.coeffs.min())

    @property
    def smoothness(self) -> float:
        return float(self.coeffs.max())

    @property
    def condition_number(self) -> float:
        return self.smoothness / self.strong_convexity

    @property
    def minimizer(self) -> np.ndarray:
        return self.target

    def value(self, y: np.ndarray, space: EvaluationSet) -> float:
        dy = y - self.target
        return 0.5 * space.inner(self.coeffs * dy, dy)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        return self.coeffs * (y - self.target)


def loss_from_eval_set(space: EvaluationSet) -> SquareLoss:
    """Square loss targeting the evaluation set's stored targets."""
    if space.targets is None:
        raise ValueError("evaluation set has no targets")
    return SquareLoss(space.targets)


# ---------------------------------------------------------------------------
# Scale-normalized objective: value R(alpha h(w)) / alpha^2 and its gradient
# ---------------------------------------------------------------------------
def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return alpha


def scaled_loss_value(model, loss, alpha: float, w: np.ndarray, space: EvaluationSet) -> float:
    alpha = _check_alpha(alpha)
    y = alpha * model.evaluate(w, space)
    return loss.value(y, space) / alpha**2


def scaled_loss_gradient(model, loss, alpha: float, w: np.ndarray, space: EvaluationSet) -> np.ndarray:
    alpha = _check_alpha(alpha)
    jac = model.jacobian(w, space)
    return jac.adjoint(loss.gradient(alpha * jac.output)) / alpha


def scaled_loss_value_and_gradient(
    model, loss, alpha: float, w: np.ndarray, space: EvaluationSet
) -> tuple[float, np.ndarray, np.ndarray]:
    """One forward/backward pass; returns (value, gradient, scaled output)."""
    alpha = _check_alpha(alpha)
    jac = model.jacobian(w, space)
    y = alpha * jac.output
    value = loss.value(y, space) / alpha**2
    grad = jac.adjoint(loss.gradient(y)) / alpha
    return value, grad, y
