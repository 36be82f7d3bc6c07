"""Parametric models as differentiable maps from parameter vectors to outputs.

A model maps a flat parameter vector ``w`` (1-D float array of length
``num_params``) to an array of outputs on an :class:`EvaluationSet`, one row
per evaluation point and one column per output channel.  The evaluation set
carries the inner product used for every function-space quantity: a weighted
Euclidean product with per-point weight 1/n by default (configurable to unit
weight for cross-checks against unnormalized formulas).

Jacobians are exposed as linear operators with an ``apply`` / ``adjoint``
pair so that wide models never force a dense materialization; ``dense()`` is
available below a fixed entry budget.  The adjoint is taken with respect to
the weighted inner product, so ``jac.adjoint(r)`` already includes the
evaluation weights.

Wrappers compose freely: output scaling, centering at an anchor (zero output
at the anchor, Jacobian unchanged) and parameter symmetrization (duplicated
parameter block with negated output, exact zero output at a paired
initialization).
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

# Maximum number of entries (n * k * p) a dense Jacobian may hold.
DENSE_JACOBIAN_LIMIT = 10_000_000


class DimensionError(ValueError):
    """Shape mismatch, naming the offending axis."""

    def __init__(self, axis: str, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"{axis} mismatch: expected {expected}, got {got}")


class JacobianTooLargeError(RuntimeError):
    """Dense materialization refused; use apply/adjoint instead."""


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# Evaluation set and the function-space inner product
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EvaluationSet:
    """Inputs (and optional targets) carrying the output-space inner product.

    ``weights`` may be an explicit positive vector, ``"empirical"`` (1/n per
    point, the default) or ``"unit"`` (weight 1 per point).
    """

    inputs: np.ndarray
    targets: np.ndarray | None = None
    weights: np.ndarray | str = "empirical"

    def __post_init__(self):
        inputs = _as_float_array(self.inputs, "inputs")
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise DimensionError("inputs", "(n >= 1, d) array", inputs.shape)
        object.__setattr__(self, "inputs", inputs)
        n = inputs.shape[0]
        if isinstance(self.weights, str):
            if self.weights == "empirical":
                w = np.full(n, 1.0 / n)
            elif self.weights == "unit":
                w = np.ones(n)
            else:
                raise ValueError(f"unknown weights spec {self.weights!r}")
        else:
            w = _as_float_array(self.weights, "weights")
            if w.shape != (n,):
                raise DimensionError("weights", (n,), w.shape)
            if np.any(w <= 0):
                raise ValueError("weights must be positive")
        object.__setattr__(self, "weights", w)
        if self.targets is not None:
            t = _as_float_array(self.targets, "targets")
            if t.ndim == 1:
                t = t[:, None]
            if t.shape[0] != n:
                raise DimensionError("targets rows", n, t.shape[0])
            object.__setattr__(self, "targets", t)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def inner(self, y: np.ndarray, z: np.ndarray) -> float:
        """Weighted inner product of two output arrays."""
        return float(np.sum(self.weights[:, None] * y * z))

    def sq_norm(self, y: np.ndarray) -> float:
        return self.inner(y, y)

    def norm(self, y: np.ndarray) -> float:
        return float(np.sqrt(self.sq_norm(y)))

    def subset(self, idx: np.ndarray) -> "EvaluationSet":
        """Sub-evaluation-set keeping the global weights of the rows."""
        return EvaluationSet(
            self.inputs[idx],
            None if self.targets is None else self.targets[idx],
            np.asarray(self.weights)[idx],
        )


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Activation:
    """Scalar activation with derivative; relu uses derivative 0 at 0."""

    name: str
    beta: float = 0.0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.name == "relu":
            return np.maximum(z, 0.0)
        # softplus(beta): log(1 + exp(beta z)) / beta, stable form
        return np.logaddexp(0.0, self.beta * z) / self.beta

    def deriv(self, z: np.ndarray) -> np.ndarray:
        if self.name == "relu":
            return (z > 0).astype(float)
        return expit(self.beta * z)

    @property
    def smooth(self) -> bool:
        return self.name != "relu"


RELU = Activation("relu")


def softplus(beta: float = 20.0) -> Activation:
    if beta <= 0:
        raise ValueError("softplus sharpness beta must be positive")
    return Activation("softplus", float(beta))


# ---------------------------------------------------------------------------
# Jacobian operators
# ---------------------------------------------------------------------------
class JacobianOperator:
    """Linear map from parameter space to the weighted output space.

    Subclasses provide ``apply`` (tangent vector to output array), ``adjoint``
    (output array to parameter vector, including the evaluation weights) and
    ``dense`` (raw partial derivatives, shape (n*k, p), no weights).
    """

    num_params: int
    out_shape: tuple[int, int]
    weights: np.ndarray
    output: np.ndarray  # model output h(w) at the linearization point

    def apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        raise NotImplementedError

    def _check_dense_size(self):
        n, k = self.out_shape
        if n * k * self.num_params > DENSE_JACOBIAN_LIMIT:
            raise JacobianTooLargeError(
                f"dense Jacobian would hold {n * k * self.num_params} entries "
                f"(limit {DENSE_JACOBIAN_LIMIT}); use apply/adjoint"
            )

    def weighted_dense(self) -> np.ndarray:
        """Dense matrix with rows scaled by sqrt(weight); its singular values
        are the operator's singular values."""
        n, k = self.out_shape
        scale = np.repeat(np.sqrt(self.weights), k)
        return self.dense() * scale[:, None]


class DenseJacobian(JacobianOperator):
    def __init__(self, values: np.ndarray, weights: np.ndarray, output: np.ndarray):
        # values has shape (n, k, p)
        self.values = values
        n, k, p = values.shape
        self.num_params = p
        self.out_shape = (n, k)
        self.weights = weights
        self.output = output

    def apply(self, v):
        return np.einsum("ick,k->ic", self.values, v)

    def adjoint(self, r):
        return np.einsum("ick,ic->k", self.values, self.weights[:, None] * r)

    def dense(self):
        self._check_dense_size()
        n, k, p = self.values.shape
        return self.values.reshape(n * k, p)


class TwoLayerJacobian(JacobianOperator):
    """Analytic Jacobian of a two-layer network, matrix-free."""

    def __init__(self, net, inputs, act_vals, act_derivs, outer, weights, output):
        self.net = net
        self.inputs = inputs          # (n, d)
        self.act_vals = act_vals      # (n, m)
        self.act_derivs = act_derivs  # (n, m)
        self.outer = outer            # (m, k)
        self.num_params = net.num_params
        self.out_shape = (inputs.shape[0], net.output_dim)
        self.weights = weights
        self.output = output

    def apply(self, v):
        d_inner, d_outer = self.net.split(v)
        dz = self.inputs @ d_inner.T
        return self.net.scale * ((self.act_derivs * dz) @ self.outer + self.act_vals @ d_outer)

    def adjoint(self, r):
        rw = self.weights[:, None] * r
        g_outer = self.net.scale * (self.act_vals.T @ rw)
        u = (rw @ self.outer.T) * self.act_derivs
        g_inner = self.net.scale * (u.T @ self.inputs)
        return self.net.join(g_inner, g_outer)

    def dense(self):
        self._check_dense_size()
        n, k = self.out_shape
        m, d = self.net.width, self.net.input_dim
        j_inner = self.net.scale * np.einsum(
            "ij,jc,il->icjl", self.act_derivs, self.outer, self.inputs
        )
        j_outer = self.net.scale * np.einsum("ij,cf->icjf", self.act_vals, np.eye(k))
        return np.concatenate(
            [j_inner.reshape(n, k, m * d), j_outer.reshape(n, k, m * k)], axis=2
        ).reshape(n * k, self.num_params)


class _ScaledJacobian(JacobianOperator):
    def __init__(self, base: JacobianOperator, alpha: float):
        self.base = base
        self.alpha = alpha
        self.num_params = base.num_params
        self.out_shape = base.out_shape
        self.weights = base.weights
        self.output = alpha * base.output

    def apply(self, v):
        return self.alpha * self.base.apply(v)

    def adjoint(self, r):
        return self.alpha * self.base.adjoint(r)

    def dense(self):
        return self.alpha * self.base.dense()


class _ShiftedOutputJacobian(JacobianOperator):
    """Same linear map as the base, different reference output."""

    def __init__(self, base: JacobianOperator, output: np.ndarray):
        self.base = base
        self.num_params = base.num_params
        self.out_shape = base.out_shape
        self.weights = base.weights
        self.output = output

    def apply(self, v):
        return self.base.apply(v)

    def adjoint(self, r):
        return self.base.adjoint(r)

    def dense(self):
        return self.base.dense()


class _SymmetrizedJacobian(JacobianOperator):
    def __init__(self, jac_a: JacobianOperator, jac_b: JacobianOperator):
        self.jac_a = jac_a
        self.jac_b = jac_b
        self.num_params = jac_a.num_params + jac_b.num_params
        self.out_shape = jac_a.out_shape
        self.weights = jac_a.weights
        self.output = jac_a.output - jac_b.output

    def apply(self, v):
        p = self.jac_a.num_params
        return self.jac_a.apply(v[:p]) - self.jac_b.apply(v[p:])

    def adjoint(self, r):
        return np.concatenate([self.jac_a.adjoint(r), -self.jac_b.adjoint(r)])

    def dense(self):
        self._check_dense_size()
        return np.hstack([self.jac_a.dense(), -self.jac_b.dense()])


class DifferenceOperator:
    """Difference of two Jacobians as an operator, for norm estimation."""

    def __init__(self, first: JacobianOperator, second: JacobianOperator):
        if first.out_shape != second.out_shape:
            raise DimensionError("out_shape", first.out_shape, second.out_shape)
        self.first = first
        self.second = second
        self.num_params = first.num_params
        self.out_shape = first.out_shape
        self.weights = first.weights

    def apply(self, v):
        return self.first.apply(v) - self.second.apply(v)

    def adjoint(self, r):
        return self.first.adjoint(r) - self.second.adjoint(r)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------
SCALE_RULES = ("constant", "inv_width", "inv_sqrt_width")


@dataclass(frozen=True, eq=False)
class TwoLayerNet:
    """One hidden layer, no biases: outputs scale * sum_j outer_j * act(inner_j . x).

    Parameters are packed as [inner.ravel(), outer.ravel()] with inner of
    shape (width, input_dim) and outer of shape (width, output_dim), so
    ``num_params = width * (input_dim + output_dim)``.  With the relu
    activation the map is positively homogeneous of degree 2.
    """

    width: int
    input_dim: int
    output_dim: int = 1
    activation: Activation = RELU
    scale_rule: str = "constant"
    scale_const: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("width, input_dim and output_dim must be >= 1")
        if self.scale_rule not in SCALE_RULES:
            raise ValueError(f"scale_rule must be one of {SCALE_RULES}")
        if self.scale_const <= 0:
            raise ValueError("scale_const must be positive")

    @property
    def num_params(self) -> int:
        return self.width * (self.input_dim + self.output_dim)

    @property
    def scale(self) -> float:
        if self.scale_rule == "inv_width":
            return self.scale_const / self.width
        if self.scale_rule == "inv_sqrt_width":
            return self.scale_const / np.sqrt(self.width)
        return self.scale_const

    @property
    def homogeneity(self) -> float | None:
        return 2.0 if self.activation.name == "relu" else None

    def split(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = self._check_params(w)
        cut = self.width * self.input_dim
        inner = w[:cut].reshape(self.width, self.input_dim)
        outer = w[cut:].reshape(self.width, self.output_dim)
        return inner, outer

    def join(self, inner: np.ndarray, outer: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(inner), np.ravel(outer)])

    def _check_params(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.num_params,):
            raise DimensionError("params", (self.num_params,), w.shape)
        return w

    def _check_inputs(self, data: EvaluationSet):
        if data.d != self.input_dim:
            raise DimensionError("input_dim", self.input_dim, data.d)

    def evaluate(self, w: np.ndarray, data: EvaluationSet) -> np.ndarray:
        self._check_inputs(data)
        inner, outer = self.split(w)
        z = data.inputs @ inner.T
        return self.scale * (self.activation(z) @ outer)

    def jacobian(self, w: np.ndarray, data: EvaluationSet) -> TwoLayerJacobian:
        self._check_inputs(data)
        inner, outer = self.split(w)
        z = data.inputs @ inner.T
        act = self.activation(z)
        output = self.scale * (act @ outer)
        return TwoLayerJacobian(
            self, data.inputs, act, self.activation.deriv(z), outer, data.weights, output
        )

    def random_params(self, rng: np.random.Generator, std: float | str = "xavier") -> np.ndarray:
        """I.i.d. normal entries; std is a number or "xavier" (1/sqrt(input_dim))."""
        if std == "xavier":
            std = 1.0 / np.sqrt(self.input_dim)
        return float(std) * rng.standard_normal(self.num_params)

    def describe(self) -> str:
        return (
            f"TwoLayerNet(width={self.width}, d={self.input_dim}, k={self.output_dim}, "
            f"act={self.activation.name}, scale={self.scale:g})"
        )


@dataclass(frozen=True, eq=False)
class FeatureModel:
    """Linear-in-parameters model: output column is features(inputs) @ w."""

    features: object  # callable (n, d) -> (n, p)
    num_params: int
    output_dim: int = 1
    homogeneity: float | None = 1.0

    def _feature_matrix(self, data: EvaluationSet) -> np.ndarray:
        phi = np.asarray(self.features(data.inputs), dtype=float)
        if phi.shape != (data.n, self.num_params):
            raise DimensionError("features", (data.n, self.num_params), phi.shape)
        return phi

    def evaluate(self, w: np.ndarray, data: EvaluationSet) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.num_params,):
            raise DimensionError("params", (self.num_params,), w.shape)
        return (self._feature_matrix(data) @ w)[:, None]

    def jacobian(self, w: np.ndarray, data: EvaluationSet) -> DenseJacobian:
        phi = self._feature_matrix(data)
        return DenseJacobian(phi[:, None, :], data.weights, self.evaluate(w, data))

    def describe(self) -> str:
        return f"FeatureModel(p={self.num_params})"


@dataclass(frozen=True, eq=False)
class ScaledModel:
    """Output scaling: evaluates to alpha * base(w)."""

    base: object
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def num_params(self) -> int:
        return self.base.num_params

    @property
    def output_dim(self) -> int:
        return self.base.output_dim

    @property
    def homogeneity(self) -> float | None:
        return self.base.homogeneity

    def evaluate(self, w, data):
        return self.alpha * self.base.evaluate(w, data)

    def jacobian(self, w, data):
        return _ScaledJacobian(self.base.jacobian(w, data), self.alpha)

    def describe(self) -> str:
        return f"scaled({self.base.describe()}, alpha={self.alpha:g})"


@dataclass(frozen=True, eq=False)
class CenteredModel:
    """Subtracts the anchor output: evaluates to base(w) - base(anchor).

    The anchor output is recomputed per evaluation set (and cached), so the
    centered model is a genuine function-space object usable on test data.
    The Jacobian is that of the base model at every w.
    """

    base: object
    anchor: np.ndarray

    def __post_init__(self):
        anchor = _as_float_array(self.anchor, "anchor")
        if anchor.shape != (self.base.num_params,):
            raise DimensionError("anchor", (self.base.num_params,), anchor.shape)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "_ref_cache", weakref.WeakKeyDictionary())

    @property
    def num_params(self) -> int:
        return self.base.num_params

    @property
    def output_dim(self) -> int:
        return self.base.output_dim

    @property
    def homogeneity(self) -> float | None:
        return None

    def _reference(self, data: EvaluationSet) -> np.ndarray:
        cache = self._ref_cache
        if data not in cache:
            cache[data] = self.base.evaluate(self.anchor, data)
        return cache[data]

    def evaluate(self, w, data):
        return self.base.evaluate(w, data) - self._reference(data)

    def jacobian(self, w, data):
        jac = self.base.jacobian(w, data)
        return _ShiftedOutputJacobian(jac, jac.output - self._reference(data))

    def describe(self) -> str:
        return f"centered({self.base.describe()})"


@dataclass(frozen=True, eq=False)
class SymmetrizedModel:
    """Duplicated parameter block with negated output half.

    Parameters are (w_a, w_b) stacked; the model evaluates to
    base(w_a) - base(w_b).  At a paired point (w, w) the two halves are
    bit-identical, so the output is exactly zero.
    """

    base: object

    @property
    def num_params(self) -> int:
        return 2 * self.base.num_params

    @property
    def output_dim(self) -> int:
        return self.base.output_dim

    @property
    def homogeneity(self) -> float | None:
        return self.base.homogeneity

    def paired_params(self, w_base: np.ndarray) -> np.ndarray:
        """Initialization with identical halves, forcing exact zero output."""
        w_base = np.asarray(w_base, dtype=float)
        if w_base.shape != (self.base.num_params,):
            raise DimensionError("params", (self.base.num_params,), w_base.shape)
        return np.concatenate([w_base, w_base])

    def halves(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.num_params,):
            raise DimensionError("params", (self.num_params,), w.shape)
        p = self.base.num_params
        return w[:p], w[p:]

    def evaluate(self, w, data):
        w_a, w_b = self.halves(w)
        return self.base.evaluate(w_a, data) - self.base.evaluate(w_b, data)

    def jacobian(self, w, data):
        w_a, w_b = self.halves(w)
        return _SymmetrizedJacobian(
            self.base.jacobian(w_a, data), self.base.jacobian(w_b, data)
        )

    def describe(self) -> str:
        return f"symmetrized({self.base.describe()})"


# ---------------------------------------------------------------------------
# Operations on models
# ---------------------------------------------------------------------------
def rescale_init(model, w0: np.ndarray, lam: float) -> np.ndarray:
    """Multiply a homogeneous model's initialization by lam > 0.

    For a model of homogeneity degree q this scales outputs by lam**q.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if getattr(model, "homogeneity", None) is None:
        raise ValueError("model does not declare positive homogeneity")
    return lam * np.asarray(w0, dtype=float)


def unwrap_two_layer(model, w: np.ndarray) -> tuple[TwoLayerNet, np.ndarray]:
    """Resolve a (possibly wrapped) two-layer net to plain weights.

    Scaling and centering do not change the hidden-layer weights; a
    symmetrized wrapper is merged into a single net of doubled width with the
    second half of the outer weights negated.
    """
    if isinstance(model, TwoLayerNet):
        return model, model._check_params(w)
    if isinstance(model, (ScaledModel, CenteredModel)):
        return unwrap_two_layer(model.base, w)
    if isinstance(model, SymmetrizedModel):
        w_a, w_b = model.halves(w)
        net_a, wa = unwrap_two_layer(model.base, w_a)
        net_b, wb = unwrap_two_layer(model.base, w_b)
        inner_a, outer_a = net_a.split(wa)
        inner_b, outer_b = net_b.split(wb)
        merged = TwoLayerNet(
            width=2 * net_a.width,
            input_dim=net_a.input_dim,
            output_dim=net_a.output_dim,
            activation=net_a.activation,
            scale_rule="constant",
            scale_const=net_a.scale,
        )
        return merged, merged.join(
            np.vstack([inner_a, inner_b]), np.vstack([outer_a, -outer_b])
        )
    raise TypeError(f"cannot resolve {type(model).__name__} to a two-layer net")
