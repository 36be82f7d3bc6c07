"""Gradient-flow integration for the scale-normalized objective.

Integrates w'(t) = -(1/alpha) Dh(w)^T grad R(alpha h(w)) with fixed-step
explicit Euler or classical rk4, records time-stamped trajectories, and
provides mini-batch SGD over a data sampler plus direct kernel-space
integration y'(t) = -Sigma(t) grad R(y(t)).

Euler with step 1/Lip(h)^2 emulates plain gradient descent, so flow time T
and iteration count K are related by T = K * eta.  The auto step rule is
eta = c / Lip(h)^2 with c in (0, 1], where Lip(h) defaults to the operator
norm of the Jacobian at the initialization (the same power-iteration
estimator the diagnostics module reports).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linearize import TangentModel, linearize_at, operator_norm
from .loss import SquareLoss, scaled_loss_value_and_gradient
from .model import EvaluationSet


class FlowDivergence(RuntimeError):
    """Integration aborted: the objective blew up or became non-finite."""

    def __init__(self, message: str, step: int, t: float, loss: float):
        super().__init__(f"{message} (step {step}, t={t:.6g}, loss={loss:.6g})")
        self.step = step
        self.t = t
        self.loss = loss


@dataclass
class FlowConfig:
    """Settings for one flow integration.

    Exactly one of ``horizon`` (flow time) or ``n_steps`` may be left unset;
    when both are given they must agree with the resolved step size.  ``step``
    is either a fixed step size (float) or "auto" for c / Lip(h)^2 with
    c = ``step_factor``.  ``record`` is "dense", "log", or an integer stride.
    """

    alpha: float = 1.0
    horizon: float | None = None
    n_steps: int | None = None
    integrator: str = "rk4"
    step: float | str = "auto"
    step_factor: float = 0.5
    lip_h: float | None = None
    record: str | int = "log"
    max_records: int = 200
    stop_loss: float | None = None
    stop_grad: float | None = None
    stop_grad_rel: float | None = None
    divergence_factor: float = 10.0
    seed: int | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError("integrator must be 'euler' or 'rk4'")
        if self.step == "auto":
            if not (0 < self.step_factor <= 1.0):
                raise ValueError("auto step factor must lie in (0, 1]")
        elif not (isinstance(self.step, (int, float)) and self.step > 0):
            raise ValueError("step must be 'auto' or a positive number")
        if self.horizon is None and self.n_steps is None:
            raise ValueError("one of horizon or n_steps is required")

    def resolve(self, model, w0, data) -> tuple[float, int]:
        """Step size and step count for this run."""
        if self.step == "auto":
            lip = self.lip_h
            if lip is None:
                lip = operator_norm(model.jacobian(w0, data))
            if lip <= 0:
                raise ValueError("cannot auto-step: Jacobian norm estimate is zero")
            eta = self.step_factor / lip**2
        else:
            eta = float(self.step)
        if self.n_steps is not None:
            n = int(self.n_steps)
            if n < 1:
                raise ValueError("n_steps must be >= 1")
            if self.horizon is not None:
                target = n * eta
                if abs(self.horizon - target) > 1e-9 * max(1.0, abs(self.horizon)):
                    raise ValueError(
                        f"horizon {self.horizon} inconsistent with n_steps*step = {target}"
                    )
        else:
            n = int(np.ceil(self.horizon / eta))
            n = max(n, 1)
            eta = self.horizon / n  # land exactly on the horizon
        return eta, n

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "horizon": self.horizon,
            "n_steps": self.n_steps,
            "integrator": self.integrator,
            "step": self.step,
            "step_factor": self.step_factor,
            "record": self.record,
            "stop_loss": self.stop_loss,
            "stop_grad": self.stop_grad,
            "stop_grad_rel": self.stop_grad_rel,
            "seed": self.seed,
        }


def _record_indices(n_steps: int, record: str | int, max_records: int) -> set[int]:
    if record == "dense":
        return set(range(n_steps + 1))
    if record == "log":
        pts = np.unique(np.round(np.geomspace(1, max(n_steps, 1), max_records)).astype(int))
        return {0, n_steps}.union(int(i) for i in pts if 0 < i <= n_steps)
    stride = int(record)
    if stride < 1:
        raise ValueError("record stride must be >= 1")
    return set(range(0, n_steps + 1, stride)).union({n_steps})


@dataclass
class Trajectory:
    """Time-stamped samples of one flow integration.

    ``outputs`` holds the scaled model outputs alpha * h(w(t)) on the
    recording evaluation set; ``loss`` is the scale-normalized objective.
    """

    t: np.ndarray
    params: np.ndarray
    outputs: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    alpha: float
    eta: float
    steps_taken: int
    stop_reason: str
    model_desc: str = ""
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def initial_params(self) -> np.ndarray:
        return self.params[0]

    @property
    def final_params(self) -> np.ndarray:
        return self.params[-1]

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def dist_to_init(self) -> np.ndarray:
        return np.linalg.norm(self.params - self.params[0], axis=1)

    def validate(self, monotone_tol: float | None = 1e-8):
        if self.t[0] != 0.0:
            raise ValueError("first sample must be at t=0")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if monotone_tol is not None and np.any(np.diff(self.loss) > monotone_tol):
            raise ValueError("loss increases beyond tolerance along the flow")

    def to_csv(self, path, params_path=None):
        """Columns t, loss, grad_norm, dist_to_init; optional .npy parameter dump."""
        dist = self.dist_to_init()
        with open(path, "w") as fh:
            fh.write("t,loss,grad_norm,dist_to_init\n")
            for i in range(len(self.t)):
                fh.write(
                    f"{float(self.t[i])!r},{float(self.loss[i])!r},"
                    f"{float(self.grad_norm[i])!r},{float(dist[i])!r}\n"
                )
        if params_path is not None:
            np.save(params_path, self.params)

    def meta_json(self) -> str:
        return json.dumps(
            {
                "alpha": self.alpha,
                "eta": self.eta,
                "steps_taken": self.steps_taken,
                "stop_reason": self.stop_reason,
                "model": self.model_desc,
                "seed": self.seed,
                "config": self.config,
            },
            indent=2,
            sort_keys=True,
        )


def _integrate(model, loss, w0, data, config: FlowConfig) -> Trajectory:
    alpha = config.alpha
    eta, n_steps = config.resolve(model, w0, data)
    rec = _record_indices(n_steps, config.record, config.max_records)

    def grad_only(w):
        jac = model.jacobian(w, data)
        return jac.adjoint(loss.gradient(alpha * jac.output)) / alpha

    w = np.array(w0, dtype=float)
    rows = []
    loss0 = None
    grad0 = None
    stop_reason = "budget"
    step = 0
    while True:
        value, grad, y = scaled_loss_value_and_gradient(model, loss, alpha, w, data)
        gn = float(np.linalg.norm(grad))
        t = step * eta
        if not (np.isfinite(value) and np.all(np.isfinite(w))):
            raise FlowDivergence("non-finite state", step, t, value)
        if loss0 is None:
            loss0, grad0 = value, gn
        elif value > config.divergence_factor * max(loss0, 1e-300):
            raise FlowDivergence(
                f"loss exceeded {config.divergence_factor} x initial", step, t, value
            )
        stopping = None
        if config.stop_loss is not None and value < config.stop_loss:
            stopping = "loss"
        elif config.stop_grad is not None and gn < config.stop_grad:
            stopping = "grad_norm"
        elif config.stop_grad_rel is not None and gn < config.stop_grad_rel * grad0:
            stopping = "grad_norm_rel"
        if step in rec or stopping or step == n_steps:
            rows.append((t, w.copy(), y.copy(), value, gn))
        if stopping:
            stop_reason = stopping
            break
        if step == n_steps:
            break
        if config.integrator == "euler":
            w = w - eta * grad
        else:
            k1 = -grad
            k2 = -grad_only(w + 0.5 * eta * k1)
            k3 = -grad_only(w + 0.5 * eta * k2)
            k4 = -grad_only(w + eta * k3)
            w = w + (eta / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        step += 1

    ts, ws, ys, ls, gs = zip(*rows)
    return Trajectory(
        t=np.array(ts),
        params=np.array(ws),
        outputs=np.array(ys),
        loss=np.array(ls),
        grad_norm=np.array(gs),
        alpha=alpha,
        eta=eta,
        steps_taken=step,
        stop_reason=stop_reason,
        model_desc=getattr(model, "describe", lambda: type(model).__name__)(),
        config=config.to_dict(),
        seed=config.seed,
    )


def integrate_flow(model, loss, w0: np.ndarray, data: EvaluationSet, config: FlowConfig) -> Trajectory:
    """Gradient flow of the scale-normalized objective from w0."""
    return _integrate(model, loss, w0, data, config)


def integrate_linearized_flow(
    model, loss, w0: np.ndarray, data: EvaluationSet, config: FlowConfig
) -> Trajectory:
    """Gradient flow with the Jacobian frozen at w0 (tangent model).

    Accepts either a tangent model anchored at w0 or any model, which is then
    linearized at w0.
    """
    tangent = model if isinstance(model, TangentModel) else linearize_at(model, w0)
    return _integrate(tangent, loss, w0, data, config)


# ---------------------------------------------------------------------------
# Stochastic gradient descent on a data sampler
# ---------------------------------------------------------------------------
def run_sgd(
    model,
    w0: np.ndarray,
    sampler: Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]],
    batch_size: int,
    config: FlowConfig,
    heldout_size: int = 2000,
) -> Trajectory:
    """Plain SGD on the population square loss defined by a sampler.

    The sampler draws (inputs, targets) batches i.i.d.; recorded losses are
    population estimates on a fixed held-out sample drawn once at the start.
    The step follows the flow auto rule divided by 2 unless a fixed step is
    given.  Recorded loss values are not monotone.
    """
    if config.seed is None:
        raise ValueError("run_sgd requires config.seed for the batch stream")
    rng = np.random.default_rng(config.seed)
    alpha = config.alpha
    x_held, y_held = sampler(rng, heldout_size)
    held_space = EvaluationSet(x_held, y_held)
    held_loss = SquareLoss(y_held)

    # Auto step relative to a first batch at w0, then halved for noise.
    x0b, y0b = sampler(rng, batch_size)
    space0 = EvaluationSet(x0b, y0b)
    if config.step == "auto":
        lip = config.lip_h
        if lip is None:
            lip = operator_norm(model.jacobian(np.asarray(w0, float), space0))
        if lip <= 0:
            raise ValueError("cannot auto-step: Jacobian norm estimate is zero")
        eta = 0.5 * config.step_factor / lip**2
    else:
        eta = float(config.step)
    if config.n_steps is None:
        n_steps = max(1, int(np.ceil(config.horizon / eta)))
    else:
        n_steps = int(config.n_steps)
    rec = _record_indices(n_steps, config.record, config.max_records)

    w = np.array(w0, dtype=float)
    rows = []
    pop0 = None
    stop_reason = "budget"
    step = 0
    while True:
        if step in rec or step == n_steps:
            y_pop = alpha * model.evaluate(w, held_space)
            pop_value = held_loss.value(y_pop, held_space) / alpha**2
            if not (np.isfinite(pop_value) and np.all(np.isfinite(w))):
                raise FlowDivergence("non-finite state", step, step * eta, pop_value)
            if pop0 is None:
                pop0 = pop_value
            elif pop_value > config.divergence_factor * max(pop0, 1e-300):
                raise FlowDivergence(
                    f"population loss exceeded {config.divergence_factor} x initial",
                    step,
                    step * eta,
                    pop_value,
                )
            rows.append((step * eta, w.copy(), y_pop, pop_value))
            if config.stop_loss is not None and pop_value < config.stop_loss:
                stop_reason = "loss"
                break
        if step == n_steps:
            break
        xb, yb = sampler(rng, batch_size)
        space_b = EvaluationSet(xb, yb)
        jac = model.jacobian(w, space_b)
        grad = jac.adjoint(alpha * jac.output - yb) / alpha
        w = w - eta * grad
        step += 1

    ts, ws, ys, ls = zip(*rows)
    grads = np.full(len(ts), np.nan)  # batch gradients are not recorded
    return Trajectory(
        t=np.array(ts),
        params=np.array(ws),
        outputs=np.array(ys),
        loss=np.array(ls),
        grad_norm=grads,
        alpha=alpha,
        eta=eta,
        steps_taken=step,
        stop_reason=stop_reason,
        model_desc=getattr(model, "describe", lambda: type(model).__name__)(),
        config=config.to_dict(),
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# Direct kernel-space integration
# ---------------------------------------------------------------------------
def integrate_kernel_flow(
    sigma_apply: Callable[[float, np.ndarray], np.ndarray],
    loss,
    y0: np.ndarray,
    space: EvaluationSet,
    horizon: float,
    n_steps: int,
    integrator: str = "rk4",
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate y'(t) = -sigma_apply(t, grad R(y(t))) with dense recording.

    ``sigma_apply`` applies a (possibly time-dependent) self-adjoint positive
    operator to an output array.  Returns (times, outputs) with outputs of
    shape (n_steps + 1, *y0.shape).
    """
    eta = horizon / n_steps
    y = np.array(y0, dtype=float)
    ts = np.linspace(0.0, horizon, n_steps + 1)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y

    def rhs(t, yy):
        return -sigma_apply(t, loss.gradient(yy))

    for i in range(n_steps):
        t = ts[i]
        if integrator == "euler":
            y = y + eta * rhs(t, y)
        else:
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * eta, y + 0.5 * eta * k1)
            k3 = rhs(t + 0.5 * eta, y + 0.5 * eta * k2)
            k4 = rhs(t + eta, y + eta * k3)
            y = y + (eta / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FlowDivergence("non-finite state in kernel flow", i + 1, ts[i + 1], np.nan)
        out[i + 1] = y
    return ts, out
