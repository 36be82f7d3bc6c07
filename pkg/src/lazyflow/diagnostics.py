"""Laziness diagnostics: the scale criterion, norm estimators, trajectory
deviation metrics and quantitative bound checkers.

Every Lipschitz-type estimator here is a certified lower bound obtained from
sampled maxima; bound checks that place an estimate on the right-hand side of
an inequality inflate it by a declared safety factor, recorded in the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .flow import Trajectory, integrate_kernel_flow
from .linearize import linearize_at, operator_norm, spectrum_of_model
from .loss import SquareLoss
from .model import DifferenceOperator, EvaluationSet, unwrap_two_layer


# ---------------------------------------------------------------------------
# Norm and Lipschitz estimates
# ---------------------------------------------------------------------------
@dataclass
class NormEstimates:
    """Sampled lower bounds for the constants controlling lazy dynamics.

    ``d2h_norm`` is a directional estimate of the second-derivative operator
    norm: the maximum over random unit directions u of
    ||Dh(w0 + eps u) - Dh(w0)|| / eps.  The precise tensor norm is not pinned
    down by the theory, so the directional estimator (a lower bound for any
    reasonable choice) is used and its sampling parameters are reported.
    """

    h0_norm: float
    dh0_norm: float
    d2h_norm: float
    lip_h: float
    lip_dh: float
    sigma_min: float
    sigma_min_nonzero: float
    radius: float
    samples: int
    directions: int
    eps: float
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _ball_points(rng, w0, radius, samples):
    p = w0.size
    pts = []
    for _ in range(samples):
        u = rng.standard_normal(p)
        u /= np.linalg.norm(u)
        pts.append(w0 + radius * rng.uniform(0.0, 1.0) * u)
    return pts


def estimate_norms(
    model,
    w0: np.ndarray,
    data: EvaluationSet,
    radius: float = 0.1,
    samples: int = 16,
    directions: int = 64,
    eps: float = 1e-4,
    seed: int = 0,
    include_lip_dh: bool = True,
    include_spectrum: bool = True,
) -> NormEstimates:
    """Sampled norm estimates around w0.

    Lip(h) is the maximum Jacobian operator norm over w0 and the sampled
    points of the radius ball, so it never falls below ||Dh(w0)||.  Lip(Dh)
    takes pairwise Jacobian-difference norms against w0 and between
    consecutive samples.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if samples < 16:
        raise ValueError("samples must be >= 16")
    w0 = np.asarray(w0, dtype=float)
    rng = np.random.default_rng(seed)
    jac0 = model.jacobian(w0, data)
    h0_norm = data.norm(jac0.output)
    dh0_norm = operator_norm(jac0)

    d2 = 0.0
    for _ in range(directions):
        u = rng.standard_normal(w0.size)
        u /= np.linalg.norm(u)
        jac_eps = model.jacobian(w0 + eps * u, data)
        d2 = max(d2, operator_norm(DifferenceOperator(jac_eps, jac0)) / eps)

    pts = _ball_points(rng, w0, radius, samples)
    lip_h = dh0_norm
    lip_dh = 0.0
    prev_pt, prev_jac = w0, jac0
    for pt in pts:
        jac = model.jacobian(pt, data)
        lip_h = max(lip_h, operator_norm(jac))
        if include_lip_dh:
            for other_pt, other_jac in ((w0, jac0), (prev_pt, prev_jac)):
                dist = np.linalg.norm(pt - other_pt)
                if dist > 0:
                    lip_dh = max(
                        lip_dh, operator_norm(DifferenceOperator(jac, other_jac)) / dist
                    )
            prev_pt, prev_jac = pt, jac

    sigma_min = 0.0
    sigma_min_nonzero = 0.0
    if include_spectrum:
        spec = spectrum_of_model(model, w0, data)
        sigma_min = spec.sigma_min
        sigma_min_nonzero = spec.sigma_min_nonzero

    return NormEstimates(
        h0_norm=h0_norm,
        dh0_norm=dh0_norm,
        d2h_norm=d2,
        lip_h=lip_h,
        lip_dh=lip_dh,
        sigma_min=sigma_min,
        sigma_min_nonzero=sigma_min_nonzero,
        radius=radius,
        samples=samples,
        directions=directions,
        eps=eps,
        seed=seed,
    )


class CriticalInitializationError(ValueError):
    """The Jacobian at initialization vanishes; the scale criterion is undefined."""


def inverse_relative_scale(
    model,
    w0: np.ndarray,
    loss,
    data: EvaluationSet,
    directions: int = 64,
    eps: float = 1e-4,
    seed: int = 0,
    norms: NormEstimates | None = None,
) -> float:
    """Laziness criterion ||h(w0) - y*|| ||D2h(w0)|| / ||Dh(w0)||^2.

    Defined for the square loss; small values indicate that gradient descent
    barely moves the Jacobian while the loss decreases (lazy regime).
    """
    if not isinstance(loss, SquareLoss):
        raise ValueError("the scale criterion is defined for the square loss")
    w0 = np.asarray(w0, dtype=float)
    if norms is not None:
        dh, d2 = norms.dh0_norm, norms.d2h_norm
        resid = None
    else:
        jac0 = model.jacobian(w0, data)
        dh = operator_norm(jac0)
        rng = np.random.default_rng(seed)
        d2 = 0.0
        for _ in range(directions):
            u = rng.standard_normal(w0.size)
            u /= np.linalg.norm(u)
            jac_eps = model.jacobian(w0 + eps * u, data)
            d2 = max(d2, operator_norm(DifferenceOperator(jac_eps, jac0)) / eps)
        resid = data.norm(jac0.output - loss.target)
    if dh <= 0:
        raise CriticalInitializationError(
            "critical initialization: ||Dh(w0)|| = 0, gradient vanishes at w0"
        )
    if resid is None:
        resid = data.norm(model.evaluate(w0, data) - loss.target)
    return resid * d2 / dh**2


# ---------------------------------------------------------------------------
# Trajectory deviation metrics and slope fits
# ---------------------------------------------------------------------------
@dataclass
class FlowDeviation:
    """Distance curves between a flow and its linearized twin."""

    alpha: float
    t: np.ndarray
    dist_init: np.ndarray   # ||w(t) - w0||
    dist_params: np.ndarray  # ||w(t) - w_lin(t)||
    dist_outputs: np.ndarray  # ||alpha h(w(t)) - alpha h_lin(w_lin(t))||

    @property
    def sup_init(self) -> float:
        return float(self.dist_init.max())

    @property
    def sup_params(self) -> float:
        return float(self.dist_params.max())

    @property
    def sup_outputs(self) -> float:
        return float(self.dist_outputs.max())


def _resample(traj: Trajectory, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of params and outputs onto a common time grid."""
    p = np.empty((grid.size, traj.params.shape[1]))
    for j in range(traj.params.shape[1]):
        p[:, j] = np.interp(grid, traj.t, traj.params[:, j])
    flat = traj.outputs.reshape(traj.outputs.shape[0], -1)
    y = np.empty((grid.size, flat.shape[1]))
    for j in range(flat.shape[1]):
        y[:, j] = np.interp(grid, traj.t, flat[:, j])
    return p, y.reshape((grid.size,) + traj.outputs.shape[1:])


def compare_flows(
    traj: Trajectory, traj_lin: Trajectory, space: EvaluationSet, alpha: float | None = None
) -> FlowDeviation:
    """Deviation curves between a flow trajectory and its linearized twin."""
    if abs(traj.horizon - traj_lin.horizon) > 1e-9 * max(1.0, traj.horizon):
        raise ValueError(
            f"horizon mismatch: {traj.horizon} vs {traj_lin.horizon}"
        )
    if traj.t.shape == traj_lin.t.shape and np.allclose(traj.t, traj_lin.t):
        grid = traj.t
        p_a, y_a = traj.params, traj.outputs
        p_b, y_b = traj_lin.params, traj_lin.outputs
    else:
        grid = np.union1d(traj.t, traj_lin.t)
        p_a, y_a = _resample(traj, grid)
        p_b, y_b = _resample(traj_lin, grid)
    w = np.asarray(space.weights)
    diff = y_a - y_b
    dist_out = np.sqrt(np.einsum("i,sic->s", w, diff**2))
    return FlowDeviation(
        alpha=traj.alpha if alpha is None else alpha,
        t=np.asarray(grid),
        dist_init=np.linalg.norm(p_a - p_a[0], axis=1),
        dist_params=np.linalg.norm(p_a - p_b, axis=1),
        dist_outputs=dist_out,
    )


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    residual: float

    @property
    def band(self) -> tuple[float, float]:
        return (self.slope - 2 * self.stderr, self.slope + 2 * self.stderr)


def fit_loglog_slope(x: np.ndarray, y: np.ndarray) -> SlopeFit:
    """Ordinary least squares on log10-log10 data."""
    lx, ly = np.log10(np.asarray(x, float)), np.log10(np.asarray(y, float))
    n = lx.size
    design = np.vstack([lx, np.ones(n)]).T
    coef, res, *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = float(np.sqrt(res[0] / n)) if res.size else 0.0
    if n > 2:
        sxx = np.sum((lx - lx.mean()) ** 2)
        stderr = float(np.sqrt(res[0] / (n - 2) / sxx)) if res.size else 0.0
    else:
        stderr = 0.0
    return SlopeFit(float(coef[0]), float(coef[1]), stderr, resid)


@dataclass
class DeviationReport:
    """Per-scale deviation suprema and their fitted scaling exponents."""

    alphas: np.ndarray
    sup_init: np.ndarray
    sup_params: np.ndarray
    sup_outputs: np.ndarray
    slope_init: SlopeFit
    slope_params: SlopeFit
    slope_outputs: SlopeFit
    deviations: list = field(default_factory=list)


def deviation_report(deviations: list[FlowDeviation]) -> DeviationReport:
    """Fit log-log slopes of the three deviation suprema against the scale.

    Requires at least 3 scales spanning at least 2 decades.
    """
    if len(deviations) < 3:
        raise ValueError("need at least 3 scales for a slope fit")
    alphas = np.array([d.alpha for d in deviations])
    if np.log10(alphas.max() / alphas.min()) < 2.0 - 1e-12:
        raise ValueError("scales must span at least 2 decades")
    order = np.argsort(alphas)
    devs = [deviations[i] for i in order]
    alphas = alphas[order]
    sup_i = np.array([d.sup_init for d in devs])
    sup_p = np.array([d.sup_params for d in devs])
    sup_o = np.array([d.sup_outputs for d in devs])
    return DeviationReport(
        alphas=alphas,
        sup_init=sup_i,
        sup_params=sup_p,
        sup_outputs=sup_o,
        slope_init=fit_loglog_slope(alphas, sup_i),
        slope_params=fit_loglog_slope(alphas, sup_p),
        slope_outputs=fit_loglog_slope(alphas, sup_o),
        deviations=devs,
    )


# ---------------------------------------------------------------------------
# Bound checks
# ---------------------------------------------------------------------------
@dataclass
class BoundCheck:
    name: str
    applicable: bool
    satisfied: bool | None
    measured: float | None
    bound: float | None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "applicable": self.applicable,
            "satisfied": self.satisfied,
            "measured": self.measured,
            "bound": self.bound,
            "details": {k: (v if not isinstance(v, np.ndarray) else v.tolist()) for k, v in self.details.items()},
        }


def check_finite_horizon_bound(
    traj: Trajectory,
    traj_lin: Trajectory,
    loss: SquareLoss,
    space: EvaluationSet,
    norms: NormEstimates,
    alpha: float,
    n_iters: float,
    safety: float = 2.0,
) -> BoundCheck:
    """Finite-horizon relative-deviation bound for the square loss.

    With K = ``n_iters`` and horizon T = K / Lip(h)^2, the relative output
    deviation at T is bounded by (K^2/alpha) (Lip(Dh)/Lip(h)^2) ||y0 - y*||,
    valid when alpha >= K ||y0 - y*|| / (r Lip(h)).  A companion parameter
    bound with right side multiplied by (2 + 4K/3) is checked as well.
    Lip(Dh) enters the right sides inflated by ``safety`` since the raw
    estimate is a lower bound.
    """
    if not isinstance(loss, SquareLoss):
        raise ValueError("finite-horizon bound requires the square loss")
    lip_h, lip_dh = norms.lip_h, norms.lip_dh * safety
    K = float(n_iters)
    T = K / lip_h**2
    if abs(traj.horizon - T) > 1e-6 * max(T, 1.0):
        raise ValueError(f"trajectory horizon {traj.horizon} != K/Lip(h)^2 = {T}")
    y0 = traj.outputs[0]
    resid0 = space.norm(y0 - loss.target)
    threshold = K * resid0 / (norms.radius * lip_h)
    applicable = alpha >= threshold
    details = {
        "alpha": alpha,
        "K": K,
        "T": T,
        "validity_threshold": threshold,
        "resid0": resid0,
        "lip_h": lip_h,
        "lip_dh_inflated": lip_dh,
        "safety": safety,
    }
    if not applicable:
        return BoundCheck("finite_horizon_bound", False, None, None, None, details)
    measured_out = space.norm(traj.outputs[-1] - traj_lin.outputs[-1]) / resid0
    bound_out = (K**2 / alpha) * (lip_dh / lip_h**2) * resid0
    measured_par = (
        alpha * lip_h / resid0 * np.linalg.norm(traj.final_params - traj_lin.final_params)
    )
    bound_par = bound_out * (2.0 + 4.0 * K / 3.0)
    details.update(
        {
            "measured_output": measured_out,
            "bound_output": bound_out,
            "measured_params": measured_par,
            "bound_params": bound_par,
        }
    )
    # both sides are dimensionless; 1e-12 absorbs float roundoff in a zero lhs
    ok = bool(measured_out <= bound_out + 1e-12 and measured_par <= bound_par + 1e-12)
    return BoundCheck("finite_horizon_bound", True, ok, measured_out, bound_out, details)


def check_overparam_decay(
    traj: Trajectory,
    norms: NormEstimates,
    loss,
    space: EvaluationSet,
    alpha: float,
) -> BoundCheck:
    """Exponential decay envelope for over-parameterized lazy training.

    Requires a surjective Jacobian at initialization (sigma_min > 0).  Checks
    ||alpha h(w(t)) - y*|| <= sqrt(cond) ||y0 - y*|| exp(-m sigma_min^2 t / 4)
    at every recorded sample, for alpha above the threshold ||y*|| / C0 with
    C0 = sigma_min^3 / (32 cond^{3/2} ||Dh(w0)|| Lip(Dh)).
    """
    sigma = norms.sigma_min
    if sigma <= 0:
        return BoundCheck(
            "overparam_decay",
            False,
            None,
            None,
            None,
            {"status": "not over-parameterized: sigma_min = 0"},
        )
    m = loss.strong_convexity
    cond = loss.condition_number
    c0 = sigma**3 / (32 * cond**1.5 * norms.dh0_norm * norms.lip_dh)
    y_star_norm = space.norm(loss.minimizer)
    threshold = y_star_norm / c0
    details = {
        "sigma_min": sigma,
        "C0": c0,
        "alpha_threshold": threshold,
        "h0_norm": norms.h0_norm,
        "bound_rate": m * sigma**2 / 4.0,
    }
    if alpha <= threshold or norms.h0_norm > c0:
        details["status"] = "precondition unmet"
        return BoundCheck("overparam_decay", False, None, None, None, details)
    resid = np.array([space.norm(traj.outputs[i] - loss.minimizer) for i in range(len(traj.t))])
    envelope = np.sqrt(cond) * resid[0] * np.exp(-m * sigma**2 * traj.t / 4.0)
    ok = bool(np.all(resid <= envelope * (1 + 1e-9)))
    keep = resid > 1e-12 * max(resid[0], 1e-300)
    if np.sum(keep) >= 2:
        coef = np.polyfit(traj.t[keep], np.log(resid[keep]), 1)
        details["rate_fit"] = -float(coef[0])
    details["max_ratio"] = float(np.max(resid / envelope))
    return BoundCheck(
        "overparam_decay", True, ok, float(np.max(resid / envelope)), 1.0, details
    )


def strongly_convex_decay_envelope(
    ts: np.ndarray,
    resid_norms: np.ndarray,
    m: float,
    M: float,
    lam: float,
) -> BoundCheck:
    """Decay envelope for a strongly convex flow in a metric bounded below.

    Checks r(t) <= sqrt(M/m) r(0) exp(-m lam t) at all samples.
    """
    resid = np.asarray(resid_norms, float)
    envelope = np.sqrt(M / m) * resid[0] * np.exp(-m * lam * np.asarray(ts))
    ok = bool(np.all(resid <= envelope * (1 + 1e-9)))
    ratio = float(np.max(resid / np.maximum(envelope, 1e-300)))
    return BoundCheck(
        "strongly_convex_decay",
        True,
        ok,
        ratio,
        1.0,
        {"m": m, "M": M, "lam": lam},
    )


def check_kernel_stability_bound(
    sigma_fn,
    loss,
    y0: np.ndarray,
    space: EvaluationSet,
    horizon: float,
    n_steps: int = 400,
) -> BoundCheck:
    """Stability of a strongly convex kernel flow under kernel perturbation.

    ``sigma_fn(t)`` returns the (flattened) kernel matrix at time t, with
    sigma_fn(t) >= sigma_fn(0) >= lam * Id required for the bound to apply.
    Integrates the perturbed flow y' = -Sigma(t) grad R(y) and the frozen
    flow with Sigma(0), measures K = sup_t ||(Sigma(t) - Sigma(0)) grad R(y)||
    along the perturbed path, and checks
    ||y(t) - y_frozen(t)|| <= K ||Sigma(0)||^{1/2} / (lam^{3/2} m) at all t.
    """
    sigma0 = np.asarray(sigma_fn(0.0), float)
    eigs = scipy.linalg.eigvalsh(sigma0)
    lam, sig_norm = float(eigs[0]), float(eigs[-1])
    if lam <= 0:
        raise ValueError("frozen kernel must be positive definite")
    shape = np.asarray(y0).shape

    def apply_t(t, r):
        return (sigma_fn(t) @ r.ravel()).reshape(shape)

    def apply_0(t, r):
        return (sigma0 @ r.ravel()).reshape(shape)

    ts, ys = integrate_kernel_flow(apply_t, loss, y0, space, horizon, n_steps)
    _, ys_frozen = integrate_kernel_flow(apply_0, loss, y0, space, horizon, n_steps)
    k_meas = 0.0
    for i, t in enumerate(ts):
        drift = ((np.asarray(sigma_fn(t), float) - sigma0) @ loss.gradient(ys[i]).ravel()).reshape(shape)
        k_meas = max(k_meas, space.norm(drift))
    m = loss.strong_convexity
    bound = k_meas * np.sqrt(sig_norm) / (lam**1.5 * m)
    dev = np.array([space.norm(ys[i] - ys_frozen[i]) for i in range(len(ts))])
    measured = float(dev.max())
    ok = bool(measured <= bound * (1 + 1e-9))
    return BoundCheck(
        "kernel_stability",
        True,
        ok,
        measured,
        float(bound),
        {"K": k_meas, "lam": lam, "sigma0_norm": sig_norm, "m": m},
    )


# ---------------------------------------------------------------------------
# Regime comparison and the tangent least-squares oracle
# ---------------------------------------------------------------------------
def regime_plateau_gap(lazy_traj: Trajectory, nonlazy_traj: Trajectory) -> dict:
    """Final population losses of a lazy and a non-lazy run and their ratio."""
    lazy_final = lazy_traj.final_loss
    nonlazy_final = nonlazy_traj.final_loss
    return {
        "lazy_final_loss": lazy_final,
        "nonlazy_final_loss": nonlazy_final,
        "gap_ratio": lazy_final / max(nonlazy_final, 1e-300),
    }


def tangent_least_squares(
    model,
    w0: np.ndarray,
    inputs: np.ndarray,
    targets: np.ndarray,
    alpha: float = 1.0,
    ridge_rel: float = 1e-10,
    chunk: int = 512,
) -> np.ndarray:
    """Least-squares fit of the tangent model's features to targets.

    Solves min over dw of sum_i || h(w0)_i + (Dh(w0) dw)_i - targets_i/alpha ||^2
    via accumulated normal equations (chunked, so the feature matrix is never
    materialized in full) with a tiny relative ridge.  Returns w0 + dw.
    """
    w0 = np.asarray(w0, float)
    targets = np.asarray(targets, float)
    if targets.ndim == 1:
        targets = targets[:, None]
    p = model.num_params
    gram = np.zeros((p, p))
    rhs = np.zeros(p)
    n = inputs.shape[0]
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        space = EvaluationSet(inputs[sl], weights="unit")
        jac = model.jacobian(w0, space)
        phi = jac.dense()
        resid = (targets[sl] / alpha - jac.output).reshape(-1)
        gram += phi.T @ phi
        rhs += phi.T @ resid
    tr = np.trace(gram)
    gram[np.diag_indices_from(gram)] += ridge_rel * max(tr / p, 1e-300)
    dw = scipy.linalg.solve(gram, rhs, assume_a="pos")
    return w0 + dw


# ---------------------------------------------------------------------------
# Linearization indicators
# ---------------------------------------------------------------------------
def stability_of_activations(
    model, w_init: np.ndarray, w_final: np.ndarray, test_inputs: np.ndarray
) -> float:
    """Fraction of (input, hidden unit) pairs with unchanged pre-activation sign.

    Signs are classified as nonnegative vs negative, so exact zeros count as
    the nonnegative class consistently.  Values near 1 indicate an effective
    linearization.  Requires a relu network (possibly wrapped).
    """
    net_i, wi = unwrap_two_layer(model, w_init)
    net_f, wf = unwrap_two_layer(model, w_final)
    if net_i.activation.name != "relu":
        raise ValueError("stability of activations is defined for relu networks")
    x = np.asarray(test_inputs, float)
    z_init = x @ net_i.split(wi)[0].T
    z_final = x @ net_f.split(wf)[0].T
    return float(np.mean((z_init >= 0) == (z_final >= 0)))


def generalization_gap(
    model, tangent, w_final: np.ndarray, w_lin_final: np.ndarray, alpha: float, test_inputs: np.ndarray
) -> float:
    """Sup over test inputs of the scaled output gap between the trained
    model and the trained tangent model."""
    space = EvaluationSet(np.asarray(test_inputs, float), weights="unit")
    diff = alpha * (model.evaluate(w_final, space) - tangent.evaluate(w_lin_final, space))
    return float(np.max(np.linalg.norm(diff, axis=1)))


def tangent_feature_constants(
    model, w0: np.ndarray, test_inputs: np.ndarray, samples: int = 8, radius: float = 0.1, seed: int = 0
) -> tuple[float, float]:
    """Sampled (M1, M2): per-input feature norm and feature Lipschitz bounds.

    M1 = max over test inputs of ||D_w f(w0, x)||; M2 is a sampled lower
    bound on the Lipschitz constant of w -> D_w f(w, x), uniform over the
    test inputs.  Both enter the pointwise gap bound
    gap <= M1 alpha ||dw|| + 0.5 M2 alpha ||dw||^2.
    """
    rng = np.random.default_rng(seed)
    w0 = np.asarray(w0, float)
    space = EvaluationSet(np.asarray(test_inputs, float), weights="unit")

    def point_blocks(w):
        jac = model.jacobian(w, space)
        dense = jac.dense()  # (n*k, p)
        n, k = jac.out_shape
        return dense.reshape(n, k, -1)

    blocks0 = point_blocks(w0)
    m1 = max(
        float(np.linalg.norm(blocks0[i], ord=2)) for i in range(blocks0.shape[0])
    )
    m2 = 0.0
    prev_w, prev_blocks = w0, blocks0
    for _ in range(samples):
        u = rng.standard_normal(w0.size)
        u /= np.linalg.norm(u)
        w = w0 + radius * rng.uniform(0, 1) * u
        blocks = point_blocks(w)
        for other_w, other_blocks in ((w0, blocks0), (prev_w, prev_blocks)):
            dist = np.linalg.norm(w - other_w)
            if dist > 0:
                per_point = np.linalg.norm(
                    (blocks - other_blocks).reshape(blocks.shape[0], -1), axis=1
                )
                m2 = max(m2, float(per_point.max()) / dist)
        prev_w, prev_blocks = w, blocks
    return m1, m2
