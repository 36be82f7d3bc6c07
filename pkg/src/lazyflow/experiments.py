"""Teacher-student experiment harness and sweep driver.

Configs are plain JSON-compatible dicts; :func:`validate_config` normalizes
them and reports violations with field-path messages.  Every run derives its
random streams from explicit seeds, so rerunning a config reproduces its
output files byte for byte.

Config schema (defaults in parentheses):

    seed: master seed for sweep repeats (0)
    teacher: {neurons (3), seed (0)}
    student: {width, input_dim, output_dim (1),
              activation ("relu" or {"name": "softplus", "beta": 20.0}),
              scale_rule ({"kind": "constant", "value": 1.0}),
              init {dist ("normal"), std (a number or "xavier"), seed},
              wrappers (e.g. ["symmetrized", "centered", "scaled:10"]),
              linearized (false)}
    data: {n_train, n_test (2000), seed}
    loss: {kind ("square"), target_source ("teacher")}
    flow: {alpha (1.0), integrator ("rk4"), step ("auto"), step_factor (0.5),
           budget, horizon, record ("log"),
           stop {loss, grad_norm, grad_norm_rel}}
    sgd:  {enabled (false), batch_size (200), heldout (2000)}
    sweep: {variable ("tau" | "alpha" | "m"), grid, repeats (1),
            scale_rules (for the width sweep)}
    diagnostics: {enabled (true), directions (16), eps (1e-4)}
    outputs: {directory, trajectories (false)}

Inputs are sampled uniformly on the unit sphere; teacher labels come from a
fixed random two-layer relu net with per-neuron weight products normalized
to one.  A student config with the "symmetrized" wrapper interprets
``width`` as the total number of hidden units (the wrapper doubles a base
net of half that width).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .diagnostics import (
    CriticalInitializationError,
    inverse_relative_scale,
    stability_of_activations,
)
from .flow import FlowConfig, FlowDivergence, Trajectory, integrate_flow, run_sgd
from .linearize import linearize_at
from .loss import SquareLoss
from .model import (
    RELU,
    CenteredModel,
    EvaluationSet,
    ScaledModel,
    SymmetrizedModel,
    TwoLayerNet,
    softplus,
    unwrap_two_layer,
)

RESULT_COLUMNS = [
    "run_id",
    "variable",
    "value",
    "repeat",
    "scale_rule",
    "width",
    "init_std",
    "alpha",
    "n_train",
    "seed_data",
    "seed_init",
    "steps",
    "eta",
    "retries",
    "stop_reason",
    "train_loss",
    "test_loss",
    "best_test_loss",
    "dist_init",
    "dist_init_rel",
    "stability",
    "kappa_init",
]


class ConfigError(ValueError):
    """Config schema violation with the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# ---------------------------------------------------------------------------
# Teacher and data
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TeacherSpec:
    """Small fixed relu net generating the labels."""

    dim: int
    neurons: int = 3
    seed: int = 0


def make_teacher(spec: TeacherSpec) -> tuple[TwoLayerNet, np.ndarray]:
    """Random teacher with unit per-neuron weight product.

    Hidden weight vectors are random unit directions and output weights are
    random signs, so ||a_j|| * |b_j| = 1 exactly for every neuron.
    """
    rng = np.random.default_rng(spec.seed)
    inner = rng.standard_normal((spec.neurons, spec.dim))
    inner /= np.linalg.norm(inner, axis=1, keepdims=True)
    outer = np.where(rng.random(spec.neurons) < 0.5, -1.0, 1.0)[:, None]
    net = TwoLayerNet(width=spec.neurons, input_dim=spec.dim, output_dim=1, activation=RELU)
    return net, net.join(inner, outer)


def sample_sphere(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """n points uniform on the unit sphere."""
    x = rng.standard_normal((n, dim))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    while np.any(norms == 0):  # pragma: no cover
        x = rng.standard_normal((n, dim))
        norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / norms


def teacher_sampler(net: TwoLayerNet, w_teacher: np.ndarray, dim: int):
    """Sampler closure drawing sphere inputs with teacher labels."""

    def sampler(rng: np.random.Generator, size: int):
        x = sample_sphere(rng, size, dim)
        y = net.evaluate(w_teacher, EvaluationSet(x))
        return x, y

    return sampler


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------
def _require(cfg: dict, path: str, key: str, typ, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    val = cfg[key]
    if typ is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if typ is not None and not isinstance(val, typ):
        raise ConfigError(f"{path}.{key}", f"expected {typ}, got {type(val).__name__}")
    return val


def _positive(val, path: str):
    if val is None or val <= 0:
        raise ConfigError(path, "must be positive")
    return val


def _activation_from_cfg(act, path: str):
    if act == "relu":
        return RELU
    if act == "softplus":
        return softplus()
    if isinstance(act, dict):
        if act.get("name") != "softplus":
            raise ConfigError(path, "activation dict must name 'softplus'")
        return softplus(float(act.get("beta", 20.0)))
    raise ConfigError(path, f"unknown activation {act!r}")


def _scale_rule_from_cfg(rule, path: str) -> tuple[str, float]:
    if rule is None:
        return "constant", 1.0
    if isinstance(rule, str):
        if rule not in ("constant", "inv_width", "inv_sqrt_width"):
            raise ConfigError(path, f"unknown scale_rule {rule!r}")
        return rule, 1.0
    if isinstance(rule, dict):
        kind = rule.get("kind", "constant")
        if kind not in ("constant", "inv_width", "inv_sqrt_width"):
            raise ConfigError(f"{path}.kind", f"unknown scale_rule {kind!r}")
        value = float(rule.get("value", 1.0))
        if value <= 0:
            raise ConfigError(f"{path}.value", "must be positive")
        return kind, value
    raise ConfigError(path, "expected string or object")


def validate_config(cfg: dict) -> dict:
    """Normalize a config dict, raising ConfigError with field paths."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be an object")
    out = copy.deepcopy(cfg)
    out.setdefault("seed", 0)

    student = out.get("student")
    if not isinstance(student, dict):
        raise ConfigError("student", "missing required section")
    width = _require(student, "student", "width", int, required=True)
    _positive(width, "student.width")
    d = _require(student, "student", "input_dim", int, required=True)
    _positive(d, "student.input_dim")
    student.setdefault("output_dim", 1)
    _activation_from_cfg(student.get("activation", "relu"), "student.activation")
    _scale_rule_from_cfg(student.get("scale_rule"), "student.scale_rule")
    init = student.get("init")
    if not isinstance(init, dict):
        raise ConfigError("student.init", "missing required section")
    if "seed" not in init:
        raise ConfigError("student.init.seed", "missing required field (seeds are mandatory)")
    std = init.get("std", "xavier")
    if not (std == "xavier" or (isinstance(std, (int, float)) and std > 0)):
        raise ConfigError("student.init.std", "must be a positive number or 'xavier'")
    init.setdefault("dist", "normal")
    if init["dist"] != "normal":
        raise ConfigError("student.init.dist", f"unknown distribution {init['dist']!r}")
    wrappers = student.setdefault("wrappers", [])
    for i, wrap in enumerate(wrappers):
        if wrap in ("symmetrized", "centered"):
            continue
        if isinstance(wrap, str) and wrap.startswith("scaled:"):
            try:
                if float(wrap.split(":", 1)[1]) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"student.wrappers[{i}]", "scaled:<alpha> needs alpha > 0") from None
            continue
        raise ConfigError(f"student.wrappers[{i}]", f"unknown wrapper {wrap!r}")
    if "symmetrized" in wrappers and width % 2:
        raise ConfigError("student.width", "symmetrized wrapper needs an even width")
    student.setdefault("linearized", False)

    teacher = out.setdefault("teacher", {})
    teacher.setdefault("neurons", 3)
    teacher.setdefault("seed", 0)
    _positive(teacher["neurons"], "teacher.neurons")

    data = out.get("data")
    if not isinstance(data, dict):
        raise ConfigError("data", "missing required section")
    _positive(_require(data, "data", "n_train", int, required=True), "data.n_train")
    data.setdefault("n_test", 2000)
    if "seed" not in data:
        raise ConfigError("data.seed", "missing required field (seeds are mandatory)")

    loss = out.setdefault("loss", {})
    loss.setdefault("kind", "square")
    loss.setdefault("target_source", "teacher")
    if loss["kind"] != "square":
        raise ConfigError("loss.kind", f"unsupported loss {loss['kind']!r}")
    if loss["target_source"] not in ("teacher", "explicit"):
        raise ConfigError("loss.target_source", "must be 'teacher' or 'explicit'")

    flow = out.setdefault("flow", {})
    flow.setdefault("alpha", 1.0)
    _positive(float(flow["alpha"]), "flow.alpha")
    flow.setdefault("integrator", "rk4")
    if flow["integrator"] not in ("rk4", "euler"):
        raise ConfigError("flow.integrator", "must be 'rk4' or 'euler'")
    flow.setdefault("step", "auto")
    flow.setdefault("step_factor", 0.5)
    if flow.get("budget") is None and flow.get("horizon") is None:
        raise ConfigError("flow.budget", "one of flow.budget or flow.horizon is required")
    flow.setdefault("record", "log")
    flow.setdefault("stop", {})

    sgd = out.setdefault("sgd", {"enabled": False})
    sgd.setdefault("enabled", False)
    if sgd["enabled"]:
        _positive(_require(sgd, "sgd", "batch_size", int, default=200), "sgd.batch_size")
        sgd.setdefault("batch_size", 200)
        sgd.setdefault("heldout", 2000)

    sweep = out.get("sweep")
    if sweep is not None:
        var = _require(sweep, "sweep", "variable", str, required=True)
        if var not in ("tau", "alpha", "m"):
            raise ConfigError("sweep.variable", "must be 'tau', 'alpha' or 'm'")
        grid = _require(sweep, "sweep", "grid", list, required=True)
        if len(grid) < 1:
            raise ConfigError("sweep.grid", "must be non-empty")
        sweep.setdefault("repeats", 1)
        _positive(sweep["repeats"], "sweep.repeats")

    diag = out.setdefault("diagnostics", {})
    diag.setdefault("enabled", True)
    diag.setdefault("directions", 16)
    diag.setdefault("eps", 1e-4)

    out.setdefault("outputs", {})
    out["outputs"].setdefault("trajectories", False)
    return out


# ---------------------------------------------------------------------------
# Building students
# ---------------------------------------------------------------------------
def build_student(student_cfg: dict) -> tuple[object, np.ndarray]:
    """Model (with wrappers applied) and its initialization vector."""
    width = student_cfg["width"]
    wrappers = student_cfg.get("wrappers", [])
    base_width = width // 2 if "symmetrized" in wrappers else width
    rule, value = _scale_rule_from_cfg(student_cfg.get("scale_rule"), "student.scale_rule")
    net = TwoLayerNet(
        width=base_width,
        input_dim=student_cfg["input_dim"],
        output_dim=student_cfg.get("output_dim", 1),
        activation=_activation_from_cfg(student_cfg.get("activation", "relu"), "student.activation"),
        scale_rule=rule,
        scale_const=value,
    )
    init = student_cfg["init"]
    rng = np.random.default_rng(init["seed"])
    w0 = net.random_params(rng, init.get("std", "xavier"))
    model = net
    for wrap in wrappers:
        if wrap == "symmetrized":
            model = SymmetrizedModel(model)
            w0 = model.paired_params(w0)
        elif wrap == "centered":
            model = CenteredModel(model, w0)
        elif wrap.startswith("scaled:"):
            model = ScaledModel(model, float(wrap.split(":", 1)[1]))
    if student_cfg.get("linearized"):
        model = linearize_at(model, w0)
    return model, w0


def _flow_config_from_cfg(flow_cfg: dict, seed: int | None = None) -> FlowConfig:
    stop = flow_cfg.get("stop", {})
    return FlowConfig(
        alpha=float(flow_cfg.get("alpha", 1.0)),
        horizon=flow_cfg.get("horizon"),
        n_steps=flow_cfg.get("budget"),
        integrator=flow_cfg.get("integrator", "rk4"),
        step=flow_cfg.get("step", "auto"),
        step_factor=float(flow_cfg.get("step_factor", 0.5)),
        record=flow_cfg.get("record", "log"),
        stop_loss=stop.get("loss"),
        stop_grad=stop.get("grad_norm"),
        stop_grad_rel=stop.get("grad_norm_rel"),
        seed=seed,
    )


def _run_with_retry(runner, config: FlowConfig, max_retries: int) -> tuple[Trajectory, int]:
    """Halve the step after a divergence abort, up to ``max_retries`` times.

    The auto step rule sizes the step from the Jacobian norm at the
    initialization, which underestimates the stiffness of homogeneous models
    whose weights grow during feature learning; retrying with a halved step
    keeps the harness robust and the final step size is recorded.
    """
    cfg = config
    for attempt in range(max_retries + 1):
        try:
            return runner(cfg), attempt
        except FlowDivergence:
            if attempt == max_retries:
                raise
            if cfg.step == "auto":
                cfg = replace(cfg, step_factor=cfg.step_factor / 2.0)
            else:
                cfg = replace(cfg, step=float(cfg.step) / 2.0, horizon=None)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------
def _float_repr(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return repr(float(x))


def run_single(cfg: dict, data_seed: int, init_seed: int, sgd_seed: int | None = None) -> dict:
    """One teacher-student training run; returns a results row dict.

    The row additionally carries the trajectory, model and evaluation sets
    under non-column keys for callers that need them.
    """
    cfg = copy.deepcopy(cfg)
    cfg["data"]["seed"] = data_seed
    cfg["student"]["init"]["seed"] = init_seed
    d = cfg["student"]["input_dim"]
    teacher_net, w_teacher = make_teacher(
        TeacherSpec(dim=d, neurons=cfg["teacher"]["neurons"], seed=cfg["teacher"]["seed"])
    )
    sampler = teacher_sampler(teacher_net, w_teacher, d)
    rng_data = np.random.default_rng(data_seed)
    x_test, y_test = sampler(rng_data, cfg["data"]["n_test"])
    test_space = EvaluationSet(x_test, y_test)
    test_loss_fn = SquareLoss(y_test)

    model, w0 = build_student(cfg["student"])
    alpha = float(cfg["flow"].get("alpha", 1.0))
    max_retries = int(cfg["flow"].get("retries", 6))

    if cfg["sgd"]["enabled"]:
        flow_cfg = _flow_config_from_cfg(cfg["flow"], seed=sgd_seed if sgd_seed is not None else data_seed)
        traj, retries = _run_with_retry(
            lambda c: run_sgd(
                model,
                w0,
                sampler,
                batch_size=cfg["sgd"]["batch_size"],
                config=c,
                heldout_size=cfg["sgd"].get("heldout", 2000),
            ),
            flow_cfg,
            max_retries,
        )
        train_space = None
        train_final = traj.final_loss
    else:
        x_train, y_train = sampler(rng_data, cfg["data"]["n_train"])
        train_space = EvaluationSet(x_train, y_train)
        flow_cfg = _flow_config_from_cfg(cfg["flow"])
        train_loss_fn = SquareLoss(y_train)
        traj, retries = _run_with_retry(
            lambda c: integrate_flow(model, train_loss_fn, w0, train_space, c),
            flow_cfg,
            max_retries,
        )
        train_final = traj.final_loss

    # Test losses along the recorded samples; the minimum plays the role of
    # early stopping.
    test_curve = np.array(
        [
            test_loss_fn.value(alpha * model.evaluate(traj.params[i], test_space), test_space)
            / alpha**2
            for i in range(len(traj.t))
        ]
    )
    test_final = float(test_curve[-1])
    best_test = float(test_curve.min())

    stability = None
    net0, _ = (None, None)
    try:
        stability = stability_of_activations(model, w0, traj.final_params, x_test)
    except (ValueError, TypeError):
        pass

    kappa = None
    if cfg["diagnostics"]["enabled"] and train_space is not None:
        try:
            kappa = inverse_relative_scale(
                model,
                w0,
                SquareLoss(train_space.targets),
                train_space,
                directions=cfg["diagnostics"]["directions"],
                eps=cfg["diagnostics"]["eps"],
                seed=0,
            )
        except CriticalInitializationError:
            kappa = None

    dist = float(np.linalg.norm(traj.final_params - w0))
    w0_norm = float(np.linalg.norm(w0))
    return {
        "width": cfg["student"]["width"],
        "init_std": cfg["student"]["init"].get("std"),
        "alpha": alpha,
        "n_train": cfg["data"]["n_train"],
        "seed_data": data_seed,
        "seed_init": init_seed,
        "steps": traj.steps_taken,
        "eta": traj.eta,
        "retries": retries,
        "stop_reason": traj.stop_reason,
        "train_loss": train_final,
        "test_loss": test_final,
        "best_test_loss": best_test,
        "dist_init": dist,
        "dist_init_rel": dist / w0_norm if w0_norm > 0 else np.inf,
        "stability": stability,
        "kappa_init": kappa,
        "_trajectory": traj,
        "_model": model,
        "_w0": w0,
        "_test_space": test_space,
        "_train_space": train_space,
    }


def _derive_seeds(master: int, repeat: int) -> tuple[int, int, int]:
    """Per-repeat seeds, identical across grid values of a sweep."""
    ss = np.random.SeedSequence([master, repeat])
    data_s, init_s, sgd_s = ss.spawn(3)
    return (
        int(data_s.generate_state(1)[0]),
        int(init_s.generate_state(1)[0]),
        int(sgd_s.generate_state(1)[0]),
    )


def _apply_sweep_value(cfg: dict, variable: str, value) -> dict:
    cfg = copy.deepcopy(cfg)
    if variable == "tau":
        cfg["student"]["init"]["std"] = float(value)
    elif variable == "alpha":
        cfg["flow"]["alpha"] = float(value)
    elif variable == "m":
        cfg["student"]["width"] = int(value)
    else:
        raise ConfigError("sweep.variable", f"unknown variable {variable!r}")
    return cfg


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------
def write_results_csv(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in RESULT_COLUMNS:
                val = row.get(col)
                if val is None:
                    cells.append("")
                elif isinstance(val, (int, np.integer)) and col not in ("value",):
                    cells.append(str(int(val)))
                elif isinstance(val, str):
                    cells.append(val)
                else:
                    cells.append(_float_repr(val))
            fh.write(",".join(cells) + "\n")


def _write_common_outputs(out_dir: Path, cfg: dict, rows: list[dict], diagnostics: dict, summary: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config-echo.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_results_csv(rows, out_dir / "results.csv")
    with open(out_dir / "diagnostics.json", "w") as fh:
        json.dump(diagnostics, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write(summary)


def run_teacher_student(cfg: dict, out_dir) -> dict:
    """Single run driven by a config; writes the standard output files."""
    cfg = validate_config(cfg)
    out_dir = Path(out_dir)
    data_seed, init_seed, sgd_seed = (
        cfg["data"]["seed"],
        cfg["student"]["init"]["seed"],
        cfg["seed"],
    )
    row = run_single(cfg, data_seed, init_seed, sgd_seed)
    traj: Trajectory = row["_trajectory"]
    row_out = {"run_id": 0, "variable": "", "value": "", "repeat": 0,
               "scale_rule": _scale_rule_from_cfg(cfg["student"].get("scale_rule"), "student.scale_rule")[0],
               **{k: v for k, v in row.items() if not k.startswith("_")}}
    diagnostics = {
        "kappa_init": row["kappa_init"],
        "stability_of_activations": row["stability"],
        "flow": {"eta": traj.eta, "steps": traj.steps_taken, "stop_reason": traj.stop_reason},
    }
    summary = (
        f"run: train_loss={row['train_loss']:.6g} test_loss={row['test_loss']:.6g} "
        f"best_test_loss={row['best_test_loss']:.6g} steps={row['steps']} "
        f"stop={row['stop_reason']}\n"
    )
    _write_common_outputs(out_dir, cfg, [row_out], diagnostics, summary)
    traj.to_csv(out_dir / "trajectory.csv",
                out_dir / "trajectory_params.npy" if cfg["outputs"].get("trajectories") else None)
    if cfg["student"]["input_dim"] == 2 and cfg["student"].get("output_dim", 1) == 1:
        write_neuron_cloud_csv(export_neuron_cloud(traj, row["_model"]), out_dir / "neuron_cloud.csv")
    row_out["_trajectory"] = traj
    row_out["_model"] = row["_model"]
    row_out["_w0"] = row["_w0"]
    return row_out


def run_sweep(cfg: dict, out_dir, variable: str | None = None) -> list[dict]:
    """Grid x repeats sweep over tau, alpha or width; writes aggregate files."""
    cfg = validate_config(cfg)
    if cfg.get("sweep") is None:
        raise ConfigError("sweep", "missing required section")
    if variable is not None and variable != cfg["sweep"]["variable"]:
        raise ConfigError("sweep.variable", f"config sweeps {cfg['sweep']['variable']!r}, requested {variable!r}")
    var = cfg["sweep"]["variable"]
    grid = cfg["sweep"]["grid"]
    repeats = cfg["sweep"]["repeats"]
    out_dir = Path(out_dir)
    rows = []
    run_id = 0
    for value in grid:
        run_cfg = _apply_sweep_value(cfg, var, value)
        for rep in range(repeats):
            data_seed, init_seed, sgd_seed = _derive_seeds(cfg["seed"], rep)
            row = run_single(run_cfg, data_seed, init_seed, sgd_seed)
            rows.append(
                {
                    "run_id": run_id,
                    "variable": var,
                    "value": value,
                    "repeat": rep,
                    "scale_rule": _scale_rule_from_cfg(run_cfg["student"].get("scale_rule"), "student.scale_rule")[0],
                    **{k: v for k, v in row.items() if not k.startswith("_")},
                    "_trajectory": row["_trajectory"],
                    "_model": row["_model"],
                    "_w0": row["_w0"],
                }
            )
            run_id += 1
    agg = aggregate_rows(rows, key=lambda r: r["value"])
    diagnostics = {
        "variable": var,
        "aggregate": agg,
        "unconverged_runs": [r["run_id"] for r in rows if r["stop_reason"] == "budget"],
    }
    summary_lines = [f"sweep over {var}:"]
    for value, stats in agg.items():
        summary_lines.append(
            f"  {var}={value}: test_loss={stats['test_loss_mean']:.6g} "
            f"+- {stats['test_loss_std']:.2g} (n={stats['count']})"
        )
    _write_common_outputs(out_dir, cfg, [
        {k: v for k, v in r.items() if not k.startswith("_")} for r in rows
    ], diagnostics, "\n".join(summary_lines) + "\n")
    return rows


def aggregate_rows(rows: list[dict], key) -> dict:
    """Mean and std of the loss columns grouped by a key function."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(key(row), []).append(row)
    agg = {}
    for k, group in sorted(groups.items(), key=lambda kv: str(kv[0])):
        tests = np.array([g["test_loss"] for g in group], dtype=float)
        trains = np.array([g["train_loss"] for g in group], dtype=float)
        bests = np.array([g["best_test_loss"] for g in group], dtype=float)
        agg[k] = {
            "count": len(group),
            "test_loss_mean": float(tests.mean()),
            "test_loss_std": float(tests.std()),
            "train_loss_mean": float(trains.mean()),
            "best_test_loss_mean": float(bests.mean()),
        }
    return agg


def sweep_width(cfg: dict, out_dir, scale_rules=("inv_width", "inv_sqrt_width")) -> list[dict]:
    """Width sweep run once per output-scaling rule, shared seeds."""
    cfg = validate_config(cfg)
    if cfg.get("sweep") is None or cfg["sweep"]["variable"] != "m":
        raise ConfigError("sweep.variable", "width sweep requires sweep.variable = 'm'")
    scale_rules = list(cfg["sweep"].get("scale_rules", scale_rules))
    out_dir = Path(out_dir)
    all_rows = []
    for rule in scale_rules:
        sub = copy.deepcopy(cfg)
        sub["student"]["scale_rule"] = {"kind": rule, "value": cfg["student"].get("scale_rule", {}).get("value", 1.0) if isinstance(cfg["student"].get("scale_rule"), dict) else 1.0}
        rows = run_sweep(sub, out_dir / rule)
        all_rows.extend(rows)
    agg = aggregate_rows(all_rows, key=lambda r: (r["scale_rule"], r["value"]))
    summary = ["width sweep (mean test loss at convergence):"]
    for (rule, m), stats in agg.items():
        summary.append(f"  {rule} m={m}: {stats['test_loss_mean']:.6g} +- {stats['test_loss_std']:.2g}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv([{k: v for k, v in r.items() if not k.startswith("_")} for r in all_rows],
                      out_dir / "results.csv")
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write("\n".join(summary) + "\n")
    with open(out_dir / "config-echo.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "diagnostics.json", "w") as fh:
        json.dump({"aggregate": {f"{r}|{m}": v for (r, m), v in agg.items()}}, fh,
                  indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return all_rows


# ---------------------------------------------------------------------------
# Neuron cloud export (2-D visualization data)
# ---------------------------------------------------------------------------
def export_neuron_cloud(traj: Trajectory, model) -> list[tuple]:
    """Weighted neuron positions |b_j| a_j over time with output-sign labels.

    Only defined for 2-D inputs and scalar outputs; returns rows
    (t, neuron index, position x, position y, sign of outer weight).
    """
    net, w_last = unwrap_two_layer(model, traj.params[-1])
    if net.input_dim != 2 or net.output_dim != 1:
        raise ValueError("neuron cloud export requires input_dim=2 and output_dim=1")
    rows = []
    for i in range(len(traj.t)):
        _, w = unwrap_two_layer(model, traj.params[i])
        inner, outer = net.split(w)
        pos = np.abs(outer) * inner
        for j in range(net.width):
            rows.append((float(traj.t[i]), j, float(pos[j, 0]), float(pos[j, 1]),
                         1.0 if outer[j, 0] >= 0 else -1.0))
    return rows


def write_neuron_cloud_csv(rows: list[tuple], path) -> None:
    with open(path, "w") as fh:
        fh.write("t,neuron,pos_x,pos_y,sign\n")
        for t, j, px, py, sign in rows:
            fh.write(f"{t!r},{j},{px!r},{py!r},{sign!r}\n")
