"""Command line entry point.

    lazyflow run <config.json> [-o DIR]
    lazyflow sweep --var {tau|alpha|m} <config.json> [-o DIR]
    lazyflow diagnose <config.json> [-o DIR] [--csv]
    lazyflow kernel {--section | --spectrum} <config.json> [-o DIR]

Exit codes: 0 on success, 1 on a config error, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .diagnostics import (
    CriticalInitializationError,
    check_finite_horizon_bound,
    check_overparam_decay,
    compare_flows,
    deviation_report,
    estimate_norms,
    inverse_relative_scale,
)
from .flow import FlowConfig, FlowDivergence, integrate_flow, integrate_linearized_flow
from .kernels import ArcCosineKernel, kernel_section
from .linearize import spectrum_of_model
from .loss import SquareLoss
from .model import EvaluationSet
from .experiments import (
    ConfigError,
    TeacherSpec,
    build_student,
    make_teacher,
    run_sweep,
    run_teacher_student,
    sample_sphere,
    sweep_width,
    teacher_sampler,
    validate_config,
)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError("<config>", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<config>", f"invalid JSON: {exc}") from None


def _default_out(config_path: str, suffix: str) -> Path:
    return Path(config_path).with_suffix("") .parent / (Path(config_path).stem + "_" + suffix)


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out) if args.out else _default_out(args.config, "run")
    row = run_teacher_student(cfg, out)
    print(f"wrote {out}/results.csv (test_loss={row['test_loss']:.6g})")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out) if args.out else _default_out(args.config, "sweep")
    if args.var == "m" and (cfg.get("sweep", {}).get("scale_rules")):
        sweep_width(cfg, out)
    else:
        run_sweep(cfg, out, variable=args.var)
    print(f"wrote {out}/results.csv")
    return 0


def _cmd_diagnose(args) -> int:
    cfg = validate_config(_load_config(args.config))
    out = Path(args.out) if args.out else _default_out(args.config, "diagnose")
    out.mkdir(parents=True, exist_ok=True)
    d = cfg["student"]["input_dim"]
    teacher_net, w_teacher = make_teacher(
        TeacherSpec(dim=d, neurons=cfg["teacher"]["neurons"], seed=cfg["teacher"]["seed"])
    )
    sampler = teacher_sampler(teacher_net, w_teacher, d)
    rng = np.random.default_rng(cfg["data"]["seed"])
    x_train, y_train = sampler(rng, cfg["data"]["n_train"])
    space = EvaluationSet(x_train, y_train)
    loss = SquareLoss(y_train)
    model, w0 = build_student(cfg["student"])

    diag_cfg = cfg.get("diagnose", {})
    radius = diag_cfg.get("radius", 0.1)
    samples = diag_cfg.get("samples", 16)
    norms = estimate_norms(model, w0, space, radius=radius, samples=samples,
                           directions=cfg["diagnostics"]["directions"])
    try:
        kappa = inverse_relative_scale(model, w0, loss, space, norms=norms)
    except CriticalInitializationError as exc:
        kappa = None
    report = {"norm_estimates": norms.to_dict(), "kappa": kappa, "bound_checks": []}

    alphas = diag_cfg.get("alphas", [1.0, 10.0, 100.0])
    n_iters = float(diag_cfg.get("n_iters", 5.0))
    horizon = n_iters / norms.lip_h**2
    n_steps = int(diag_cfg.get("steps", 200))
    deviations = []
    for alpha in alphas:
        cfg_flow = FlowConfig(alpha=alpha, horizon=horizon, n_steps=n_steps,
                              step=horizon / n_steps, record="dense")
        traj = integrate_flow(model, loss, w0, space, cfg_flow)
        traj_lin = integrate_linearized_flow(model, loss, w0, space, cfg_flow)
        dev = compare_flows(traj, traj_lin, space)
        deviations.append(dev)
        check = check_finite_horizon_bound(traj, traj_lin, loss, space, norms, alpha, n_iters)
        report["bound_checks"].append(check.to_dict())
        decay = check_overparam_decay(traj, norms, loss, space, alpha)
        report["bound_checks"].append(decay.to_dict())
        if args.csv:
            with open(out / f"deviation_alpha{alpha:g}.csv", "w") as fh:
                fh.write("t,dist_init,dist_params,dist_outputs\n")
                for i in range(len(dev.t)):
                    fh.write(f"{float(dev.t[i])!r},{float(dev.dist_init[i])!r},"
                             f"{float(dev.dist_params[i])!r},{float(dev.dist_outputs[i])!r}\n")
    try:
        rep = deviation_report(deviations)
        report["deviation_slopes"] = {
            "alphas": rep.alphas.tolist(),
            "sup_params_slope": rep.slope_params.slope,
            "sup_outputs_slope": rep.slope_outputs.slope,
            "sup_init_slope": rep.slope_init.slope,
        }
    except ValueError:
        pass
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    print(f"wrote {out}/diagnostics.json (kappa={kappa})")
    return 0


def _cmd_kernel(args) -> int:
    cfg = validate_config(_load_config(args.config))
    out = Path(args.out) if args.out else _default_out(args.config, "kernel")
    out.mkdir(parents=True, exist_ok=True)
    kcfg = cfg.get("kernel", {})
    if args.section:
        dim = int(kcfg.get("dim", 10))
        spec = ArcCosineKernel.standard_normal(dim)
        phis = np.linspace(0.0, np.pi, int(kcfg.get("grid_size", 64)))
        section = kernel_section(spec, phis, width=int(kcfg.get("width", 1000)),
                                 seeds=range(int(kcfg.get("seeds", 10))))
        section.to_csv(out / "kernel_section.csv")
        print(f"wrote {out}/kernel_section.csv")
        return 0
    # spectrum of the student's tangent kernel at initialization
    d = cfg["student"]["input_dim"]
    teacher_net, w_teacher = make_teacher(
        TeacherSpec(dim=d, neurons=cfg["teacher"]["neurons"], seed=cfg["teacher"]["seed"])
    )
    rng = np.random.default_rng(cfg["data"]["seed"])
    x_train = sample_sphere(rng, cfg["data"]["n_train"], d)
    space = EvaluationSet(x_train)
    model, w0 = build_student(cfg["student"])
    spec = spectrum_of_model(model, w0, space)
    with open(out / "kernel_spectrum.csv", "w") as fh:
        fh.write("index,eigenvalue,normalized_eigenvalue\n")
        for i, (ev, nv) in enumerate(zip(spec.eigenvalues, spec.normalized)):
            fh.write(f"{i},{float(ev)!r},{float(nv)!r}\n")
    print(f"wrote {out}/kernel_spectrum.csv (rank={spec.rank}, sigma_min={spec.sigma_min:.3g})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lazyflow", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single teacher-student run")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid x repeats sweep")
    p_sweep.add_argument("--var", choices=["tau", "alpha", "m"], required=True)
    p_sweep.add_argument("config")
    p_sweep.add_argument("-o", "--out", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_diag = sub.add_parser("diagnose", help="norm estimates, scale criterion, bound checks")
    p_diag.add_argument("config")
    p_diag.add_argument("-o", "--out", default=None)
    p_diag.add_argument("--csv", action="store_true", help="also write deviation curves")
    p_diag.set_defaults(func=_cmd_diagnose)

    p_kern = sub.add_parser("kernel", help="kernel section or spectrum CSV")
    group = p_kern.add_mutually_exclusive_group(required=True)
    group.add_argument("--section", action="store_true")
    group.add_argument("--spectrum", action="store_true")
    p_kern.add_argument("config")
    p_kern.add_argument("-o", "--out", default=None)
    p_kern.set_defaults(func=_cmd_kernel)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FlowDivergence, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
