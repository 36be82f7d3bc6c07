"""End-to-end verification suite.

Each test implements one quantitative acceptance check at its stated
tolerance and prints a single pass/fail line (visible with ``pytest -s`` or
``-v``).  The heavy teacher-student reproductions are marked ``slow``; the
default ``pytest`` run includes them.
"""

import numpy as np
import pytest
from scipy.stats import spearmanr

import lazyflow as lf
from lazyflow.experiments import (
    TeacherSpec,
    _derive_seeds,
    make_teacher,
    run_single,
    run_sweep,
    sample_sphere,
    teacher_sampler,
    validate_config,
)
from conftest import finite_difference_jacobian


def report(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. Analytic Jacobians against central finite differences
# ---------------------------------------------------------------------------
def test_jacobian_matches_finite_differences_suite():
    worst = 0.0
    rng = np.random.default_rng(0)
    for d, m, k in ((3, 8, 1), (12, 25, 2), (20, 50, 1)):
        net = lf.TwoLayerNet(width=m, input_dim=d, output_dim=k, activation=lf.softplus())
        w = net.random_params(rng, 0.6)
        data = lf.EvaluationSet(rng.standard_normal((6, d)))
        analytic = net.jacobian(w, data).dense().reshape(6, k, net.num_params)
        fd = finite_difference_jacobian(net, w, data)
        worst = max(worst, np.abs(analytic - fd).max() / np.abs(fd).max())
    report("jacobian finite-difference oracle", worst < 1e-6, f"worst relative error {worst:.2e}")


# ---------------------------------------------------------------------------
# Shared scale sweep: centered softplus teacher-student, four scales
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def scale_sweep():
    rng = np.random.default_rng(0)
    d, m, n = 10, 32, 20
    teacher, wt = make_teacher(TeacherSpec(dim=d, seed=4))
    x = sample_sphere(rng, n, d)
    y = teacher.evaluate(wt, lf.EvaluationSet(x))
    data = lf.EvaluationSet(x, y)
    loss = lf.SquareLoss(y)
    net = lf.TwoLayerNet(width=m, input_dim=d, activation=lf.softplus())
    w_init = net.random_params(rng, "xavier")
    model = lf.CenteredModel(net, w_init)  # zero output at initialization
    lip = lf.operator_norm(model.jacobian(w_init, data))
    horizon = 5.0 / lip**2
    runs = {}
    for alpha in (1.0, 10.0, 100.0, 1000.0):
        cfg = lf.FlowConfig(alpha=alpha, horizon=horizon, n_steps=250,
                            step=horizon / 250, record="dense")
        traj = lf.integrate_flow(model, loss, w_init, data, cfg)
        traj_lin = lf.integrate_linearized_flow(model, loss, w_init, data, cfg)
        runs[alpha] = (traj, traj_lin)
    return {"model": model, "w_init": w_init, "data": data, "loss": loss, "runs": runs}


# ---------------------------------------------------------------------------
# 2. Deviation exponents of the flow from its linearization
# ---------------------------------------------------------------------------
def test_deviation_rate_exponents(scale_sweep):
    devs = [
        lf.compare_flows(traj, traj_lin, scale_sweep["data"])
        for traj, traj_lin in scale_sweep["runs"].values()
    ]
    rep = lf.deviation_report(devs)
    sp, so, si = rep.slope_params.slope, rep.slope_outputs.slope, rep.slope_init.slope
    ok = abs(sp + 2.0) <= 0.3 and abs(so + 1.0) <= 0.3 and abs(si + 1.0) <= 0.3
    report(
        "deviation rate exponents",
        ok,
        f"param slope {sp:.2f} (-2 +- 0.3), output slope {so:.2f} (-1 +- 0.3), "
        f"drift slope {si:.2f} (-1 +- 0.3)",
    )


# ---------------------------------------------------------------------------
# 3. Finite-horizon square-loss bound on 20 random instances
# ---------------------------------------------------------------------------
def test_finite_horizon_bound_holds():
    passed = 0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        d = int(rng.integers(3, 9))
        m = int(rng.integers(5, 21))
        n = int(rng.integers(5, 16))
        net = lf.TwoLayerNet(width=m, input_dim=d, activation=lf.softplus())
        w_init = net.random_params(rng, 0.8)
        model = lf.CenteredModel(net, w_init)
        x = sample_sphere(rng, n, d)
        y = rng.standard_normal((n, 1))
        data = lf.EvaluationSet(x, y)
        loss = lf.SquareLoss(y)
        norms = lf.estimate_norms(model, w_init, data, radius=0.5, samples=16,
                                  directions=16, seed=trial)
        k_iters = 10.0
        horizon = k_iters / norms.lip_h**2
        alpha = 2.0 * k_iters * data.norm(y) / (norms.radius * norms.lip_h)
        cfg = lf.FlowConfig(alpha=alpha, horizon=horizon, n_steps=200,
                            step=horizon / 200, record="dense")
        traj = lf.integrate_flow(model, loss, w_init, data, cfg)
        traj_lin = lf.integrate_linearized_flow(model, loss, w_init, data, cfg)
        check = lf.check_finite_horizon_bound(traj, traj_lin, loss, data, norms,
                                              alpha, k_iters, safety=2.0)
        passed += bool(check.applicable and check.satisfied)
    report("finite-horizon bound", passed == 20, f"{passed}/20 instances satisfied")


# ---------------------------------------------------------------------------
# 4. Exponential decay envelopes in the over-parameterized regime
# ---------------------------------------------------------------------------
def test_overparam_decay_envelope():
    envelope_ok = True
    lemma_ok = True
    detail = []
    for trial in range(3):
        rng = np.random.default_rng(50 + trial)
        d, m, n = 5, 30, 10  # n*k = 10 <= p = 180
        net = lf.TwoLayerNet(width=m, input_dim=d, activation=lf.softplus())
        w_init = net.random_params(rng, 0.8)
        model = lf.CenteredModel(net, w_init)
        x = sample_sphere(rng, n, d)
        y = rng.standard_normal((n, 1))
        data = lf.EvaluationSet(x, y)
        loss = lf.SquareLoss(y)
        norms = lf.estimate_norms(model, w_init, data, radius=0.3, samples=16,
                                  directions=16, seed=trial)
        c0 = norms.sigma_min**3 / (32 * norms.dh0_norm * norms.lip_dh)
        alpha = 10.0 * data.norm(y) / c0
        horizon = 10.0 / norms.sigma_min**2
        n_steps = max(400, int(np.ceil(horizon * norms.lip_h**2 / 0.3)))
        cfg = lf.FlowConfig(alpha=alpha, horizon=horizon, n_steps=n_steps,
                            step=horizon / n_steps, record="dense")
        traj = lf.integrate_flow(model, loss, w_init, data, cfg)
        res = lf.check_overparam_decay(traj, norms, loss, data, alpha)
        envelope_ok &= bool(res.applicable and res.satisfied)
        detail.append(f"ratio {res.measured:.3f}")
        # linearized flow against the constant-metric envelope
        traj_lin = lf.integrate_linearized_flow(model, loss, w_init, data, cfg)
        lam = norms.sigma_min**2
        resid = np.array([data.norm(traj_lin.outputs[i] - y) for i in range(len(traj_lin.t))])
        lem = lf.strongly_convex_decay_envelope(traj_lin.t, resid, 1.0, 1.0, lam)
        lemma_ok &= bool(lem.satisfied)
    report("over-parameterized decay envelope", envelope_ok and lemma_ok,
           f"3/3 instances, max envelope ratios {', '.join(detail)}")


# ---------------------------------------------------------------------------
# 5. Kernel-perturbation stability bound on 50 random instances
# ---------------------------------------------------------------------------
def test_kernel_stability_bound_holds():
    passed = 0
    for trial in range(50):
        rng = np.random.default_rng(trial)
        dim = int(rng.integers(3, 9))
        basis = rng.standard_normal((dim, dim))
        sigma0 = basis @ basis.T + dim * np.eye(dim)
        proot = rng.standard_normal((dim, dim)) * rng.uniform(0.1, 0.6)
        pert = proot @ proot.T

        def sigma_fn(t, s0=sigma0, pp=pert):
            return s0 + (0.5 + 0.5 * np.sin(2.0 * t + 0.3)) * pp

        space = lf.EvaluationSet(np.zeros((dim, 1)), weights="unit")
        loss = lf.QuadraticLoss(rng.standard_normal((dim, 1)),
                                rng.uniform(0.5, 2.0, (dim, 1)))
        y0 = rng.standard_normal((dim, 1))
        lam0 = np.linalg.eigvalsh(sigma0)[0]
        lam_max = np.linalg.eigvalsh(sigma0 + pert)[-1]
        horizon = 4.0 / (loss.strong_convexity * lam0)
        n_steps = max(300, int(3 * horizon * lam_max * loss.smoothness))
        check = lf.check_kernel_stability_bound(sigma_fn, loss, y0, space, horizon, n_steps)
        passed += bool(check.satisfied)
    report("kernel stability bound", passed == 50, f"{passed}/50 instances satisfied")


# ---------------------------------------------------------------------------
# 6. Generalization against the initialization scale (10 repeats, 100-D)
# ---------------------------------------------------------------------------
def _tau_config(tau, linearized=False, budget=3500):
    return validate_config({
        "seed": 0,
        "teacher": {"neurons": 3, "seed": 1},
        "student": {"width": 50, "input_dim": 100, "activation": "relu",
                    "init": {"std": tau, "seed": 0}, "wrappers": ["symmetrized"],
                    "linearized": linearized},
        "data": {"n_train": 1000, "n_test": 2000, "seed": 0},
        "flow": {"budget": budget, "integrator": "euler", "step": "auto",
                 "step_factor": 1.0, "record": "log",
                 "stop": {"grad_norm_rel": 1e-7}},
        "diagnostics": {"enabled": False},
    })


@pytest.mark.slow
def test_generalization_worsens_with_init_scale():
    taus = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0]
    repeats = 10
    means = []
    for tau in taus:
        losses = []
        for rep in range(repeats):
            data_seed, init_seed, _ = _derive_seeds(0, rep)
            losses.append(run_single(_tau_config(tau), data_seed, init_seed)["test_loss"])
        means.append(float(np.mean(losses)))
    rho = float(spearmanr(taus, means).statistic)

    lin_losses = []
    for rep in range(repeats):
        data_seed, init_seed, _ = _derive_seeds(0, rep)
        lin_losses.append(
            run_single(_tau_config(taus[-1], linearized=True), data_seed, init_seed)["test_loss"]
        )
    lin_mean = float(np.mean(lin_losses))
    plateau_rel = abs(means[-1] - lin_mean) / lin_mean
    ok = rho > 0.9 and plateau_rel <= 0.10
    report(
        "generalization vs init scale",
        ok,
        f"spearman {rho:.3f} (> 0.9), plateau vs linearized {plateau_rel:.4f} (<= 0.10); "
        f"means {['%.5f' % v for v in means]}",
    )


# ---------------------------------------------------------------------------
# 7. Width sweep under the two output scalings (5 repeats, 100-D)
# ---------------------------------------------------------------------------
def _width_config(m, rule, linearized=False):
    return validate_config({
        "seed": 0,
        "teacher": {"neurons": 3, "seed": 1},
        "student": {"width": m, "input_dim": 100, "activation": "relu",
                    "scale_rule": {"kind": rule, "value": 1.0},
                    "init": {"std": 1.0, "seed": 0}, "wrappers": [],
                    "linearized": linearized},
        "data": {"n_train": 500, "n_test": 2000, "seed": 0},
        "flow": {"budget": 2500, "integrator": "euler", "step": "auto",
                 "step_factor": 1.0, "record": "log",
                 "stop": {"grad_norm_rel": 1e-7}},
        "diagnostics": {"enabled": False},
    })


@pytest.mark.slow
def test_width_scaling_separates_regimes():
    repeats = 5
    table = {}
    for rule in ("inv_width", "inv_sqrt_width"):
        for m in (64, 256, 1024):
            losses = []
            for rep in range(repeats):
                data_seed, init_seed, _ = _derive_seeds(0, rep)
                losses.append(run_single(_width_config(m, rule), data_seed, init_seed)["test_loss"])
            table[(rule, m)] = float(np.mean(losses))
    factor = table[("inv_sqrt_width", 1024)] / table[("inv_width", 1024)]

    # at the largest width the lazy run matches its linearized twin
    rels = []
    for rep in range(2):
        data_seed, init_seed, _ = _derive_seeds(0, rep)
        nl = run_single(_width_config(1024, "inv_sqrt_width"), data_seed, init_seed)["test_loss"]
        lin = run_single(_width_config(1024, "inv_sqrt_width", linearized=True),
                         data_seed, init_seed)["test_loss"]
        rels.append(abs(nl - lin) / lin)
    ok = factor >= 2.0 and max(rels) <= 0.15
    report(
        "width scaling regimes",
        ok,
        f"test-loss factor at m=1024: {factor:.1f} (>= 2); "
        f"lazy vs linearized rel {max(rels):.3f} (<= 0.15); table {table}",
    )


# ---------------------------------------------------------------------------
# 8. SGD on the population loss: lazy plateau vs feature learning
# ---------------------------------------------------------------------------
@pytest.mark.slow
def test_sgd_population_regimes():
    d, m_eff = 100, 50
    teacher, wt = make_teacher(TeacherSpec(dim=d, neurons=3, seed=1))
    sampler = teacher_sampler(teacher, wt, d)
    base = lf.TwoLayerNet(width=m_eff // 2, input_dim=d)
    runs = {}
    for tau in (0.1, 3.0):
        student = lf.SymmetrizedModel(base)
        w0 = student.paired_params(base.random_params(np.random.default_rng(77), tau))
        cfg = lf.FlowConfig(n_steps=30000, step="auto", step_factor=1.0,
                            record="log", seed=99)
        traj = lf.run_sgd(student, w0, sampler, batch_size=200, config=cfg,
                          heldout_size=2000)
        runs[tau] = (traj, student, w0)
    lazy, nonlazy = runs[3.0][0], runs[0.1][0]
    gap = lf.regime_plateau_gap(lazy, nonlazy)

    # tangent-feature least squares; the symmetrized tangent class equals the
    # base net's tangent class (the base offset lies in the feature span for
    # the 2-homogeneous relu net), which halves the feature count
    traj3, student3, w03 = runs[3.0]
    w_a = w03[: base.num_params]
    rng = np.random.default_rng(1234)
    x_fit, y_fit = sampler(rng, 25000)
    w_lsq = lf.tangent_least_squares(base, w_a, x_fit, y_fit, chunk=1000)
    tangent_base = lf.linearize_at(base, w_a)
    x_eval, y_eval = sampler(np.random.default_rng(4321), 20000)
    eval_space = lf.EvaluationSet(x_eval, y_eval)
    eval_loss = lf.SquareLoss(y_eval)
    lsq_pop = eval_loss.value(tangent_base.evaluate(w_lsq, eval_space), eval_space)
    sgd_pop = eval_loss.value(student3.evaluate(traj3.final_params, eval_space), eval_space)
    lsq_rel = abs(sgd_pop - lsq_pop) / lsq_pop

    nonlazy_improved = nonlazy.final_loss < 0.1 * nonlazy.loss[0]
    ok = gap["gap_ratio"] >= 5.0 and lsq_rel <= 0.20 and nonlazy_improved
    report(
        "sgd population regimes",
        ok,
        f"plateau ratio {gap['gap_ratio']:.1f} (>= 5), lazy vs tangent least squares "
        f"{lsq_rel:.3f} (<= 0.20), small-scale run reached "
        f"{nonlazy.final_loss / nonlazy.loss[0]:.2e} of initial (< 0.1)",
    )


# ---------------------------------------------------------------------------
# 9. Random-feature kernels converge to the closed forms
# ---------------------------------------------------------------------------
def test_arccos_kernel_convergence():
    spec = lf.ArcCosineKernel.standard_normal(10)
    phis = np.linspace(0, np.pi, 64)
    widths = np.array([16.0, 64.0, 256.0, 1024.0, 4096.0])
    errs = []
    for m in widths.astype(int):
        section = lf.kernel_section(spec, phis, width=m, seeds=range(32))
        errs.append(np.abs(section.realizations.mean(axis=0) - section.k_limit).max())
    slope = lf.fit_loglog_slope(widths, np.array(errs)).slope

    # Monte-Carlo point check at phi = 0 with 10^6 features
    rng = np.random.default_rng(11)
    m = 1_000_000
    x = np.zeros(10)
    x[0] = 1.0
    a = rng.standard_normal((m, 10))
    b = rng.standard_normal(m)
    za = a @ x
    ok = -0.8 <= slope <= -0.3
    details = [f"sup-error slope {slope:.2f} (in [-0.8, -0.3])"]
    for name, samples, exact in (
        ("inner", b**2 * (za > 0), 0.5),
        ("outer", np.maximum(za, 0.0) ** 2, 0.5),
    ):
        mean = samples.mean()
        sem = samples.std(ddof=1) / np.sqrt(m)
        ok &= abs(mean - exact) <= 3 * sem
        details.append(f"{name} kernel at phi=0: {mean:.4f} vs {exact} (3 sem = {3 * sem:.1e})")
    report("arc-cosine kernel convergence", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 10. Scale-criterion laws
# ---------------------------------------------------------------------------
def test_scale_criterion_laws():
    rng = np.random.default_rng(0)
    base = lf.TwoLayerNet(width=6, input_dim=3)
    sym = lf.SymmetrizedModel(base)
    w0 = sym.paired_params(base.random_params(rng, 1.0))
    es = lf.EvaluationSet(rng.standard_normal((8, 3)), rng.standard_normal((8, 1)))
    loss = lf.SquareLoss(es.targets)
    products = []
    for alpha in (2.0, 8.0, 32.0):
        kappa = lf.inverse_relative_scale(lf.ScaledModel(sym, alpha), w0, loss, es,
                                          directions=16, seed=0)
        products.append(alpha * kappa)
    const_rel = (max(products) - min(products)) / max(products)

    d, n = 10, 20
    teacher, wt = make_teacher(TeacherSpec(dim=d, seed=2))
    x = sample_sphere(np.random.default_rng(5), n, d)
    y = teacher.evaluate(wt, lf.EvaluationSet(x))
    data = lf.EvaluationSet(x, y)
    sq = lf.SquareLoss(y)
    widths = [64, 256, 1024]
    means = []
    for m in widths:
        kappas = []
        for seed in range(10):
            net = lf.TwoLayerNet(width=m, input_dim=d, activation=lf.softplus(),
                                 scale_rule="inv_sqrt_width")
            w = net.random_params(np.random.default_rng(1000 + seed), 1.0)
            kappas.append(lf.inverse_relative_scale(net, w, sq, data, directions=8, seed=seed))
        means.append(float(np.mean(kappas)))
    slope = lf.fit_loglog_slope(np.array(widths, float), np.array(means)).slope
    ok = const_rel < 1e-6 and slope <= -0.3 and means[0] > means[1] > means[2]
    report(
        "scale criterion laws",
        ok,
        f"alpha * kappa constant to {const_rel:.1e} (< 1e-6); "
        f"width slope {slope:.2f} (<= -0.3), means {['%.4f' % v for v in means]}",
    )


# ---------------------------------------------------------------------------
# 11. Linearization indicators
# ---------------------------------------------------------------------------
def _fig1_cfg(tau):
    return validate_config({
        "seed": 0,
        "teacher": {"neurons": 3, "seed": 5},
        "student": {"width": 20, "input_dim": 2, "activation": "relu",
                    "init": {"std": tau, "seed": 11}, "wrappers": ["symmetrized"]},
        "data": {"n_train": 15, "n_test": 500, "seed": 7},
        "flow": {"budget": 60000, "integrator": "euler", "step": "auto",
                 "step_factor": 1.0, "record": "log", "stop": {"loss": 5e-6}},
        "diagnostics": {"enabled": False},
    })


def test_linearization_indicators(scale_sweep):
    # tangent model's own flow mapped back to parameters: signs cannot flip
    teacher, wt = make_teacher(TeacherSpec(dim=2, neurons=3, seed=5))
    rng = np.random.default_rng(7)
    x = sample_sphere(rng, 15, 2)
    y = teacher.evaluate(wt, lf.EvaluationSet(x))
    data = lf.EvaluationSet(x, y)
    base = lf.TwoLayerNet(width=10, input_dim=2)
    student = lf.SymmetrizedModel(base)
    w0 = student.paired_params(base.random_params(np.random.default_rng(11), 2.0))
    cfg = lf.FlowConfig(alpha=1000.0, n_steps=20000, step="auto", step_factor=1.0,
                        integrator="euler", record="log")
    traj_lin = lf.integrate_linearized_flow(student, lf.SquareLoss(y), w0, data, cfg)
    stab_tangent = lf.stability_of_activations(student, w0, traj_lin.final_params, x)

    rows = {tau: run_single(_fig1_cfg(tau), 7, 11) for tau in (0.1, 2.0)}
    stab_small, stab_large = rows[0.1]["stability"], rows[2.0]["stability"]
    moved_small, moved_large = rows[0.1]["dist_init_rel"], rows[2.0]["dist_init_rel"]
    train_ok = rows[0.1]["train_loss"] < 1e-4 and rows[2.0]["train_loss"] < 1e-4

    gaps = []
    model, w_init = scale_sweep["model"], scale_sweep["w_init"]
    tangent = lf.linearize_at(model, w_init)
    x_test = sample_sphere(np.random.default_rng(33), 50, 10)
    for alpha in (10.0, 100.0, 1000.0):
        traj, traj_l = scale_sweep["runs"][alpha]
        gaps.append(lf.generalization_gap(model, tangent, traj.final_params,
                                          traj_l.final_params, alpha, x_test))
    ok = (
        stab_tangent == 1.0
        and stab_large > stab_small
        and train_ok
        and moved_small > 0.5 > 0.1 > moved_large
        and gaps[0] > gaps[1] > gaps[2]
    )
    report(
        "linearization indicators",
        ok,
        f"tangent-flow stability {stab_tangent} (= 1.0), stability {stab_large:.3f} > "
        f"{stab_small:.3f}, movement {moved_small:.2f} vs {moved_large:.3f}, "
        f"gap sequence {['%.1e' % g for g in gaps]} strictly decreasing",
    )


# ---------------------------------------------------------------------------
# 12. Byte-identical reruns
# ---------------------------------------------------------------------------
def test_rerun_reproduces_results_csv(tmp_path):
    cfg = {
        "seed": 3,
        "teacher": {"neurons": 3, "seed": 1},
        "student": {"width": 6, "input_dim": 3, "activation": "relu",
                    "init": {"std": 1.0, "seed": 2}, "wrappers": ["symmetrized"]},
        "data": {"n_train": 10, "n_test": 40, "seed": 3},
        "flow": {"budget": 60, "record": "log"},
        "sweep": {"variable": "tau", "grid": [0.5, 2.0], "repeats": 2},
        "diagnostics": {"enabled": True, "directions": 4},
    }
    run_sweep(cfg, tmp_path / "one")
    run_sweep(cfg, tmp_path / "two")
    same = (tmp_path / "one" / "results.csv").read_bytes() == (tmp_path / "two" / "results.csv").read_bytes()
    report("deterministic reruns", same, "results.csv byte-identical across reruns")
