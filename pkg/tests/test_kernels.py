import numpy as np
import pytest

from lazyflow import (
    ArcCosineKernel,
    angle_between,
    kernel_section,
    limit_kernel,
    random_kernel,
    random_kernel_grid,
    sphere_section,
)


def unit(v):
    return v / np.linalg.norm(v)


def test_limit_kernel_coincident_points():
    spec = ArcCosineKernel.standard_normal(10)
    x = unit(np.arange(1.0, 11.0))
    ka, kb, k = limit_kernel(spec, x, x)
    assert ka == pytest.approx(0.5, abs=1e-12)
    assert kb == pytest.approx(0.5, abs=1e-12)
    assert k == pytest.approx(1.0, abs=1e-12)


def test_limit_kernel_montecarlo_oracle_at_phi_zero():
    # 10^6 random features against the closed form, within 3 standard errors
    d = 10
    spec = ArcCosineKernel.standard_normal(d)
    x = np.zeros(d)
    x[0] = 1.0
    rng = np.random.default_rng(11)
    m = 1_000_000
    a = rng.standard_normal((m, d))
    b = rng.standard_normal(m)
    za = a @ x
    samples_a = b**2 * (za > 0)          # terms of K_m^(a) at x = x'
    samples_b = np.maximum(za, 0.0) ** 2  # terms of K_m^(b)
    for samples, exact in ((samples_a, 0.5), (samples_b, 0.5)):
        mean = samples.mean()
        sem = samples.std(ddof=1) / np.sqrt(m)
        assert abs(mean - exact) <= 3 * sem


def test_limit_kernel_orthogonal_and_antipodal():
    d = 10
    spec = ArcCosineKernel.standard_normal(d)
    x = np.zeros(d)
    x[0] = 1.0
    y = np.zeros(d)
    y[1] = 1.0
    ka, kb, _ = limit_kernel(spec, x, y)
    assert ka == pytest.approx(0.0, abs=1e-15)
    assert kb == pytest.approx(1.0 / (2 * np.pi), abs=1e-12)
    ka, kb, _ = limit_kernel(spec, x, -x)
    assert abs(ka) < 1e-15
    assert abs(kb) < 1e-15


def test_limit_kernel_montecarlo_oracle_at_right_angle():
    d = 10
    spec = ArcCosineKernel.standard_normal(d)
    x = np.zeros(d)
    x[0] = 1.0
    y = np.zeros(d)
    y[1] = 1.0
    rng = np.random.default_rng(21)
    m = 1_000_000
    a = rng.standard_normal((m, d))
    samples_b = np.maximum(a @ x, 0.0) * np.maximum(a @ y, 0.0)
    mean = samples_b.mean()
    sem = samples_b.std(ddof=1) / np.sqrt(m)
    assert abs(mean - 1.0 / (2 * np.pi)) <= 3 * sem


def test_limit_kernel_rejects_zero_vector():
    spec = ArcCosineKernel.standard_normal(3)
    with pytest.raises(ValueError):
        limit_kernel(spec, np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        angle_between(np.zeros(3), np.ones(3))


def test_random_kernel_single_neuron():
    x = np.array([1.0, 0.5])
    y = np.array([0.8, -0.1])
    a = np.array([[1.0, 0.2]])  # a.x > 0 and a.y > 0
    b = np.array([1.0])
    ka, kb = random_kernel(a, b, x, y)
    assert ka == pytest.approx(float(x @ y), abs=1e-15)
    assert kb == pytest.approx(float(a[0] @ x) * float(a[0] @ y), rel=1e-12)


def test_random_kernel_grid_matches_pointwise(rng):
    d, m, g = 4, 30, 9
    a = rng.standard_normal((m, d))
    b = rng.standard_normal(m)
    x = unit(rng.standard_normal(d))
    ys = rng.standard_normal((g, d))
    ka_g, kb_g = random_kernel_grid(a, b, x, ys)
    for i in range(g):
        ka, kb = random_kernel(a, b, x, ys[i])
        assert ka_g[i] == pytest.approx(ka, rel=1e-12, abs=1e-14)
        assert kb_g[i] == pytest.approx(kb, rel=1e-12, abs=1e-14)


def test_kernel_homogeneity_in_input_norm(rng):
    spec = ArcCosineKernel.standard_normal(5)
    x = rng.standard_normal(5)
    y = rng.standard_normal(5)
    ka, kb, _ = limit_kernel(spec, x, y)
    for c in (0.3, 4.0):
        ka_c, kb_c, _ = limit_kernel(spec, c * x, y)
        assert ka_c == pytest.approx(c * ka, rel=1e-12)
        assert kb_c == pytest.approx(c * kb, rel=1e-12)


def test_limit_kernel_gram_is_psd(rng):
    spec = ArcCosineKernel.standard_normal(5)
    pts = rng.standard_normal((12, 5))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    gram = np.empty((12, 12))
    for i in range(12):
        for j in range(12):
            gram[i, j] = limit_kernel(spec, pts[i], pts[j])[2]
    eigs = np.linalg.eigvalsh(gram)
    assert eigs.min() >= -1e-8 * np.trace(gram)


def test_section_grid_consistency():
    spec = ArcCosineKernel.standard_normal(10)
    phis = np.linspace(0, np.pi, 17)
    section = kernel_section(spec, phis, width=64, seeds=range(2))
    x, ys = sphere_section(10, phis)
    assert section.k_limit[0] == pytest.approx(limit_kernel(spec, x, x)[2], abs=1e-12)
    # evaluating the closed form on the grid: strictly decreasing on [0, 3pi/4],
    # an interior negative minimum, and an exact return to zero at pi
    head = section.k_limit[phis <= 3 * np.pi / 4]
    assert np.all(np.diff(head) < 0)
    assert section.k_limit.min() < 0
    assert abs(section.k_limit[-1]) < 1e-12
    assert section.realizations.shape == (2, 17)


def test_section_rejects_bad_grid():
    spec = ArcCosineKernel.standard_normal(4)
    with pytest.raises(ValueError):
        sphere_section(4, np.array([-0.1, 0.5]))


def test_random_kernel_mean_tracks_limit(rng):
    # unbiasedness: the seed-averaged realization approaches the closed form
    spec = ArcCosineKernel.standard_normal(10)
    phis = np.linspace(0, np.pi, 16)
    section = kernel_section(spec, phis, width=4096, seeds=range(20))
    mean = section.realizations.mean(axis=0)
    sem = section.realizations.std(axis=0, ddof=1) / np.sqrt(20)
    assert np.all(np.abs(mean - section.k_limit) <= 5 * sem + 1e-3)


def test_section_realizations_concentrate(rng):
    # width-1000 realizations visually track the limit curve
    spec = ArcCosineKernel.standard_normal(10)
    phis = np.linspace(0, np.pi, 32)
    section = kernel_section(spec, phis, width=1000, seeds=range(10))
    max_dev = np.abs(section.realizations - section.k_limit).max(axis=1)
    assert np.sum(max_dev < 0.1) >= 9
