"""Random-feature tangent kernels of relu two-layer nets and their
infinite-width arc-cosine limits.

The tangent kernel of a relu two-layer net with 1/sqrt(width) output scaling
splits into one component per layer:

    K_m^inner(x, x') = (1/m) sum_j (x . x') b_j^2 1[a_j.x > 0] 1[a_j.x' > 0]
    K_m^outer(x, x') = (1/m) sum_j relu(a_j . x) relu(a_j . x')

For rotation-invariant weight distributions these converge, as the width
grows, to arc-cosine kernels with closed forms in the angle phi between the
inputs:

    K_inner = (x . x') E[b^2] (pi - phi) / (2 pi)
    K_outer = ||x|| ||x'|| E[||a||^2] ((pi - phi) cos phi + sin phi) / (2 pi d)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ANGLE_CLAMP = 1e-12


@dataclass(frozen=True)
class ArcCosineKernel:
    """Moments of the weight distribution entering the limit kernels.

    ``outer_moment`` is E[b^2] for the scalar output weights and
    ``inner_sq_norm`` is E[||a||^2] for the hidden weight vectors; for
    standard normal entries these are 1 and d.
    """

    outer_moment: float
    inner_sq_norm: float
    dim: int

    def __post_init__(self):
        if self.outer_moment <= 0 or self.inner_sq_norm <= 0:
            raise ValueError("weight moments must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @classmethod
    def standard_normal(cls, dim: int) -> "ArcCosineKernel":
        return cls(1.0, float(dim), dim)


def angle_between(x: np.ndarray, y: np.ndarray) -> float:
    """Angle in [0, pi], clamped against rounding at the endpoints."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("angle undefined for a zero vector")
    c = float(x @ y) / (nx * ny)
    return float(np.arccos(np.clip(c, -1.0 + ANGLE_CLAMP * 0, 1.0))) if c >= -1 else np.pi


def limit_kernel(spec: ArcCosineKernel, x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Closed-form infinite-width kernels (inner-layer, outer-layer, total)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("limit kernel undefined for a zero vector")
    c = np.clip(float(x @ y) / (nx * ny), -1.0, 1.0)
    phi = float(np.arccos(c))
    k_inner = float(x @ y) * spec.outer_moment * (np.pi - phi) / (2 * np.pi)
    k_outer = (
        nx * ny * spec.inner_sq_norm * ((np.pi - phi) * np.cos(phi) + np.sin(phi))
        / (2 * np.pi * spec.dim)
    )
    return k_inner, k_outer, k_inner + k_outer


def random_kernel(
    inner: np.ndarray, outer: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[float, float]:
    """Width-m random-feature kernels of a relu net at the given weights.

    ``inner`` has shape (m, d), ``outer`` shape (m,).  The relu derivative at
    exactly zero is taken as 0, matching the model module.
    """
    inner = np.asarray(inner, float)
    outer = np.asarray(outer, float)
    m = inner.shape[0]
    zx = inner @ np.asarray(x, float)
    zy = inner @ np.asarray(y, float)
    k_a = float(x @ y) * float(np.sum(outer**2 * (zx > 0) * (zy > 0))) / m
    k_b = float(np.sum(np.maximum(zx, 0) * np.maximum(zy, 0))) / m
    return k_a, k_b


def random_kernel_grid(
    inner: np.ndarray, outer: np.ndarray, x: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized random kernels of x against each row of ys."""
    inner = np.asarray(inner, float)
    outer = np.asarray(outer, float)
    m = inner.shape[0]
    zx = inner @ np.asarray(x, float)  # (m,)
    zy = inner @ np.asarray(ys, float).T  # (m, g)
    dots = ys @ x  # (g,)
    k_a = dots * ((outer**2 * (zx > 0)) @ (zy > 0)) / m
    k_b = (np.maximum(zx, 0) @ np.maximum(zy, 0)) / m
    return k_a, k_b


def sphere_section(dim: int, phis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fixed unit vector and its rotations by phi in a fixed 2-plane."""
    phis = np.asarray(phis, float)
    if np.any(phis < 0) or np.any(phis > np.pi):
        raise ValueError("phi grid must lie in [0, pi]")
    x = np.zeros(dim)
    x[0] = 1.0
    ys = np.zeros((phis.size, dim))
    ys[:, 0] = np.cos(phis)
    ys[:, 1] = np.sin(phis)
    return x, ys


@dataclass
class KernelSection:
    """Limit and random kernels along a sphere section, plot-ready."""

    phis: np.ndarray
    k_limit: np.ndarray
    k_inner: np.ndarray
    k_outer: np.ndarray
    realizations: np.ndarray  # (n_seeds, n_phi), total random kernel per seed
    seeds: list

    def to_csv(self, path):
        with open(path, "w") as fh:
            header = ["phi", "K_limit", "K_a", "K_b"] + [f"K_m_seed{s}" for s in self.seeds]
            fh.write(",".join(header) + "\n")
            for i, phi in enumerate(self.phis):
                row = [repr(float(phi)), repr(float(self.k_limit[i])),
                       repr(float(self.k_inner[i])), repr(float(self.k_outer[i]))]
                row += [repr(float(self.realizations[j, i])) for j in range(len(self.seeds))]
                fh.write(",".join(row) + "\n")


def kernel_section(
    spec: ArcCosineKernel,
    phis: np.ndarray,
    width: int = 1000,
    seeds=range(10),
) -> KernelSection:
    """Limit kernel and width-``width`` realizations along a sphere section.

    Weights are standard normal scaled to match the spec's moments: outer
    entries have variance ``outer_moment`` and inner vectors have expected
    squared norm ``inner_sq_norm``.
    """
    phis = np.asarray(phis, float)
    x, ys = sphere_section(spec.dim, phis)
    k_inner = np.empty(phis.size)
    k_outer = np.empty(phis.size)
    for i in range(phis.size):
        k_inner[i], k_outer[i], _ = limit_kernel(spec, x, ys[i])
    seeds = list(seeds)
    realizations = np.empty((len(seeds), phis.size))
    inner_std = np.sqrt(spec.inner_sq_norm / spec.dim)
    outer_std = np.sqrt(spec.outer_moment)
    for j, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        inner = inner_std * rng.standard_normal((width, spec.dim))
        outer = outer_std * rng.standard_normal(width)
        k_a, k_b = random_kernel_grid(inner, outer, x, ys)
        realizations[j] = k_a + k_b
    return KernelSection(phis, k_inner + k_outer, k_inner, k_outer, realizations, seeds)
