"""Tangent models, tangent kernels and their spectra.

The tangent model anchored at w0 evaluates the first-order expansion
``h(w0) + Dh(w0)(w - w0)`` and implements the same model interface as its
base, with a Jacobian that is constant in w.  The tangent kernel is the Gram
operator Dh(w) Dh(w)^T on the weighted output space; its matrix is assembled
in an orthonormal basis of that space, which makes it symmetric positive
semidefinite with the operator's eigenvalues.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .model import (
    DENSE_JACOBIAN_LIMIT,
    EvaluationSet,
    JacobianOperator,
    _ShiftedOutputJacobian,
)

DENSE_EIG_LIMIT = 2000
RANK_REL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TangentModel:
    """Affine model: base(anchor) + Dbase(anchor) applied to (w - anchor).

    The anchor output and Jacobian are computed lazily per evaluation set and
    cached, so the tangent model can be evaluated on data it has not seen at
    construction (test sets included).
    """

    base: object
    anchor: np.ndarray

    def __post_init__(self):
        anchor = np.asarray(self.anchor, dtype=float)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "_jac_cache", weakref.WeakKeyDictionary())

    @property
    def num_params(self) -> int:
        return self.base.num_params

    @property
    def output_dim(self) -> int:
        return self.base.output_dim

    @property
    def homogeneity(self) -> float | None:
        return None

    def anchor_jacobian(self, data: EvaluationSet) -> JacobianOperator:
        cache = self._jac_cache
        if data not in cache:
            cache[data] = self.base.jacobian(self.anchor, data)
        return cache[data]

    def evaluate(self, w, data):
        jac = self.anchor_jacobian(data)
        return jac.output + jac.apply(np.asarray(w, dtype=float) - self.anchor)

    def jacobian(self, w, data):
        jac = self.anchor_jacobian(data)
        return _ShiftedOutputJacobian(jac, self.evaluate(w, data))

    def describe(self) -> str:
        return f"tangent({self.base.describe()})"


def linearize_at(model, w0: np.ndarray) -> TangentModel:
    return TangentModel(model, np.array(w0, dtype=float))


# ---------------------------------------------------------------------------
# Operator norms by power iteration
# ---------------------------------------------------------------------------
def operator_norm(op, tol: float = 1e-8, max_iter: int = 2000, seed: int = 0) -> float:
    """Largest singular value of an apply/adjoint operator pair.

    Power iteration on the normal operator; the adjoint is assumed to include
    the output-space weights, so the result is the norm into the weighted
    space.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.num_params)
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0.0
    v /= nv
    lam_old = 0.0
    lam = 0.0
    for _ in range(max_iter):
        av = op.adjoint(op.apply(v))
        lam = float(v @ av)
        na = np.linalg.norm(av)
        if na == 0:
            return 0.0
        v = av / na
        if abs(lam - lam_old) <= tol * max(abs(lam), 1e-300):
            break
        lam_old = lam
    return float(np.sqrt(max(lam, 0.0)))


# ---------------------------------------------------------------------------
# Tangent kernel matrix and spectrum
# ---------------------------------------------------------------------------
def tangent_kernel(model, w: np.ndarray, data: EvaluationSet, chunk: int | None = None) -> np.ndarray:
    """Gram matrix of output gradients in the weighted orthonormal basis.

    Entry ((i,c),(j,c')) is sqrt(w_i w_j) times the parameter-space inner
    product of the gradients of output (i,c) and output (j,c').  Row blocks
    are assembled in chunks so that wide models stay under the dense budget.
    """
    n, k, p = data.n, model.output_dim, model.num_params
    if chunk is None:
        chunk = max(1, min(n, DENSE_JACOBIAN_LIMIT // max(1, k * p)))
    sqrt_w = np.repeat(np.sqrt(data.weights), k)
    blocks = []
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        jac = model.jacobian(w, data.subset(idx))
        blocks.append(jac.dense())
    j_flat = np.vstack(blocks) * sqrt_w[:, None]
    kernel = j_flat @ j_flat.T
    return 0.5 * (kernel + kernel.T)


@dataclass
class SpectrumResult:
    """Descending eigenvalues of a kernel matrix and singular-value summaries.

    ``sigma_min`` is the square root of the smallest eigenvalue (clipped at
    zero); it is positive only when the Jacobian is surjective onto the
    output space.  ``sigma_min_nonzero`` uses the smallest eigenvalue above
    the relative rank tolerance.
    """

    eigenvalues: np.ndarray
    normalized: np.ndarray
    sigma_min: float
    sigma_min_nonzero: float
    rank: int
    partial: bool = False


def kernel_spectrum(kernel: np.ndarray, rel_tol: float = RANK_REL_TOL) -> SpectrumResult:
    kernel = np.asarray(kernel, dtype=float)
    if not np.all(np.isfinite(kernel)):
        raise ValueError("kernel matrix contains non-finite entries")
    dim = kernel.shape[0]
    partial = False
    if dim <= DENSE_EIG_LIMIT:
        try:
            eig = scipy.linalg.eigh(kernel, eigvals_only=True)
        except scipy.linalg.LinAlgError as exc:  # pragma: no cover
            raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
        eig = eig[::-1]
    else:
        top = min(dim - 1, 512)
        try:
            eig = scipy.sparse.linalg.eigsh(kernel, k=top, which="LA", return_eigenvectors=False)
        except scipy.sparse.linalg.ArpackNoConvergence as exc:  # pragma: no cover
            raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
        eig = np.sort(eig)[::-1]
        partial = True
    lam_max = float(eig[0]) if eig.size else 0.0
    if lam_max <= 0:
        normalized = np.zeros_like(eig)
        return SpectrumResult(eig, normalized, 0.0, 0.0, 0, partial)
    normalized = eig / lam_max
    cutoff = rel_tol * lam_max
    above = eig[eig > cutoff]
    rank = int(above.size)
    sigma_min_nonzero = float(np.sqrt(above[-1])) if rank else 0.0
    if partial:
        sigma_min = 0.0  # smallest eigenvalue not resolved by the partial solver
    else:
        sigma_min = float(np.sqrt(max(float(eig[-1]), 0.0)))
    return SpectrumResult(np.asarray(eig, dtype=float), normalized, sigma_min, sigma_min_nonzero, rank, partial)


def spectrum_of_model(model, w: np.ndarray, data: EvaluationSet) -> SpectrumResult:
    return kernel_spectrum(tangent_kernel(model, w, data))
