"""Jacobian and Hessian of the drift map, and the tensor contraction.

Analytic derivatives supplied by the model are used when present; otherwise
central finite differences are taken on the drift-map formula, perturbing
each coordinate independently (the perturbed points leave the simplex, which
the kernel formulas tolerate by construction).

Because kernel rows sum to 1 identically in ``m``, the drift map conserves
total mass, so Jacobian columns sum to 1 and the Hessian sums to zero over
its first index.  These identities hold for the analytic forms and, up to
truncation error, for the finite-difference ones.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import PopulationModel, as_occupancy, phi1

FD_STEP_JACOBIAN = 1e-5
FD_STEP_HESSIAN = 1e-4


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                step: float = FD_STEP_JACOBIAN) -> np.ndarray:
    """Central-difference Jacobian of ``f: R^n -> R^p`` at ``x``, shape (p, n)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        cols.append((np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def fd_hessian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
               step: float = FD_STEP_HESSIAN) -> np.ndarray:
    """Second-order central-difference Hessian of ``f: R^n -> R^p``.

    Returns shape ``(p, n, n)``, symmetric in the last two indices (the
    off-diagonal stencil is evaluated once per unordered pair and mirrored).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    f0 = np.atleast_1d(f(x))
    p = f0.size
    h = np.empty((p, n, n))
    eye = np.eye(n) * step
    for k in range(n):
        h[:, k, k] = (np.atleast_1d(f(x + 2 * eye[k])) - 2 * f0
                      + np.atleast_1d(f(x - 2 * eye[k]))) / (4 * step**2)
        for l in range(k + 1, n):
            v = (np.atleast_1d(f(x + eye[k] + eye[l]))
                 - np.atleast_1d(f(x + eye[k] - eye[l]))
                 - np.atleast_1d(f(x - eye[k] + eye[l]))
                 + np.atleast_1d(f(x - eye[k] - eye[l]))) / (4 * step**2)
            h[:, k, l] = v
            h[:, l, k] = v
    return h


def jacobian_phi1(model: PopulationModel, m) -> np.ndarray:
    """Jacobian ``A`` of the drift map at ``m``: ``A[j, k] = d phi1_j / d m_k``.

    Uses the model's analytic Jacobian when available, central differences
    with step ``1e-5`` otherwise.
    """
    m = as_occupancy(m)
    if model.jacobian is not None:
        a = np.asarray(model.jacobian(m), dtype=float)
        if a.shape != (model.dim, model.dim):
            raise ValueError(f"analytic Jacobian has shape {a.shape}")
        return a
    return fd_jacobian(lambda x: phi1(model, x, validate=False), m)


def hessian_phi1(model: PopulationModel, m) -> np.ndarray:
    """Hessian ``B`` of the drift map at ``m``: ``B[j, k, l] = d2 phi1_j / dm_k dm_l``.

    Uses the model's analytic Hessian when available, second-order central
    differences with step ``1e-4`` otherwise.
    """
    m = as_occupancy(m)
    if model.hessian is not None:
        b = np.asarray(model.hessian(m), dtype=float)
        if b.shape != (model.dim,) * 3:
            raise ValueError(f"analytic Hessian has shape {b.shape}")
        return b
    return fd_hessian(lambda x: phi1(model, x, validate=False), m)


def contract(tensor: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Tensor-matrix contraction ``(P . Q)_i = sum_jk P[i, j, k] Q[j, k]``."""
    tensor = np.asarray(tensor, dtype=float)
    matrix = np.asarray(matrix, dtype=float)
    if tensor.ndim != 3 or tensor.shape[1:] != matrix.shape:
        raise ValueError(
            f"cannot contract tensor {tensor.shape} with matrix {matrix.shape}")
    return np.einsum("ijk,jk->i", tensor, matrix)
