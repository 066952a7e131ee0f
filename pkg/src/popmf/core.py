"""Occupancy vectors, transition kernels and the mean-field drift map.

A population model is described by a state-dependent stochastic matrix
``K(m)``: when the occupancy measure of the system is ``m``, an object in
state ``i`` jumps to state ``j`` with probability ``K[i, j](m)``.  The
mean-field (drift) map is ``phi1(m) = m @ K(m)`` and the mean-field
trajectory is its iteration.

Kernels must be given by formulas that remain valid in a neighbourhood of
the unit simplex, with rows summing to 1 identically in ``m``.  This is what
allows finite-difference derivatives to step slightly off the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SIMPLEX_ATOL = 1e-9


class PopmfError(Exception):
    """Base class for all errors raised by this package."""


class SimplexError(PopmfError):
    """A vector failed the occupancy-vector (unit simplex) invariants."""


class KernelError(PopmfError):
    """A kernel evaluation violated row-stochasticity (model-authoring bug)."""


def as_occupancy(m, *, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate ``m`` as an occupancy vector and return it as a read-only array.

    Entries must lie in [0, 1] and sum to 1, both within ``atol``.  The input
    is never renormalized; use :func:`renormalize` for that, explicitly.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 1:
        raise SimplexError(f"occupancy vector must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise SimplexError("occupancy vector has non-finite entries")
    if np.any(a < -atol) or np.any(a > 1 + atol):
        raise SimplexError(f"entries outside [0, 1]: {a}")
    s = a.sum()
    if abs(s - 1.0) > atol:
        raise SimplexError(f"entries sum to {s!r}, expected 1 within {atol}")
    a.flags.writeable = False
    return a


def renormalize(m) -> np.ndarray:
    """Rescale a nonnegative vector to sum 1 (explicit, never done silently)."""
    a = np.array(m, dtype=float)
    s = a.sum()
    if s <= 0 or not np.isfinite(s):
        raise SimplexError(f"cannot renormalize vector with sum {s!r}")
    a /= s
    a.flags.writeable = False
    return a


def tangent_basis(n: int) -> np.ndarray:
    """Orthonormal basis of the simplex tangent subspace {x : sum(x) = 0}.

    Returns an ``n x (n-1)`` matrix ``Q`` with orthonormal columns spanning
    the mean-zero subspace, so that ``Q.T @ A @ Q`` is the restriction of a
    mass-conserving linear map to that subspace.
    """
    _, _, vt = np.linalg.svd(np.ones((1, n)))
    return vt[1:].T.copy()


@dataclass(frozen=True)
class TransitionKernel:
    """State-dependent one-step transition matrix of a single object.

    ``func`` maps an occupancy vector (length ``dim``) to a ``dim x dim``
    row-stochastic matrix.  Rows must sum to 1 identically in ``m`` (also
    slightly off the simplex); entries must be probabilities for ``m`` on
    the simplex.  ``func`` must be a pure function.

    Kernels that broadcast, mapping a batch ``(r, dim)`` of occupancies to
    ``(r, dim, dim)`` matrices (the built-in models do), let the simulator
    evaluate many population states in one call; plain scalar kernels are
    looped over transparently.
    """

    dim: int
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, m, *, validate: bool = True) -> np.ndarray:
        k = np.asarray(self.func(np.asarray(m, dtype=float)), dtype=float)
        if k.shape != (self.dim, self.dim):
            raise KernelError(
                f"kernel returned shape {k.shape}, expected {(self.dim, self.dim)}")
        if validate and abs(k.sum(axis=1) - 1.0).max() > SIMPLEX_ATOL:
            raise KernelError(f"kernel rows sum to {k.sum(axis=1)}, expected 1")
        return k

    def eval_batch(self, points: np.ndarray) -> np.ndarray:
        """Kernel at each row of ``points`` (r, dim); result shape (r, dim, dim).

        Uses the kernel's own broadcasting when it produces the right shape,
        falling back to a per-row loop otherwise.  Row-stochasticity is
        validated either way.
        """
        points = np.asarray(points, dtype=float)
        r = points.shape[0]
        expected = (r, self.dim, self.dim)
        k = None
        try:
            candidate = np.asarray(self.func(points), dtype=float)
            if candidate.shape == expected:
                k = candidate
        except Exception:
            k = None
        if k is None:
            k = np.stack([self(row, validate=False) for row in points])
        rows = k.sum(axis=-1)
        if np.abs(rows - 1.0).max() > SIMPLEX_ATOL:
            worst = np.unravel_index(np.argmax(np.abs(rows - 1.0)), rows.shape)
            raise KernelError(
                f"kernel row sums deviate from 1 (worst {rows[worst]} at "
                f"occupancy {points[worst[0]]})")
        return k


@dataclass(frozen=True)
class PopulationModel:
    """A synchronous population model: kernel plus optional analytic derivatives.

    ``jacobian(m)`` and ``hessian(m)``, when supplied, are the first and
    second unconstrained derivatives of the drift map ``phi1``: shapes
    ``(n, n)`` with entry ``(j, k) = d phi1_j / d m_k`` and ``(n, n, n)``
    with entry ``(j, k, l) = d^2 phi1_j / d m_k d m_l``.

    Instances are immutable and safe to share between threads; the kernel
    must be a pure function of ``m``.
    """

    kernel: TransitionKernel
    state_labels: tuple[str, ...]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    hessian: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "state_labels", tuple(self.state_labels))
        if len(self.state_labels) != self.kernel.dim:
            raise ValueError(
                f"{len(self.state_labels)} state labels for kernel of dimension "
                f"{self.kernel.dim}")

    @property
    def dim(self) -> int:
        return self.kernel.dim


def phi1(model: PopulationModel, m, *, validate: bool = True) -> np.ndarray:
    """One step of the mean-field drift map: ``phi1(m)_j = sum_i m_i K_ij(m)``.

    With ``validate=False`` the simplex check on ``m`` is skipped (the kernel
    row-sum check is kept), which permits evaluation at scaled or perturbed
    vectors, e.g. for finite differences or mass-identity checks.
    """
    if validate:
        m = as_occupancy(m)
    else:
        m = np.asarray(m, dtype=float)
    if m.shape != (model.dim,):
        raise SimplexError(f"expected vector of length {model.dim}, got {m.shape}")
    return m @ model.kernel(m)


def trajectory(model: PopulationModel, m0, t_max: int) -> np.ndarray:
    """Mean-field trajectory ``mu(t+1) = mu(t) K(mu(t))`` for t = 0 .. t_max.

    Returns an array of shape ``(t_max + 1, n)`` whose row ``t`` is ``mu(t)``,
    with ``mu(0) = m0``.
    """
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    mu = as_occupancy(m0)
    out = np.empty((t_max + 1, model.dim))
    out[0] = mu
    for t in range(t_max):
        out[t + 1] = out[t] @ model.kernel(out[t])
    out.flags.writeable = False
    return out
