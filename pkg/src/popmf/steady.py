"""Steady-state refinement: fixed points, stability, and the Lyapunov solve.

When the drift map has a unique exponentially stable attractor ``mu_inf``,
the transient correction coefficients converge: ``V_t -> V_inf`` and
``W_t -> W_inf``, where ``W_inf`` solves the discrete-time Lyapunov equation

    A W A^T - W + Gamma(mu_inf) = 0

and ``V_inf = 1/2 (I - A)^{-1} (B . W_inf)``, with ``A``, ``B`` the Jacobian
and Hessian of the drift map at ``mu_inf``.

Because mass conservation forces ``1^T A = 1^T``, both ``I - A`` and the
vectorized Lyapunov operator are singular on the full space; they are
invertible on the mean-zero subspace, where ``Gamma`` and all recursion
iterates live, and that restriction is what is solved here.  Exponential
stability is equivalently a spectral radius of ``A`` strictly below 1 on
that subspace.

These results additionally assume the N-object chain has a unique
stationary distribution for each N; this library cannot verify that in
general and it remains the caller's obligation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import PopmfError, PopulationModel, as_occupancy, phi1, tangent_basis
from .derivatives import contract, hessian_phi1, jacobian_phi1
from .refined import Functional, functional_correction, RefinementState, gamma

STABILITY_MARGIN = 1e-9
LYAPUNOV_TOL = 1e-13


class MaxIterationsExceeded(PopmfError):
    """Fixed-point iteration failed to converge within the iteration budget."""


class NonConvergent(PopmfError):
    """Spectral radius >= 1 on the tangent subspace: Lyapunov solve refused."""


class Stability(enum.Enum):
    EXPONENTIALLY_STABLE = "ExponentiallyStable"
    MARGINALLY_STABLE = "MarginallyStable"
    NOT_ATTRACTING = "NotAttracting"


@dataclass(frozen=True)
class FixedPointReport:
    mu_inf: np.ndarray
    iterations: int
    residual: float                  # inf-norm of mu - phi1(mu)
    spectral_radius_tangent: float   # largest |eigenvalue| of A on mean-zero subspace
    classification: Stability


@dataclass(frozen=True)
class SteadyRefinement:
    mu_inf: np.ndarray
    v_inf: np.ndarray
    w_inf: np.ndarray


def tangent_spectral_radius(a: np.ndarray) -> float:
    """Largest eigenvalue modulus of a matrix restricted to the mean-zero subspace."""
    a = np.asarray(a, dtype=float)
    q = tangent_basis(a.shape[0])
    return float(np.max(np.abs(np.linalg.eigvals(q.T @ a @ q))))


def classify(spectral_radius: float) -> Stability:
    if spectral_radius < 1.0 - STABILITY_MARGIN:
        return Stability.EXPONENTIALLY_STABLE
    if spectral_radius <= 1.0 + STABILITY_MARGIN:
        return Stability.MARGINALLY_STABLE
    return Stability.NOT_ATTRACTING


def find_fixed_point(model: PopulationModel, m0, tol: float = 1e-12,
                     max_iter: int = 10**6) -> FixedPointReport:
    """Locate a fixed point of the drift map by derivative-free iteration.

    Iterates the averaged map ``m <- (m + phi1(m)) / 2`` until the residual
    ``||phi1(m) - m||_inf`` drops below ``tol``.  Averaging has the same
    fixed points as plain iteration of ``phi1`` and converges whenever plain
    iteration does, but it also handles the oscillatory marginal case
    (tangent eigenvalue -1), where plain iteration stalls at O(t^-1/2) and
    would never meet a small tolerance.  Stability is classified from the
    Jacobian at the located point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    mu = np.array(as_occupancy(m0))
    residual = np.inf
    for it in range(1, max_iter + 1):
        nxt = phi1(model, mu, validate=False)
        residual = float(np.max(np.abs(nxt - mu)))
        if residual < tol:
            rho = tangent_spectral_radius(jacobian_phi1(model, mu))
            return FixedPointReport(
                mu_inf=as_occupancy(mu), iterations=it, residual=residual,
                spectral_radius_tangent=rho, classification=classify(rho))
        mu = 0.5 * (mu + nxt)
    raise MaxIterationsExceeded(
        f"no fixed point within {max_iter} iterations (last residual "
        f"{residual:.3e}); dynamics may be oscillatory or non-attracting, "
        "or try another starting point")


def _reduced(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    return q.T @ a @ q


def _require_stable(a: np.ndarray, who: str) -> float:
    rho = tangent_spectral_radius(a)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise NonConvergent(
            f"{who}: tangent spectral radius {rho:.12f} >= 1 - {STABILITY_MARGIN}; "
            "the fixed point is not exponentially stable")
    return rho


def lyapunov_w(a: np.ndarray, gamma_matrix: np.ndarray, *,
               cross_check: bool = False, max_iter: int = 10**6) -> np.ndarray:
    """Stationary covariance coefficient: solve ``A W A^T - W + Gamma = 0``.

    Computed by the convergent iteration ``W <- Gamma + A W A^T`` from
    ``W = 0``, stopped when the update falls below ``1e-13`` in inf-norm;
    this is the unique solution with ``W @ 1 = 0``.  With
    ``cross_check=True`` the result is verified against an independent
    direct solve of the vectorized equation restricted to the mean-zero (x)
    mean-zero subspace.

    Raises :class:`NonConvergent` when the spectral radius of ``A`` on the
    tangent subspace is not strictly below 1.
    """
    a = np.asarray(a, dtype=float)
    g = np.asarray(gamma_matrix, dtype=float)
    _require_stable(a, "lyapunov_w")
    w = np.zeros_like(g)
    for _ in range(max_iter):
        nxt = g + a @ w @ a.T
        delta = float(np.max(np.abs(nxt - w)))
        w = 0.5 * (nxt + nxt.T)
        if delta < LYAPUNOV_TOL:
            break
    else:
        raise NonConvergent(f"Lyapunov iteration did not reach {LYAPUNOV_TOL}")
    if cross_check:
        direct = lyapunov_w_direct(a, g)
        gap = float(np.max(np.abs(w - direct)))
        if gap > 1e-9:
            raise NonConvergent(
                f"Lyapunov iteration and direct subspace solve disagree by {gap:.3e}")
    return w


def lyapunov_w_direct(a: np.ndarray, gamma_matrix: np.ndarray) -> np.ndarray:
    """Direct solve of the vectorized Lyapunov equation on the tangent subspace.

    Projects ``A`` and ``Gamma`` onto an orthonormal basis ``Q`` of the
    mean-zero subspace, solves ``(I - A~ (x) A~) vec(W~) = vec(Gamma~)``
    by a dense linear solve, and lifts back with ``W = Q W~ Q^T``.
    """
    a = np.asarray(a, dtype=float)
    g = np.asarray(gamma_matrix, dtype=float)
    _require_stable(a, "lyapunov_w_direct")
    q = tangent_basis(a.shape[0])
    at = _reduced(a, q)
    gt = _reduced(g, q)
    k = at.shape[0]
    wt = np.linalg.solve(np.eye(k * k) - np.kron(at, at), gt.ravel()).reshape(k, k)
    w = q @ wt @ q.T
    return 0.5 * (w + w.T)


def v_infinity(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stationary mean-correction coefficient ``V_inf``.

    Solves ``(I - A) V = 1/2 * (B . W)`` restricted to the mean-zero
    subspace, where it is nonsingular under exponential stability; the
    right-hand side must itself be mean-zero (it is, when the derivatives
    conserve mass), otherwise the derivative implementations are broken.
    """
    a = np.asarray(a, dtype=float)
    _require_stable(a, "v_infinity")
    rhs = 0.5 * contract(b, w)
    total = float(rhs.sum())
    if abs(total) > 1e-8:
        raise PopmfError(
            f"sum(B . W) = {total:.3e} is not zero: inconsistent right-hand side, "
            "check the Jacobian/Hessian implementations")
    q = tangent_basis(a.shape[0])
    vt = np.linalg.solve(np.eye(q.shape[1]) - _reduced(a, q), q.T @ rhs)
    return q @ vt


def solve_steady(model: PopulationModel, m0=None, *, tol: float = 1e-12,
                 max_iter: int = 10**6, cross_check: bool = False) -> SteadyRefinement:
    """Full steady-state pipeline: fixed point, then ``W_inf`` and ``V_inf``.

    ``m0`` defaults to the uniform occupancy.  Raises
    :class:`NonConvergent` when the attractor is not exponentially stable.
    """
    if m0 is None:
        m0 = np.full(model.dim, 1.0 / model.dim)
    report = find_fixed_point(model, m0, tol=tol, max_iter=max_iter)
    a = jacobian_phi1(model, report.mu_inf)
    g = gamma(model, report.mu_inf)
    w = lyapunov_w(a, g, cross_check=cross_check)
    b = hessian_phi1(model, report.mu_inf)
    v = v_infinity(a, b, w)
    return SteadyRefinement(mu_inf=report.mu_inf, v_inf=v, w_inf=w)


def steady_functional(model: PopulationModel, h: Functional,
                      report: SteadyRefinement, n_objects: int) -> np.ndarray:
    """Refined stationary reward ``h(mu_inf) + [Dh V_inf + 1/2 D2h . W_inf] / N``."""
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    state = RefinementState(t=0, mu=np.asarray(report.mu_inf, dtype=float),
                            v=report.v_inf, w=report.w_inf)
    return h.value(state.mu) + functional_correction(h, state) / n_objects
