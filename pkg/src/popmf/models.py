"""Built-in population models with analytic derivatives and rewards.

Four systems, each a :class:`~popmf.core.PopulationModel` whose kernel
formula is valid on a neighbourhood of the simplex (rows sum to 1
identically in ``m``):

* ``seir``      computer-epidemic compartments S, E, I, R
* ``wsn``       wireless sensor network, gateway states a, b and sensor
                states c, d, e, with the mean response-time reward
* ``mrdl``      majority-rule decision making with differential latency,
                states LA, NA, LB, NB, with the opinion-A consensus reward
* ``two_state`` minimal quadratic model: state 1 always returns to 0,
                state 0 jumps to 1 with probability alpha * m_0

Parameter containers validate, at construction, the inequalities that keep
every kernel entry a probability on the whole simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .core import PopulationModel, TransitionKernel
from .refined import Functional, FunctionalEvaluationError

RESPONSE_TIME_MIN_DENOM = 1e-12


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} = {value} violates 0 <= {name} <= 1")


def _rows(*rows) -> np.ndarray:
    """Stack kernel rows of (possibly batched) entries into (..., n, n)."""
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


# ---------------------------------------------------------------------------
# SEIR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeirParams:
    """Infection/recovery probabilities; defaults from the reference experiment.

    ``alpha_e`` external infection, ``alpha_i`` internal infection (scaled by
    the infected fraction), ``alpha_a`` activation, ``alpha_r`` recovery,
    ``alpha_l`` loss of immunity.
    """

    alpha_e: float = 0.01
    alpha_i: float = 0.08
    alpha_a: float = 0.04
    alpha_r: float = 0.02
    alpha_l: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            _check_unit(f.name, getattr(self, f.name))
        if self.alpha_e + self.alpha_i > 1.0:
            raise ValueError(
                f"alpha_e + alpha_i = {self.alpha_e + self.alpha_i} violates "
                "alpha_e + alpha_i <= 1 (row S must stay a probability for "
                "all m_I in [0, 1])")


def seir(params: SeirParams | None = None) -> PopulationModel:
    """SEIR model: a susceptible is infected with probability alpha_e + alpha_i m_I."""
    p = params if params is not None else SeirParams()
    ae, ai, aa, ar, al = p.alpha_e, p.alpha_i, p.alpha_a, p.alpha_r, p.alpha_l

    def kernel(m):
        m_i = np.asarray(m, dtype=float)[..., 2]
        z = np.zeros_like(m_i)
        o = np.ones_like(m_i)
        return _rows(
            [1 - (ae + ai * m_i), ae + ai * m_i, z, z],
            [z, (1 - aa) * o, aa * o, z],
            [z, z, (1 - ar) * o, ar * o],
            [al * o, z, z, (1 - al) * o])

    def jac(m):
        m_s, m_i = m[0], m[2]
        return np.array([
            [1 - (ae + ai * m_i), 0.0, -ai * m_s, al],
            [ae + ai * m_i, 1 - aa, ai * m_s, 0.0],
            [0.0, aa, 1 - ar, 0.0],
            [0.0, 0.0, ar, 1 - al]])

    def hess(m):
        b = np.zeros((4, 4, 4))
        b[0, 0, 2] = b[0, 2, 0] = -ai
        b[1, 0, 2] = b[1, 2, 0] = ai
        return b

    return PopulationModel(TransitionKernel(4, kernel), ("S", "E", "I", "R"),
                           jacobian=jac, hessian=hess)


# ---------------------------------------------------------------------------
# WSN
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WsnParams:
    """Gateway/sensor transition probabilities and the response-time clamp.

    ``alpha``: gateway becomes available again; ``beta``: data communication
    (gateway a -> b at rate beta * m_c, sensor c -> e at beta * m_a);
    ``lam``: sensor becomes ready to send; ``gamma``: communication timeout;
    ``eta``: delayed sensor retries.  ``clamp`` caps the per-run simulated
    response time (the deterministic pipeline never clamps).
    """

    alpha: float = 0.09
    beta: float = 0.9
    lam: float = 0.09
    gamma: float = 0.01
    eta: float = 0.01
    clamp: float = 100.0

    def __post_init__(self):
        for name in ("alpha", "beta", "lam", "gamma", "eta"):
            _check_unit(name, getattr(self, name))
        if self.beta + self.gamma > 1.0:
            raise ValueError(
                f"beta + gamma = {self.beta + self.gamma} violates "
                "beta + gamma <= 1 (row c must stay a probability for "
                "all m_a in [0, 1])")
        if self.clamp <= 0:
            raise ValueError(f"clamp = {self.clamp} violates clamp > 0")


def wsn(params: WsnParams | None = None) -> PopulationModel:
    """Wireless sensor network with static gateway (a, b) and sensor (c, d, e) classes.

    The kernel is block diagonal: an object never changes class, so gateway
    mass ``m_a + m_b`` is conserved by the drift map.
    """
    p = params if params is not None else WsnParams()
    al, be, lam, ga, eta = p.alpha, p.beta, p.lam, p.gamma, p.eta

    def kernel(m):
        m = np.asarray(m, dtype=float)
        m_a, m_c = m[..., 0], m[..., 2]
        z = np.zeros_like(m_a)
        o = np.ones_like(m_a)
        return _rows(
            [1 - be * m_c, be * m_c, z, z, z],
            [al * o, (1 - al) * o, z, z, z],
            [z, z, 1 - ga - be * m_a, ga * o, be * m_a],
            [z, z, eta * o, (1 - eta) * o, z],
            [z, z, lam * o, z, (1 - lam) * o])

    def jac(m):
        m_a, m_c = m[0], m[2]
        return np.array([
            [1 - be * m_c, al, -be * m_a, 0.0, 0.0],
            [be * m_c, 1 - al, be * m_a, 0.0, 0.0],
            [-be * m_c, 0.0, 1 - ga - be * m_a, eta, lam],
            [0.0, 0.0, ga, 1 - eta, 0.0],
            [be * m_c, 0.0, be * m_a, 0.0, 1 - lam]])

    def hess(m):
        b = np.zeros((5, 5, 5))
        for j, sign in ((0, -1.0), (1, 1.0), (2, -1.0), (4, 1.0)):
            b[j, 0, 2] = b[j, 2, 0] = sign * be
        return b

    return PopulationModel(TransitionKernel(5, kernel), ("a", "b", "c", "d", "e"),
                           jacobian=jac, hessian=hess)


def response_time_functional(params: WsnParams | None = None) -> Functional:
    """Mean sensor response time ``h(m) = (m_c + m_d) / (lam * m_e)``.

    On a single occupancy vector the evaluation fails loudly when the
    denominator magnitude drops below 1e-12 (the deterministic refinement
    pipeline must not produce silently huge values).  On a batch
    ``(runs, n)`` it returns ``inf``/``nan`` instead, so the simulator can
    apply its clamp-or-exclude policy per run.
    """
    p = params if params is not None else WsnParams()
    lam = p.lam

    def h(x):
        x = np.asarray(x, dtype=float)
        denom = lam * x[..., 4]
        if x.ndim == 1 and abs(denom) < RESPONSE_TIME_MIN_DENOM:
            raise FunctionalEvaluationError(
                f"response time undefined: |lam * m_e| = {abs(denom):.3e} < "
                f"{RESPONSE_TIME_MIN_DENOM}")
        with np.errstate(divide="ignore", invalid="ignore"):
            return (x[..., 2] + x[..., 3]) / denom

    def _checked_me(m):
        m_e = m[4]
        if abs(lam * m_e) < RESPONSE_TIME_MIN_DENOM:
            raise FunctionalEvaluationError(
                f"response time derivatives undefined: |lam * m_e| = "
                f"{abs(lam * m_e):.3e} < {RESPONSE_TIME_MIN_DENOM}")
        return m_e

    def grad(m):
        m_e = _checked_me(m)
        m_c, m_d = m[2], m[3]
        return np.array([[0.0, 0.0, 1 / (lam * m_e), 1 / (lam * m_e),
                          -(m_c + m_d) / (lam * m_e**2)]])

    def hess(m):
        m_e = _checked_me(m)
        m_c, m_d = m[2], m[3]
        h2 = np.zeros((1, 5, 5))
        h2[0, 2, 4] = h2[0, 4, 2] = -1 / (lam * m_e**2)
        h2[0, 3, 4] = h2[0, 4, 3] = -1 / (lam * m_e**2)
        h2[0, 4, 4] = 2 * (m_c + m_d) / (lam * m_e**3)
        return h2

    return Functional(arity=5, eval=h, gradient=grad, hessian=hess)


# ---------------------------------------------------------------------------
# MRDL-DT (majority rule with differential latency, discrete time)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MrdlParams:
    """Discretisation factor ``q`` and relative latency ``lam`` of opinion B.

    Latent A agents activate with probability 1/q, latent B agents with
    lam/q; a non-latent agent joins a random team of three and adopts the
    team majority opinion.
    """

    q: float = 10.0
    lam: float = 1.0

    def __post_init__(self):
        if self.q < 3.0:
            raise ValueError(
                f"q = {self.q} violates q >= 3 (team-formation probability "
                "3/q must be <= 1 so kernel entries stay probabilities)")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lam = {self.lam} violates 0 < lam <= 1")


def mrdl(params: MrdlParams | None = None) -> PopulationModel:
    """Majority-rule consensus with latency; states LA, NA, LB, NB.

    A non-latent A agent meets two random non-latent agents; it converts to
    (latent) B when both hold opinion B, probability ``3/q * m_NB^2``, and
    returns to latent A when at least one holds A.  Symmetrically for B.
    The factor 3 counts the orderings of the team members.
    """
    p = params if params is not None else MrdlParams()
    q, lam = p.q, p.lam

    def kernel(m):
        m = np.asarray(m, dtype=float)
        na, nb = m[..., 1], m[..., 3]
        z = np.zeros_like(na)
        o = np.ones_like(na)
        return _rows(
            [(1 - 1 / q) * o, o / q, z, z],
            [3 / q * (na**2 + na * nb),
             1 - 3 / q * (nb**2 + na**2 + na * nb),
             3 / q * nb**2, z],
            [z, z, (1 - lam / q) * o, (lam / q) * o],
            [3 / q * na**2, z,
             3 / q * (nb**2 + na * nb),
             1 - 3 / q * (na**2 + nb**2 + na * nb)])

    def jac(m):
        na, nb = m[1], m[3]
        j_na = 1 - (9 / q * na**2 + 6 / q * na * nb + 3 / q * nb**2)
        j_nb = 1 - (3 / q * na**2 + 9 / q * nb**2 + 6 / q * na * nb)
        return np.array([
            [1 - 1 / q, 9 / q * na**2 + 12 / q * na * nb, 0.0, 6 / q * na**2],
            [1 / q, j_na, 0.0, -3 / q * na**2 - 6 / q * na * nb],
            [0.0, 6 / q * nb**2, 1 - lam / q,
             12 / q * na * nb + 9 / q * nb**2],
            [0.0, -3 / q * nb**2 - 6 / q * na * nb, lam / q, j_nb]])

    def hess(m):
        na, nb = m[1], m[3]
        b = np.zeros((4, 4, 4))
        b[0, 1, 1] = 18 / q * na + 12 / q * nb
        b[0, 1, 3] = b[0, 3, 1] = 12 / q * na
        b[1, 1, 1] = -18 / q * na - 6 / q * nb
        b[1, 1, 3] = b[1, 3, 1] = -6 / q * na - 6 / q * nb
        b[1, 3, 3] = -6 / q * na
        b[2, 1, 3] = b[2, 3, 1] = 12 / q * nb
        b[2, 3, 3] = 18 / q * nb + 12 / q * na
        b[3, 1, 1] = -6 / q * nb
        b[3, 1, 3] = b[3, 3, 1] = -6 / q * na - 6 / q * nb
        b[3, 3, 3] = -18 / q * nb - 6 / q * na
        return b

    return PopulationModel(TransitionKernel(4, kernel), ("LA", "NA", "LB", "NB"),
                           jacobian=jac, hessian=hess)


def consensus_functional() -> Functional:
    """Fraction holding opinion A: ``h(m) = m_LA + m_NA``."""
    return Functional(
        arity=4,
        eval=lambda x: np.asarray(x, dtype=float)[..., 0]
        + np.asarray(x, dtype=float)[..., 1],
        gradient=lambda m: np.array([[1.0, 1.0, 0.0, 0.0]]),
        hessian=lambda m: np.zeros((1, 4, 4)),
    )


# ---------------------------------------------------------------------------
# Two-state example
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoStateParams:
    """Jump probability scale: state 0 -> 1 with probability alpha * m_0."""

    alpha: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha = {self.alpha} violates 0 < alpha < 1")


def two_state(params: TwoStateParams | None = None) -> PopulationModel:
    """Two-state model with fixed point ``m_0 = (sqrt(1 + 4 alpha) - 1) / (2 alpha)``.

    The fixed point is exponentially stable exactly for ``alpha < 0.75``;
    at ``alpha = 0.75`` the tangent eigenvalue is -1 (marginal case).
    """
    p = params if params is not None else TwoStateParams()
    alpha = p.alpha

    def kernel(m):
        m0 = np.asarray(m, dtype=float)[..., 0]
        z = np.zeros_like(m0)
        o = np.ones_like(m0)
        return _rows([1 - alpha * m0, alpha * m0], [o, z])

    def jac(m):
        return np.array([[1 - 2 * alpha * m[0], 1.0], [2 * alpha * m[0], 0.0]])

    def hess(m):
        b = np.zeros((2, 2, 2))
        b[0, 0, 0] = -2 * alpha
        b[1, 0, 0] = 2 * alpha
        return b

    return PopulationModel(TransitionKernel(2, kernel), ("0", "1"),
                           jacobian=jac, hessian=hess)


def two_state_fixed_point(alpha: float) -> float:
    """Closed-form first component of the two-state fixed point."""
    return (np.sqrt(1 + 4 * alpha) - 1) / (2 * alpha)


# ---------------------------------------------------------------------------
# Helpers and registry
# ---------------------------------------------------------------------------

def constant_kernel_model(matrix, state_labels=None) -> PopulationModel:
    """Model whose kernel is a fixed stochastic matrix (m-independent).

    The drift map is then linear, the Jacobian is the matrix transpose and
    the Hessian vanishes.  Useful as an oracle: the mean-field fixed point
    is the stationary distribution of the matrix.
    """
    k = np.array(matrix, dtype=float)
    n = k.shape[0]
    if k.shape != (n, n):
        raise ValueError(f"kernel matrix must be square, got {k.shape}")
    labels = tuple(state_labels) if state_labels else tuple(str(i) for i in range(n))

    def kernel(m):
        m = np.asarray(m, dtype=float)
        if m.ndim == 1:
            return k
        return np.broadcast_to(k, m.shape[:-1] + k.shape)

    return PopulationModel(
        TransitionKernel(n, kernel), labels,
        jacobian=lambda m: k.T, hessian=lambda m: np.zeros((n, n, n)))


@dataclass(frozen=True)
class BuiltinModel:
    """CLI registry entry: parameter schema, factory and experiment defaults."""

    name: str
    params_cls: type | None
    factory: Callable[..., PopulationModel]
    default_init: tuple[float, ...]
    functionals: dict[str, Callable[..., Functional]]


BUILTINS: dict[str, BuiltinModel] = {
    "seir": BuiltinModel("seir", SeirParams, seir, (0.2, 0.2, 0.2, 0.4), {}),
    "wsn": BuiltinModel("wsn", WsnParams, wsn, (1 / 3, 0.0, 0.0, 0.0, 2 / 3),
                        {"response_time": response_time_functional}),
    "mrdl": BuiltinModel("mrdl", MrdlParams, mrdl, (0.6, 0.0, 0.4, 0.0),
                         {"consensus": lambda params=None: consensus_functional()}),
    "two_state": BuiltinModel("two_state", TwoStateParams, two_state, (0.7, 0.3), {}),
}


def register_builtin(entry: BuiltinModel) -> None:
    """Expose a custom model to the command-line interface."""
    BUILTINS[entry.name] = entry
