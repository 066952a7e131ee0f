"""Exact stochastic dynamics of the N-object system.

Two complementary tools live here:

* a seeded Monte Carlo simulator of the synchronous chain.  One step moves
  every object at once: for each source state ``i``, the ``counts[i]``
  objects sitting there are split across destination states by a
  multinomial draw with probabilities ``K[i, :]`` evaluated at the current
  occupancy, and the draws of distinct source states are independent.  The
  new counts are the column sums of the draws, so total mass is conserved
  exactly in integer arithmetic.

* exact transient/stationary solvers that enumerate the full count-vector
  state space (feasible for small N) and serve as ground-truth oracles for
  the approximation modules.

All randomness flows through a counter-based Philox generator seeded from a
single 64-bit value; identical arguments give bit-identical results.  Runs
are advanced in lockstep through batched multinomial draws in a fixed order,
which is what keeps large simulations (10^5 runs and more) affordable.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import gammaln

from .core import PopmfError, PopulationModel, as_occupancy
from .refined import Functional

MAX_EXACT_STATES = 2_000_000
DENSE_STATE_LIMIT = 5_000


class StateSpaceTooLarge(PopmfError):
    """The exact chain would exceed the enforced state-space bound."""


class SingularSystem(PopmfError):
    """The stationary linear system is singular (reducible chain)."""


@dataclass(frozen=True)
class CountState:
    """Integer occupancy counts of the N-object system (counts sum to N)."""

    counts: np.ndarray
    n_objects: int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64).copy()
        if c.ndim != 1:
            raise ValueError(f"counts must be 1-D, got shape {c.shape}")
        if np.any(c < 0):
            raise ValueError(f"counts must be non-negative: {c}")
        if self.n_objects < 1:
            raise ValueError("n_objects must be >= 1")
        if int(c.sum()) != self.n_objects:
            raise ValueError(
                f"counts sum to {int(c.sum())}, expected n_objects = {self.n_objects}")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    def occupancy(self) -> np.ndarray:
        return as_occupancy(self.counts / self.n_objects)


def counts_from_fractions(fractions, n_objects: int) -> np.ndarray:
    """Convert occupancy fractions to integer counts summing to ``n_objects``.

    Floor rounding, with the mass lost to flooring restored to the entries
    with the largest remainders (ties broken toward lower indices).  The
    conversion is deliberately explicit so callers can report it.
    """
    f = as_occupancy(fractions)
    raw = f * n_objects
    counts = np.floor(raw).astype(np.int64)
    short = n_objects - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


@dataclass(frozen=True)
class SimulationSummary:
    """Per-time-step statistics across simulation runs.

    ``functional_mean`` is the across-run average of the (optionally
    clamped) reward; ``functional_excluded[t]`` counts runs whose reward was
    non-finite at step ``t`` and therefore left out of that average.
    """

    mean_trajectory: np.ndarray            # (t_max+1, n)
    covariance_trajectory: np.ndarray      # (t_max+1, n, n)
    functional_mean: np.ndarray | None     # (t_max+1, p) or None
    functional_excluded: np.ndarray | None
    runs: int
    seed: int
    n_objects: int
    warnings: tuple[str, ...] = ()

    def stderr(self) -> np.ndarray:
        """Standard error of the occupancy means, shape (t_max+1, n)."""
        var = np.diagonal(self.covariance_trajectory, axis1=1, axis2=2)
        return np.sqrt(np.maximum(var, 0.0) / self.runs)


def _sampling_matrix(model: PopulationModel, m) -> np.ndarray:
    """Kernel at ``m``, validated, then projected exactly onto probability rows."""
    k = model.kernel(m)
    if np.any(k < -1e-9):
        raise PopmfError(f"kernel entries below 0 at occupancy {np.asarray(m)}")
    k = np.clip(k, 0.0, None)
    return k / k.sum(axis=-1, keepdims=True)


def step(model: PopulationModel, state: CountState,
         rng: np.random.Generator) -> CountState:
    """One synchronous step of the N-object chain (single run).

    Splits the ``counts[i]`` objects of every source state across
    destinations with one multinomial draw per source row, at probabilities
    ``K[i, :](counts / N)``.
    """
    k = _sampling_matrix(model, state.occupancy())
    new = np.zeros(model.dim, dtype=np.int64)
    for i in range(model.dim):
        if state.counts[i]:
            new += rng.multinomial(state.counts[i], k[i])
    return CountState(new, state.n_objects)


def _unique_rows(counts: np.ndarray, n_objects: int):
    """Indices of distinct count rows; keyed encoding when it fits in int64."""
    runs, n = counts.shape
    base = n_objects + 1
    if base**n < 2**62:
        keys = counts[:, 0].astype(np.int64)
        for j in range(1, n):
            keys = keys * base + counts[:, j]
        _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    else:
        _, first, inv = np.unique(counts, axis=0, return_index=True,
                                  return_inverse=True)
    return counts[first], inv


def _step_batch(model: PopulationModel, counts: np.ndarray, n_objects: int,
                rng: np.random.Generator) -> np.ndarray:
    """Advance all runs by one step; kernel evaluated once per distinct occupancy."""
    n = model.dim
    uniq, inv = _unique_rows(counts, n_objects)
    kernels = model.kernel.eval_batch(uniq / n_objects)
    if kernels.min() < -1e-9:
        raise PopmfError("kernel entries below 0 at a simulated occupancy")
    kernels = np.clip(kernels, 0.0, None)
    kernels /= kernels.sum(axis=-1, keepdims=True)
    new = np.zeros_like(counts)
    for i in range(n):
        new += rng.multinomial(counts[:, i], kernels[inv, i, :])
    return new


def simulate(model: PopulationModel, initial: CountState, t_max: int, runs: int,
             seed: int, h: Functional | None = None,
             clamp: float | None = None) -> SimulationSummary:
    """Monte Carlo estimate of the occupancy-measure moments over time.

    All ``runs`` trajectories start from ``initial`` and are advanced in
    lockstep for ``t_max`` steps.  When a reward ``h`` is given, its per-run
    value is recorded at every step; with ``clamp`` set, each value is
    capped at ``clamp`` before averaging (infinite values thus become the
    cap).  Without a clamp, non-finite reward values are counted, excluded
    from the average, and reported through ``warnings``.

    ``h.eval`` must accept a batch of occupancies, shape ``(runs, n)``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    n = model.dim
    big_n = initial.n_objects
    counts = np.tile(initial.counts, (runs, 1))
    rng = np.random.Generator(np.random.Philox(seed))

    mean = np.empty((t_max + 1, n))
    cov = np.empty((t_max + 1, n, n))
    fmean = None
    fexcl = None
    warnings: list[str] = []

    for t in range(t_max + 1):
        occ = counts / big_n
        mean[t] = occ.mean(axis=0)
        centered = occ - mean[t]
        if runs > 1:
            cov[t] = centered.T @ centered / (runs - 1)
        else:
            cov[t] = 0.0
        if h is not None:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                values = np.asarray(h.eval(occ), dtype=float).reshape(runs, -1)
            if clamp is not None:
                values = np.where(np.isnan(values), values,
                                  np.minimum(values, clamp))
            if fmean is None:
                fmean = np.empty((t_max + 1, values.shape[1]))
                fexcl = np.zeros(t_max + 1, dtype=np.int64)
            ok = np.all(np.isfinite(values), axis=1)
            fexcl[t] = runs - int(ok.sum())
            fmean[t] = values[ok].mean(axis=0) if ok.any() else np.nan
        if t == t_max:
            break
        counts = _step_batch(model, counts, big_n, rng)

    if fexcl is not None and fexcl.sum() > 0:
        warnings.append(
            f"functional non-finite in {int(fexcl.sum())} run-steps "
            f"(max {int(fexcl.max())} runs at one step); excluded from averages")
    for a in (mean, cov) + ((fmean, fexcl) if fmean is not None else ()):
        a.flags.writeable = False
    return SimulationSummary(
        mean_trajectory=mean, covariance_trajectory=cov, functional_mean=fmean,
        functional_excluded=fexcl, runs=runs, seed=seed, n_objects=big_n,
        warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# Exact solvers (brute-force chain over count vectors)
# ---------------------------------------------------------------------------

def _count_states(n_objects: int, n: int) -> Iterator[tuple[int, ...]]:
    """All count vectors summing to ``n_objects``, in colexicographic order."""
    if n == 1:
        yield (n_objects,)
        return
    for last in range(n_objects + 1):
        for rest in _count_states(n_objects - last, n - 1):
            yield rest + (last,)


def _allocation_pmf(count: int, probs: np.ndarray, support: list[int], n: int):
    """Multinomial allocations of ``count`` objects over ``support``.

    Returns a list of ``(allocation_tuple, probability)`` where the
    allocation tuple has length ``n`` (zeros off support).  Binomial and
    degenerate supports are handled vectorized; wider supports recurse.
    """
    if len(support) == 1:
        alloc = [0] * n
        alloc[support[0]] = count
        return [(tuple(alloc), 1.0)]
    if len(support) == 2:
        j0, j1 = support
        ks = np.arange(count + 1)
        logpmf = (gammaln(count + 1) - gammaln(ks + 1) - gammaln(count - ks + 1)
                  + ks * math.log(probs[j0]) + (count - ks) * math.log(probs[j1]))
        pmf = np.exp(logpmf)
        out = []
        for k in range(count + 1):
            alloc = [0] * n
            alloc[j0] = k
            alloc[j1] = count - k
            out.append((tuple(alloc), float(pmf[k])))
        return out
    head, tail = support[0], support[1:]
    p_head = probs[head]
    p_tail = float(sum(probs[j] for j in tail))
    out = []
    ks = np.arange(count + 1)
    logbin = (gammaln(count + 1) - gammaln(ks + 1) - gammaln(count - ks + 1)
              + ks * math.log(p_head) + (count - ks) * math.log(p_tail))
    binom = np.exp(logbin)
    cond = probs.copy()
    for k in range(count + 1):
        for alloc, q in _allocation_pmf(count - k, cond / p_tail, tail, n):
            a = list(alloc)
            a[head] = k
            out.append((tuple(a), float(binom[k]) * q))
    return out


class ExactChain:
    """Full Markov chain of the N-object system over count vectors.

    The transition probability between count vectors is the sum over all
    allocation matrices of the products of per-source multinomial
    probabilities; rows are built by convolving the source allocations.
    Dense storage up to 5000 states, sparse rows beyond.
    """

    def __init__(self, model: PopulationModel, n_objects: int):
        n = model.dim
        size = math.comb(n_objects + n - 1, n - 1)
        if size > MAX_EXACT_STATES:
            raise StateSpaceTooLarge(
                f"{size} count states for N={n_objects}, n={n} "
                f"(bound {MAX_EXACT_STATES})")
        self.model = model
        self.n_objects = n_objects
        self.states = np.array(list(_count_states(n_objects, n)), dtype=np.int64)
        self.occupancies = self.states / n_objects
        self._index = {tuple(s): i for i, s in enumerate(self.states)}
        self.dense = size <= DENSE_STATE_LIMIT
        self.transition_matrix = self._build()

    def _build(self):
        n = self.model.dim
        size = len(self.states)
        if self.dense:
            p = np.zeros((size, size))
        else:
            from scipy.sparse import lil_matrix
            p = lil_matrix((size, size))
        for si, c in enumerate(self.states):
            k = _sampling_matrix(self.model, c / self.n_objects)
            dist: dict[tuple[int, ...], float] = {(0,) * n: 1.0}
            for i in range(n):
                if c[i] == 0:
                    continue
                support = [j for j in range(n) if k[i, j] > 0.0]
                allocs = _allocation_pmf(int(c[i]), k[i], support, n)
                nxt: dict[tuple[int, ...], float] = defaultdict(float)
                for base, pb in dist.items():
                    for alloc, pa in allocs:
                        key = tuple(b + a for b, a in zip(base, alloc))
                        nxt[key] += pb * pa
                dist = nxt
            for vec, prob in dist.items():
                p[si, self._index[vec]] += prob
        if not self.dense:
            p = p.tocsr()
        return p

    def point_mass(self, initial: CountState) -> np.ndarray:
        pi = np.zeros(len(self.states))
        pi[self._index[tuple(initial.counts)]] = 1.0
        return pi

    def propagate(self, pi: np.ndarray) -> np.ndarray:
        if self.dense:
            return pi @ self.transition_matrix
        return self.transition_matrix.T @ pi

    def expected_occupancy(self, pi: np.ndarray) -> np.ndarray:
        return pi @ self.occupancies

    def occupancy_covariance(self, pi: np.ndarray) -> np.ndarray:
        mean = self.expected_occupancy(pi)
        centered = self.occupancies - mean
        return (centered * pi[:, np.newaxis]).T @ centered

    def _closed_class_count(self) -> int:
        """Number of closed (recurrent) communicating classes of the chain.

        The stationary distribution is unique exactly when there is one; a
        reducible chain with several closed classes (e.g. two consensus
        states) has a whole simplex of stationary distributions, and a
        linear solve would silently return an arbitrary one.
        """
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import connected_components
        p = self.transition_matrix
        adj = csr_matrix(p > 0.0) if self.dense else (p > 0.0).tocsr()
        n_comp, labels = connected_components(adj, directed=True,
                                              connection="strong")
        rows, cols = adj.nonzero()
        open_classes = set(labels[rows[labels[rows] != labels[cols]]])
        return n_comp - len(open_classes)

    def stationary_distribution(self) -> np.ndarray:
        """Solve ``pi P = pi``, ``sum(pi) = 1`` by a direct linear solve.

        Raises :class:`SingularSystem` when the chain is reducible (more
        than one closed communicating class), in which case the stationary
        expectation depends on the initial condition.
        """
        size = len(self.states)
        n_closed = self._closed_class_count()
        if n_closed != 1:
            raise SingularSystem(
                f"the chain has {n_closed} closed communicating classes "
                "(e.g. absorbing consensus states); the stationary "
                "distribution is not unique and the stationary expectation "
                "depends on the initial condition")
        b = np.zeros(size)
        b[-1] = 1.0
        if self.dense:
            a = self.transition_matrix.T - np.eye(size)
            a[-1, :] = 1.0
            try:
                pi = np.linalg.solve(a, b)
            except np.linalg.LinAlgError as exc:
                raise SingularSystem(
                    "stationary linear system is singular") from exc
        else:
            from scipy.sparse import eye as speye
            from scipy.sparse.linalg import spsolve
            a = (self.transition_matrix.T - speye(size)).tolil()
            a[-1, :] = 1.0
            with np.errstate(divide="ignore", invalid="ignore"):
                pi = spsolve(a.tocsc(), b)
        if (not np.all(np.isfinite(pi))
                or np.any(pi < -1e-8)
                or abs(pi.sum() - 1.0) > 1e-8
                or np.max(np.abs(self.propagate(pi) - pi)) > 1e-8):
            raise SingularSystem(
                "stationary solve produced an invalid distribution")
        return pi


def exact_transient(model: PopulationModel, initial: CountState,
                    t_max: int) -> np.ndarray:
    """Exact ``E[M(t)]`` for t = 0 .. t_max, shape ``(t_max+1, n)``.

    Builds the full count-vector chain and propagates the initial point
    mass; raises :class:`StateSpaceTooLarge` beyond the enforced bound.
    """
    chain = ExactChain(model, initial.n_objects)
    pi = chain.point_mass(initial)
    out = np.empty((t_max + 1, model.dim))
    out[0] = chain.expected_occupancy(pi)
    for t in range(t_max):
        pi = chain.propagate(pi)
        out[t + 1] = chain.expected_occupancy(pi)
    return out


def exact_stationary(model: PopulationModel, n_objects: int) -> np.ndarray:
    """Exact stationary ``E[M]`` of the N-object chain.

    Raises :class:`SingularSystem` for reducible chains (the stationary
    expectation is then initial-condition dependent) and
    :class:`StateSpaceTooLarge` beyond the state-space bound.
    """
    chain = ExactChain(model, n_objects)
    pi = chain.stationary_distribution()
    return chain.expected_occupancy(pi)
