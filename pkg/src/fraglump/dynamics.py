"""Deterministic and stochastic semantics of a reaction network.

* :func:`ode_integrate` -- mass-action ODEs
* :func:`build_ctmc` -- the reachable Markov graph from a count vector
* :func:`cme_integrate` -- transient distribution (Runge-Kutta or uniformization)
* :func:`ssa_simulate` -- Gillespie direct-method ensembles
"""

from __future__ import annotations

import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .network import CapExceeded, ReactionNetwork

DEFAULT_STATE_CAP = 100_000
DEFAULT_REL_TOL = 1e-6
DEFAULT_ABS_TOL = 1e-9


class IntegrationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# ODE
# ---------------------------------------------------------------------------


@dataclass
class ConcentrationTrajectory:
    times: np.ndarray
    values: np.ndarray  # len(times) x n_species
    names: list[str]


def ode_integrate(
    net: ReactionNetwork,
    z0: Sequence[float],
    t_grid: Sequence[float],
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
    method: str = "DOP853",
) -> ConcentrationTrajectory:
    """Integrate ``dz/dt = C f(z)`` and sample it on ``t_grid``."""
    z0 = np.asarray(z0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if z0.shape != (net.n_species,):
        raise ValueError("z0 has the wrong dimension")
    if np.any(z0 < 0):
        raise ValueError("z0 must be non-negative")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if len(t_grid) == 1 or not net.reactions:
        return ConcentrationTrajectory(t_grid, np.tile(z0, (len(t_grid), 1)), list(net.names))
    sol = solve_ivp(
        lambda t, z: net.rhs(z),
        (t_grid[0], t_grid[-1]),
        z0,
        method=method,
        t_eval=t_grid,
        rtol=rel_tol,
        atol=abs_tol,
    )
    if not sol.success:
        raise IntegrationError(sol.message)
    values = sol.y.T
    if values.min(initial=0.0) < -abs_tol:
        raise IntegrationError(
            f"negative concentration {values.min():.3g} beyond abs_tol={abs_tol:g}"
        )
    return ConcentrationTrajectory(t_grid, values, list(net.names))


# ---------------------------------------------------------------------------
# Markov graph
# ---------------------------------------------------------------------------


@dataclass
class MarkovGraph:
    """Finite CTMC: states, off-diagonal weights ``w(x, y)``, initial law.

    ``terms`` optionally records, per edge, the integer/real multiplier of
    each named rate constant so that generator entries can be read
    symbolically (``w = sum(coef * constant)``).
    """

    states: list[tuple]
    weights: dict[tuple[int, int], float]
    initial: np.ndarray
    terms: dict[tuple[int, int], dict[str, float]] = field(default_factory=dict)
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        self._index = {x: i for i, x in enumerate(self.states)}
        if abs(self.initial.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be non-negative")

    def __len__(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        return self._index[tuple(state)]

    def rate_matrix(self) -> sp.csr_matrix:
        """Off-diagonal rates, row = source."""
        n = len(self.states)
        if not self.weights:
            return sp.csr_matrix((n, n))
        rows, cols = zip(*self.weights)
        return sp.csr_matrix((list(self.weights.values()), (rows, cols)), shape=(n, n))

    def exit_rates(self) -> np.ndarray:
        return np.asarray(self.rate_matrix().sum(axis=1)).ravel()

    def generator(self) -> sp.csr_matrix:
        """Full generator ``Q`` with ``Q[x, x] = -sum_y w(x, y)``."""
        W = self.rate_matrix()
        return (W - sp.diags(np.asarray(W.sum(axis=1)).ravel())).tocsr()

    def successors(self) -> list[list[tuple[int, float]]]:
        out: list[list[tuple[int, float]]] = [[] for _ in self.states]
        for (i, j), w in sorted(self.weights.items()):
            out[i].append((j, w))
        return out

    def with_initial(self, p0: Sequence[float]) -> "MarkovGraph":
        return MarkovGraph(list(self.states), dict(self.weights), np.asarray(p0, float),
                           dict(self.terms), list(self.labels))


def build_ctmc(
    net: ReactionNetwork,
    x0: Sequence[int],
    cap: int = DEFAULT_STATE_CAP,
) -> MarkovGraph:
    """Breadth-first closure of ``x0`` under reactions with positive propensity."""
    x0 = tuple(int(v) for v in x0)
    if len(x0) != net.n_species or min(x0, default=0) < 0:
        raise ValueError("x0 must be a non-negative count vector over the species")
    changes = [r.change() for r in net.reactions]
    states = [x0]
    index = {x0: 0}
    weights: dict[tuple[int, int], float] = {}
    terms: dict[tuple[int, int], dict[str, float]] = {}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        x = states[i]
        for j, r in enumerate(net.reactions):
            g = net.propensity(j, x)
            if g <= 0:
                continue
            y = list(x)
            for s, d in changes[j].items():
                y[s] += d
            y = tuple(y)
            if y not in index:
                if len(states) >= cap:
                    raise CapExceeded("state", cap, len(states))
                index[y] = len(states)
                states.append(y)
                queue.append(index[y])
            edge = (i, index[y])
            weights[edge] = weights.get(edge, 0.0) + g
            binom = math.prod(math.comb(x[s], n) for s, n in r.reactants)
            bucket = terms.setdefault(edge, {})
            for name, mult in r.contributions:
                bucket[name] = bucket.get(name, 0.0) + mult * binom
    p0 = np.zeros(len(states))
    p0[0] = 1.0
    labels = [_state_label(x, net.names) for x in states]
    return MarkovGraph(states, weights, p0, terms, labels)


def _state_label(x: Sequence[int], names: Sequence[str]) -> str:
    parts = [f"{n}{name}" if n > 1 else name for n, name in zip(x, names) if n]
    return "{" + ",".join(parts) + "}"


# ---------------------------------------------------------------------------
# CME
# ---------------------------------------------------------------------------


@dataclass
class DistributionTrajectory:
    times: np.ndarray
    probs: np.ndarray  # len(times) x n_states
    method: str = "rk"
    tol: float = 0.0

    def at(self, k: int) -> np.ndarray:
        return self.probs[k]


def cme_integrate(
    chain: MarkovGraph,
    t_grid: Sequence[float],
    tol: float = 1e-9,
    method: str = "rk",
    p0: Sequence[float] | None = None,
    max_steps: int = 10_000_000,
) -> DistributionTrajectory:
    """Transient distribution ``p' = Q^T p`` on ``t_grid``.

    ``method="rk"`` uses an explicit adaptive Runge-Kutta pair on the sparse
    generator; ``method="uniformization"`` expands ``exp(Qt)`` as a Poisson
    mixture of powers of the uniformized jump matrix.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    p = chain.initial if p0 is None else np.asarray(p0, dtype=float)
    QT = chain.generator().T.tocsr()
    if method == "rk":
        probs = _cme_rk(QT, p, t_grid, tol)
    elif method == "uniformization":
        probs = _cme_uniformization(QT, p, t_grid, tol, max_steps)
    else:
        raise ValueError(f"unknown CME method {method!r}")
    return DistributionTrajectory(t_grid, probs, method, tol)


def _cme_rk(QT: sp.csr_matrix, p0: np.ndarray, t_grid: np.ndarray, tol: float) -> np.ndarray:
    out = np.empty((len(t_grid), len(p0)))
    out[0] = p0
    if len(t_grid) == 1:
        return out
    if QT.nnz == 0:
        out[:] = p0
        return out
    sol = solve_ivp(
        lambda t, p: QT @ p,
        (t_grid[0], t_grid[-1]),
        p0,
        method="DOP853",
        t_eval=t_grid,
        rtol=tol,
        atol=tol * 1e-3,
    )
    if not sol.success:
        raise IntegrationError(sol.message)
    out[:] = sol.y.T
    out[0] = p0
    return out


def _poisson_terms(q: float, eps: float) -> int:
    """Smallest K with P(Poisson(q) > K) < eps (q kept moderate by the caller)."""
    weight = math.exp(-q)
    total = weight
    k = 0
    while 1.0 - total > eps and k < 10_000:
        k += 1
        weight *= q / k
        total += weight
    return k


def _cme_uniformization(
    QT: sp.csr_matrix, p0: np.ndarray, t_grid: np.ndarray, tol: float, max_steps: int
) -> np.ndarray:
    out = np.empty((len(t_grid), len(p0)))
    out[0] = p0
    rate = float(-QT.diagonal().min(initial=0.0))
    p = p0.copy()
    if rate == 0.0:
        out[:] = p0
        return out
    rate *= 1.02
    # jump matrix transposed: P^T = I + Q^T / rate
    PT = (sp.identity(QT.shape[0], format="csr") + QT / rate).tocsr()
    steps = 0
    for k in range(1, len(t_grid)):
        h = t_grid[k] - t_grid[k - 1]
        n_sub = max(1, math.ceil(rate * h / 20.0))
        dt = h / n_sub
        q = rate * dt
        K = _poisson_terms(q, tol / (n_sub * (len(t_grid) - 1)))
        for _ in range(n_sub):
            weight = math.exp(-q)
            term = p
            acc = weight * term
            for j in range(1, K + 1):
                term = PT @ term
                weight *= q / j
                acc = acc + weight * term
            p = acc
            steps += K
            if steps > max_steps:
                raise IntegrationError("uniformization step budget exhausted")
        out[k] = p
    return out


def cme_mean(dist: DistributionTrajectory, chain: MarkovGraph) -> np.ndarray:
    """``E[X_t]`` for every grid time (len(times) x n_species)."""
    X = np.asarray(chain.states, dtype=float)
    if dist.probs.shape[1] != X.shape[0]:
        raise ValueError("distribution and chain sizes differ")
    return dist.probs @ X


# ---------------------------------------------------------------------------
# SSA
# ---------------------------------------------------------------------------


@dataclass
class SsaTrajectory:
    times: np.ndarray
    states: np.ndarray  # chain state indices, or count vectors (rows)
    seed: tuple[int, int]  # (master seed, replica)


@dataclass
class SsaEnsemble:
    sample_times: np.ndarray
    samples: np.ndarray  # runs x times (chain) or runs x times x species
    trajectories: list[SsaTrajectory]
    master_seed: int
    on_chain: bool

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def std(self) -> np.ndarray:
        return self.samples.std(axis=0, ddof=1) if len(self.samples) > 1 else np.zeros_like(self.mean())

    def state_distribution(self, n_states: int) -> np.ndarray:
        """Empirical state frequencies per sample time (chain mode)."""
        if not self.on_chain:
            raise ValueError("state distribution needs a chain ensemble")
        out = np.zeros((len(self.sample_times), n_states))
        for k in range(len(self.sample_times)):
            out[k] = np.bincount(self.samples[:, k], minlength=n_states)
        return out / len(self.samples)


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Counter-based (Philox) stream for one replica."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(replica,))
    return np.random.Generator(np.random.Philox(seq))


class _Uniforms:
    def __init__(self, rng: np.random.Generator, block: int = 256):
        self.rng, self.block = rng, block
        self.buf = rng.random(block)
        self.k = 0

    def __call__(self) -> float:
        if self.k == self.block:
            self.buf = self.rng.random(self.block)
            self.k = 0
        u = self.buf[self.k]
        self.k += 1
        return u


def _run_chain(succ, x0: int, t_end: float, sample_times, master_seed, replica, keep):
    rng = _Uniforms(replica_rng(master_seed, replica))
    t, x = 0.0, x0
    times, states = [0.0], [x0]
    samples = np.empty(len(sample_times), dtype=np.int64)
    k = 0
    while True:
        out = succ[x]
        total = out[1][-1] if out[0] else 0.0
        if total <= 0.0:
            t_next = math.inf
        else:
            t_next = t - math.log(1.0 - rng()) / total
        while k < len(sample_times) and sample_times[k] < min(t_next, math.inf) and sample_times[k] <= t_end:
            samples[k] = x
            k += 1
        if t_next > t_end:
            break
        target = rng() * total
        idx = int(np.searchsorted(out[1], target, side="right"))
        idx = min(idx, len(out[0]) - 1)
        t, x = t_next, out[0][idx]
        if keep:
            times.append(t)
            states.append(x)
    samples[k:] = x
    traj = SsaTrajectory(np.array(times), np.array(states), (master_seed, replica)) if keep else None
    return samples, traj


def _run_network(net, x0, t_end, sample_times, master_seed, replica, keep):
    rng = _Uniforms(replica_rng(master_seed, replica))
    changes = [r.change() for r in net.reactions]
    x = np.array(x0, dtype=np.int64)
    t = 0.0
    times, states = [0.0], [x.copy()]
    samples = np.empty((len(sample_times), len(x)), dtype=np.int64)
    k = 0
    while True:
        props = np.array([net.propensity(j, x) for j in range(len(net.reactions))])
        total = props.sum()
        t_next = math.inf if total <= 0 else t - math.log(1.0 - rng()) / total
        while k < len(sample_times) and sample_times[k] < t_next and sample_times[k] <= t_end:
            samples[k] = x
            k += 1
        if t_next > t_end:
            break
        cum = np.cumsum(props)
        j = min(int(np.searchsorted(cum, rng() * total, side="right")), len(cum) - 1)
        for s, d in changes[j].items():
            x[s] += d
        t = t_next
        if keep:
            times.append(t)
            states.append(x.copy())
    samples[k:] = x
    traj = SsaTrajectory(np.array(times), np.array(states), (master_seed, replica)) if keep else None
    return samples, traj


def _chunk(args):
    kind, payload, x0, t_end, sample_times, seed, lo, hi, keep = args
    run = _run_chain if kind == "chain" else _run_network
    results = [run(payload, x0, t_end, sample_times, seed, i, keep) for i in range(lo, hi)]
    return [r[0] for r in results], [r[1] for r in results]


def default_workers() -> int:
    value = os.environ.get("FRAGLUMP_THREADS")
    return max(1, int(value)) if value else 1


def ssa_simulate(
    system: MarkovGraph | ReactionNetwork,
    x0: Sequence[int] | int | None,
    t_end: float,
    n_runs: int,
    master_seed: int,
    sample_times: Sequence[float] | None = None,
    keep_trajectories: bool = True,
    workers: int | None = None,
) -> SsaEnsemble:
    """Direct-method SSA ensemble, reproducible from ``master_seed``.

    On a :class:`MarkovGraph` states are chain indices (``x0`` defaults to
    the initial state); on a network they are count vectors.  Replicas use
    independent Philox streams keyed by replica number, so results do not
    depend on ``workers``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    sample_times = np.asarray([t_end] if sample_times is None else sample_times, dtype=float)
    if isinstance(system, MarkovGraph):
        kind = "chain"
        succ = []
        for row in system.successors():
            targets = [j for j, _ in row]
            succ.append((targets, np.cumsum([w for _, w in row]) if row else np.zeros(0)))
        payload = succ
        if x0 is None:
            x0 = int(np.argmax(system.initial))
    else:
        kind = "network"
        payload = system
        if x0 is None:
            raise ValueError("x0 is required for network simulation")
        x0 = tuple(int(v) for v in x0)
    workers = default_workers() if workers is None else workers
    n_chunks = max(1, min(workers * 4, n_runs)) if workers > 1 else 1
    bounds = np.linspace(0, n_runs, n_chunks + 1).astype(int)
    jobs = [
        (kind, payload, x0, t_end, sample_times, master_seed, int(lo), int(hi), keep_trajectories)
        for lo, hi in zip(bounds[:-1], bounds[1:])
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk, jobs))
    else:
        parts = [_chunk(job) for job in jobs]
    samples = [s for part in parts for s in part[0]]
    trajs = [t for part in parts for t in part[1] if t is not None]
    return SsaEnsemble(sample_times, np.array(samples), trajs, master_seed, kind == "chain")
