"""Fragment-based reduction and Markov-chain aggregation.

The pipeline is::

    annotate -> generate_fragments -> reduce_ode              (deterministic)
    annotate -> generate_fragments -> induced_partition
             -> check_forward_lumpable / check_backward_bisimilar
             -> lump -> reconstruct                            (stochastic)
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dynamics import DistributionTrajectory, MarkovGraph
from .network import (
    DEFAULT_SPECIES_CAP,
    CapExceeded,
    ReactionNetwork,
    _Expander,
    _constants,
    _network_from,
    expand,
)
from .parser import Model
from .sitegraph import (
    Agent,
    Site,
    SiteGraph,
    Species,
    count_automorphisms,
    graph_key,
    mixture_automorphisms,
    to_kappa,
)


class ReductionError(RuntimeError):
    def __init__(self, message: str, rule: str | None = None, fragment: str | None = None):
        self.rule, self.fragment = rule, fragment
        super().__init__(message)


class NotLumpable(RuntimeError):
    def __init__(self, witness: dict):
        self.witness = witness
        super().__init__(f"partition is not forward lumpable: {witness}")


# ---------------------------------------------------------------------------
# annotation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Annotation:
    """Per agent type, a partition of its sites into classes."""

    classes: dict[str, tuple[tuple[str, ...], ...]]

    def class_index(self, agent_type: str, site: str) -> int:
        for k, cls in enumerate(self.classes[agent_type]):
            if site in cls:
                return k
        raise KeyError(f"{agent_type}.{site}")

    def as_dict(self) -> dict[str, list[list[str]]]:
        return {t: [list(c) for c in cs] for t, cs in self.classes.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "Annotation":
        return cls({t: tuple(tuple(c) for c in cs) for t, cs in data.items()})

    def validate(self, model: Model) -> None:
        for t, sig in model.signatures.items():
            got = sorted(s for c in self.classes.get(t, ()) for s in c)
            if got != sorted(sig.sites):
                raise ReductionError(f"annotation of {t} does not partition its sites")


class _UnionFind:
    def __init__(self, items: Iterable[str]):
        self.parent = {x: x for x in items}

    def find(self, x: str) -> str:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _classes_from(model: Model, uf: dict[str, _UnionFind]) -> Annotation:
    out = {}
    for t, sig in model.signatures.items():
        groups: dict[str, list[str]] = defaultdict(list)
        for s in sig.sites:
            groups[uf[t].find(s)].append(s)
        classes = sorted((tuple(g) for g in groups.values()), key=lambda c: sig.sites.index(c[0]))
        out[t] = tuple(classes) if classes else ((),)
    return Annotation(out)


def annotate(model: Model, observables: Sequence[SiteGraph] | None = None) -> Annotation:
    """Coarsest-needed site classes: sites documented together stay together.

    Two sites of a type are correlated when one connected component of a
    rule side or observable documents both on agents of that type (on one
    occurrence or on several occurrences linked through bonds).
    """
    if observables is None:
        observables = [o.pattern for o in model.observables]
    uf = {t: _UnionFind(sig.sites) for t, sig in model.signatures.items()}
    patterns = [g for r in model.rules for g in (r.lhs, r.rhs)] + list(observables)
    for g in patterns:
        for comp in g.components:
            documented: dict[str, list[str]] = defaultdict(list)
            for i in comp:
                agent = g.agents[i]
                documented[agent.type].extend(agent.site_names)
            for t, sites in documented.items():
                for s in sites[1:]:
                    uf[t].union(sites[0], s)
    return _classes_from(model, uf)


def full_annotation(model: Model) -> Annotation:
    """One class per type holding the whole interface (fragments = species)."""
    return Annotation({t: (tuple(sig.sites),) for t, sig in model.signatures.items()})


def singleton_annotation(model: Model) -> Annotation:
    return Annotation(
        {t: tuple((s,) for s in sig.sites) or ((),) for t, sig in model.signatures.items()}
    )


# ---------------------------------------------------------------------------
# fragments
# ---------------------------------------------------------------------------


def decompose(g: SiteGraph, ann: Annotation) -> list[SiteGraph]:
    """Cut a fully specified graph into fragment occurrences.

    Each (agent, class) pair becomes one node documenting exactly the class
    sites; nodes joined by a bond end up in the same occurrence.
    """
    node_of: dict[tuple[int, int], int] = {}
    nodes: list[tuple[int, int]] = []
    for i, agent in enumerate(g.agents):
        for k in range(len(ann.classes[agent.type])):
            node_of[(i, k)] = len(nodes)
            nodes.append((i, k))
    agents = []
    for i, k in nodes:
        agent = g.agents[i]
        cls = ann.classes[agent.type][k]
        sites = {}
        for name in cls:
            site = agent.site(name)
            if site is None:
                continue
            link = site.link
            if site.is_bond:
                j, other = link
                link = (node_of[(j, ann.class_index(g.agents[j].type, other))], other)
            sites[name] = Site(site.internal, link)
        agents.append(Agent.make(agent.type, sites))
    return SiteGraph(tuple(agents)).split()


@dataclass
class FragmentSet:
    annotation: Annotation
    fragments: list[Species]
    matrix: np.ndarray  # n_species x n_fragments occurrence counts
    species_keys: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._index = {f.key: i for i, f in enumerate(self.fragments)}

    def __len__(self) -> int:
        return len(self.fragments)

    @property
    def names(self) -> list[str]:
        return [to_kappa(f.graph) for f in self.fragments]

    def index(self, fragment: str | SiteGraph) -> int:
        key = fragment if isinstance(fragment, str) else graph_key(fragment)
        return self._index[key]

    def project(self, x: Sequence[float]) -> np.ndarray:
        """Fragment counts (or concentrations) of a species vector."""
        return np.asarray(x) @ self.matrix


def generate_fragments(
    model: Model,
    ann: Annotation,
    cap: int = DEFAULT_SPECIES_CAP,
    network: ReactionNetwork | None = None,
) -> FragmentSet:
    """Fragments occurring in the reachable species, with the projection matrix."""
    ann.validate(model)
    net = expand(model, cap) if network is None else network
    fragments: list[Species] = []
    index: dict[str, int] = {}
    rows = []
    for sp in net.species:
        row: dict[int, int] = defaultdict(int)
        for part in decompose(sp.graph, ann):
            frag = Species.from_graph(part)
            if frag.key not in index:
                if len(fragments) >= cap:
                    raise CapExceeded("fragment", cap, len(fragments))
                index[frag.key] = len(fragments)
                fragments.append(frag)
            row[index[frag.key]] += 1
        rows.append(row)
    M = np.zeros((net.n_species, len(fragments)), dtype=np.int64)
    for i, row in enumerate(rows):
        for k, n in row.items():
            M[i, k] = n
    return FragmentSet(ann, fragments, M, [sp.key for sp in net.species])


def project_state(x: Sequence[float], fragments: FragmentSet) -> np.ndarray:
    return fragments.project(x)


# ---------------------------------------------------------------------------
# deterministic reduction
# ---------------------------------------------------------------------------


@dataclass
class ReducedModel:
    network: ReactionNetwork  # over fragments
    fragments: FragmentSet
    projection: np.ndarray  # species x fragment-network species
    silent: list[tuple[str, str]]


def _fragment_filter(ann: Annotation):
    def accept(pattern_agent: Agent, target: Agent) -> bool:
        if pattern_agent.sites:
            return True
        first = ann.classes[target.type][0]
        return set(target.site_names) == set(first)

    return accept


def _per_rule(net: ReactionNetwork, rule: str) -> ReactionNetwork:
    reactions = []
    for r in net.reactions:
        contrib = tuple((n, m) for n, m in r.contributions if n == rule)
        if contrib:
            reactions.append(
                _constants(r.reactants, r.products, contrib, net.rule_constants, net.volume)
            )
    return ReactionNetwork(list(net.species), reactions, net.volume, list(net.names),
                           dict(net.rule_constants))


def reduce_ode(
    model: Model,
    ann: Annotation,
    cap: int = DEFAULT_SPECIES_CAP,
    network: ReactionNetwork | None = None,
    seed: int = 0,
    n_probes: int = 8,
) -> ReducedModel:
    """Rules rewritten over fragments, checked against the species ODE.

    The fragment network is obtained by applying every rule to fragments
    directly.  Its mass-action vector field must equal the projection of the
    species vector field; this is checked rule by rule at random positive
    concentrations and a :class:`ReductionError` names the first offending
    (rule, fragment) pair.
    """
    net = expand(model, cap) if network is None else network
    fset = generate_fragments(model, ann, cap, net)
    eng = _Expander(model.rules, Species.from_graph, None, cap, _fragment_filter(ann), "fragment")
    for frag in fset.fragments:
        eng.add(frag)
    eng.close()
    fnet = _network_from(eng, model.rules, net.volume)
    proj = np.zeros((net.n_species, fnet.n_species))
    proj[:, : len(fset)] = fset.matrix
    rng = np.random.default_rng(seed)
    names = [to_kappa(f.graph) for f in fnet.species]
    for rule in model.rules:
        full, red = _per_rule(net, rule.name), _per_rule(fnet, rule.name)
        for _ in range(n_probes):
            z = rng.uniform(0.1, 2.0, net.n_species)
            lhs = full.rhs(z) @ proj
            rhs = red.rhs(z @ proj)
            scale = max(1.0, float(np.abs(lhs).max(initial=0.0)))
            bad = np.flatnonzero(np.abs(lhs - rhs) > 1e-9 * scale)
            if bad.size:
                k = int(bad[0])
                raise ReductionError(
                    f"fragment dynamics not self-consistent: rule {rule.name!r}, "
                    f"fragment {names[k]} ({lhs[k]:.6g} vs {rhs[k]:.6g})",
                    rule.name,
                    names[k],
                )
    return ReducedModel(fnet, fset, proj, silent_rules(net, fset, model))


def silent_rules(net: ReactionNetwork, fset: FragmentSet, model: Model) -> list[tuple[str, str]]:
    """(rule, fragment) pairs where the rule moves the fragment between
    species but its net effect on the fragment count is always zero."""
    out = []
    M = fset.matrix
    for rule in model.rules:
        touched = np.zeros(len(fset), dtype=bool)
        moved = np.zeros(len(fset), dtype=bool)
        for r in net.reactions:
            if rule.name not in r.rules:
                continue
            delta = np.zeros(len(fset), dtype=np.int64)
            for i, n in r.reactants:
                touched |= M[i] > 0
                delta -= n * M[i]
            for i, n in r.products:
                touched |= M[i] > 0
                delta += n * M[i]
            moved |= delta != 0
        for k in np.flatnonzero(touched & ~moved):
            out.append((rule.name, to_kappa(fset.fragments[k].graph)))
    return out


# ---------------------------------------------------------------------------
# partitions and lumpability
# ---------------------------------------------------------------------------


@dataclass
class StatePartition:
    block_of: np.ndarray  # state index -> block id
    keys: list[tuple] = field(default_factory=list)
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.block_of = np.asarray(self.block_of, dtype=np.int64)
        n_blocks = int(self.block_of.max()) + 1 if len(self.block_of) else 0
        self.blocks = [[] for _ in range(n_blocks)]
        for i, b in enumerate(self.block_of):
            self.blocks[b].append(i)
        if not self.keys:
            self.keys = [(b,) for b in range(n_blocks)]
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            _check_weights(self, self.weights)

    def __len__(self) -> int:
        return len(self.blocks)

    def with_weights(self, beta: Sequence[float]) -> "StatePartition":
        return StatePartition(self.block_of, list(self.keys), np.asarray(beta, float))

    def indicator(self) -> np.ndarray:
        B = np.zeros((len(self.block_of), len(self.blocks)))
        B[np.arange(len(self.block_of)), self.block_of] = 1.0
        return B


def _check_weights(part: StatePartition, beta: np.ndarray, tol: float = 1e-9) -> None:
    if beta.shape != part.block_of.shape:
        raise ValueError("weights must give one value per state")
    if np.any(beta <= 0):
        raise ValueError("weights must be positive")
    for block in part.blocks:
        if abs(beta[block].sum() - 1.0) > tol:
            raise ValueError("weights must sum to one within every block")


def partition_from_keys(keys: Sequence[tuple]) -> StatePartition:
    ids: dict[tuple, int] = {}
    block_of = []
    for key in keys:
        block_of.append(ids.setdefault(key, len(ids)))
    return StatePartition(np.array(block_of), list(ids))


def induced_partition(chain: MarkovGraph, fragments: FragmentSet) -> StatePartition:
    """States in one block iff they have the same fragment counts."""
    X = np.asarray(chain.states, dtype=np.int64)
    F = X @ fragments.matrix
    return partition_from_keys([tuple(int(v) for v in row) for row in F])


def discrete_partition(chain: MarkovGraph) -> StatePartition:
    return StatePartition(np.arange(len(chain)), [tuple(x) for x in chain.states])


def _close(a: float, b: float, tol: float, scale: float) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b)) + 1e-12 * scale


@dataclass
class Verdict:
    ok: bool
    witness: dict | None = None

    def __bool__(self) -> bool:
        return self.ok


def check_forward_lumpable(chain: MarkovGraph, partition: StatePartition, tol: float = 1e-9) -> Verdict:
    """Every state of a block has the same total rate into every other block.

    The lexicographically smallest failing (block, x, x', target block) is
    returned as the witness.
    """
    W = chain.rate_matrix()
    agg = np.asarray((W @ partition.indicator()))
    scale = float(np.abs(agg).max(initial=0.0))
    for b, members in enumerate(partition.blocks):
        x = members[0]
        for y in members[1:]:
            for target in range(len(partition.blocks)):
                if target == b:
                    continue
                a, c = agg[x, target], agg[y, target]
                if not _close(a, c, tol, scale):
                    return Verdict(False, {
                        "block": b,
                        "x": chain.labels[x] if chain.labels else x,
                        "x_prime": chain.labels[y] if chain.labels else y,
                        "x_index": x,
                        "x_prime_index": y,
                        "target_block": target,
                        "rate_x": float(a),
                        "rate_x_prime": float(c),
                    })
    return Verdict(True)


def check_backward_bisimilar(
    chain: MarkovGraph,
    partition: StatePartition,
    weights: Sequence[float] | None = None,
    tol: float = 1e-9,
) -> Verdict:
    """Equal exit rates and weight-proportional inflows inside every block.

    For a source ``s`` outside block ``B`` the inflows must satisfy
    ``w(s, x) / beta(x) == w(s, x') / beta(x')``; transitions inside ``B``
    are compared through ``sum_{s in B} beta(s) w(s, x) / beta(x)``.
    """
    beta = partition.weights if weights is None else np.asarray(weights, dtype=float)
    if beta is None:
        raise ValueError("backward bisimulation needs within-block weights")
    _check_weights(partition, beta)
    W = chain.rate_matrix()
    Wc = W.tocsc()
    exits = np.asarray(W.sum(axis=1)).ravel()
    scale = float(exits.max(initial=0.0))
    for b, members in enumerate(partition.blocks):
        if len(members) < 2:
            continue
        inside = set(members)
        x = members[0]
        for y in members[1:]:
            if not _close(exits[x], exits[y], tol, scale):
                return Verdict(False, {"kind": "exit_rate", "block": b, "x_index": x, "x_prime_index": y,
                                       "value_x": float(exits[x]), "value_x_prime": float(exits[y])})
        sources = sorted({int(s) for m in members for s in Wc[:, m].indices} - inside)
        for s in sources:
            ref = W[s, x] / beta[x]
            for y in members[1:]:
                val = W[s, y] / beta[y]
                if not _close(ref, val, tol, scale):
                    return Verdict(False, {"kind": "inflow", "block": b, "source_index": s,
                                           "x_index": x, "x_prime_index": y,
                                           "value_x": float(ref), "value_x_prime": float(val)})
        internal = [sum(beta[s] * W[s, m] for s in members if s != m) / beta[m] for m in members]
        for y, val in zip(members[1:], internal[1:]):
            if not _close(internal[0], val, tol, scale):
                return Verdict(False, {"kind": "internal_inflow", "block": b, "x_index": x,
                                       "x_prime_index": y, "value_x": float(internal[0]),
                                       "value_x_prime": float(val)})
    return Verdict(True)


def lump(
    chain: MarkovGraph,
    partition: StatePartition,
    approximate: bool = False,
    tol: float = 1e-9,
) -> MarkovGraph:
    """Aggregate chain over blocks, rates read from the first member of each block.

    Raises :class:`NotLumpable` unless the partition is forward lumpable or
    ``approximate`` is set.
    """
    verdict = check_forward_lumpable(chain, partition, tol)
    if not verdict and not approximate:
        raise NotLumpable(verdict.witness)
    weights: dict[tuple[int, int], float] = {}
    terms: dict[tuple[int, int], dict[str, float]] = {}
    block_of = partition.block_of
    for (i, j), w in chain.weights.items():
        bi, bj = int(block_of[i]), int(block_of[j])
        if bi == bj or partition.blocks[bi][0] != i:
            continue
        weights[(bi, bj)] = weights.get((bi, bj), 0.0) + w
        bucket = terms.setdefault((bi, bj), {})
        for name, coef in chain.terms.get((i, j), {}).items():
            bucket[name] = bucket.get(name, 0.0) + coef
    p0 = np.array([chain.initial[m].sum() for m in partition.blocks])
    labels = []
    for members in partition.blocks:
        if chain.labels:
            labels.append("+".join(chain.labels[m] for m in members))
        else:
            labels.append("+".join(str(m) for m in members))
    return MarkovGraph(list(partition.keys), weights, p0, terms, labels)


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------


def weights_from_symmetry(states: Sequence[SiteGraph]) -> np.ndarray:
    """Within-block weights proportional to ``1 / |Aut(state)|``."""
    inv = np.array([1.0 / count_automorphisms(g) for g in states])
    return inv / inv.sum()


def symmetry_weights(chain: MarkovGraph, partition: StatePartition,
                     species: Sequence[Species]) -> np.ndarray:
    """:func:`weights_from_symmetry` for every block of a species-level chain."""
    inv = np.array([1.0 / mixture_automorphisms(x, species) for x in chain.states])
    beta = np.empty_like(inv)
    for members in partition.blocks:
        beta[members] = inv[members] / inv[members].sum()
    return beta


@dataclass
class Reconstruction:
    distribution: DistributionTrajectory
    exact: bool
    initial_mismatch: float


def reconstruct(
    lumped: DistributionTrajectory,
    partition: StatePartition,
    chain: MarkovGraph,
    weights: Sequence[float] | None = None,
    tol: float = 1e-9,
) -> Reconstruction:
    """``p(x) = beta(x) * p(block(x))`` for every original state.

    Exact at all times when the initial law already splits every block in
    the ratio ``beta``; otherwise the error decays with time.
    """
    beta = partition.weights if weights is None else np.asarray(weights, dtype=float)
    verdict = check_backward_bisimilar(chain, partition, beta, tol)
    if not verdict:
        raise ReductionError(f"weights fail the backward bisimulation check: {verdict.witness}")
    probs = lumped.probs[:, partition.block_of] * beta[None, :]
    block_p0 = np.array([chain.initial[m].sum() for m in partition.blocks])
    mismatch = float(np.abs(chain.initial - beta * block_p0[partition.block_of]).max(initial=0.0))
    dist = DistributionTrajectory(lumped.times, probs, lumped.method, lumped.tol)
    return Reconstruction(dist, mismatch <= tol, mismatch)
