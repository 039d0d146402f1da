"""Reaction-network expansion of rule sets and mass-action rate laws."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .parser import Model, Rule
from .sitegraph import (
    FREE,
    Agent,
    Signatures,
    Site,
    SiteGraph,
    Species,
    check_conformance,
    count_automorphisms,
    disjoint_union,
    find_embeddings,
)

DEFAULT_SPECIES_CAP = 10_000


class CapExceeded(RuntimeError):
    def __init__(self, what: str, cap: int, reached: int):
        self.cap, self.reached = cap, reached
        super().__init__(f"{what} cap of {cap} exceeded ({reached} found so far)")


class ExpansionError(RuntimeError):
    """A rule application produced a graph outside the signatures."""


def convert_rate(k: float, molecularity: int, volume: float) -> float:
    """Deterministic constant to stochastic constant: ``c = k * V**(1 - m)``.

    Unimolecular constants are volume independent, bimolecular ones scale as
    ``1/V`` and zero-order ones as ``V``.
    """
    if volume <= 0:
        raise ValueError("volume must be positive")
    if molecularity not in (0, 1, 2):
        raise ValueError(f"unsupported molecularity {molecularity}")
    return k * volume ** (1 - molecularity)


@dataclass(frozen=True)
class Reaction:
    """One mass-action reaction between species indices.

    ``contributions`` holds ``(rule name, multiplier)`` pairs: the stochastic
    constant is ``sum(multiplier * c_rule)``.
    """

    reactants: tuple[tuple[int, int], ...]
    products: tuple[tuple[int, int], ...]
    k: float
    c: float
    contributions: tuple[tuple[str, float], ...] = ()

    @property
    def molecularity(self) -> int:
        return sum(n for _, n in self.reactants)

    @property
    def rules(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.contributions)

    def change(self) -> dict[int, int]:
        out: Counter[int] = Counter()
        for i, n in self.products:
            out[i] += n
        for i, n in self.reactants:
            out[i] -= n
        return {i: n for i, n in out.items() if n}


@dataclass
class ReactionNetwork:
    species: list[Species]
    reactions: list[Reaction]
    volume: float = 1.0
    names: list[str] = field(default_factory=list)
    rule_constants: dict[str, tuple[float, str, int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.names:
            self.names = _short_names(self.species)
        self._key_index = {sp.key: i for i, sp in enumerate(self.species)}
        if len(self._key_index) != len(self.species):
            raise ValueError("duplicate species keys")

    @property
    def n_species(self) -> int:
        return len(self.species)

    def index(self, key_or_name: str) -> int:
        if key_or_name in self._key_index:
            return self._key_index[key_or_name]
        return self.names.index(key_or_name)

    def consumption_matrix(self) -> np.ndarray:
        """Dense ``P``: species x reactions."""
        P = np.zeros((self.n_species, len(self.reactions)), dtype=np.int64)
        for j, r in enumerate(self.reactions):
            for i, n in r.reactants:
                P[i, j] += n
        return P

    def production_matrix(self) -> np.ndarray:
        Q = np.zeros((self.n_species, len(self.reactions)), dtype=np.int64)
        for j, r in enumerate(self.reactions):
            for i, n in r.products:
                Q[i, j] += n
        return Q

    def change_matrix(self) -> np.ndarray:
        """Dense ``C = production - consumption``."""
        return self.production_matrix() - self.consumption_matrix()

    def deterministic_rate(self, j: int, z: Sequence[float]) -> float:
        r = self.reactions[j]
        value = r.k
        for i, n in r.reactants:
            value *= z[i] ** n
        return value

    def propensity(self, j: int, x: Sequence[int]) -> float:
        r = self.reactions[j]
        value = r.c
        for i, n in r.reactants:
            value *= math.comb(int(x[i]), n)
        return value

    def rates(self, z: Sequence[float]) -> np.ndarray:
        return np.array([self.deterministic_rate(j, z) for j in range(len(self.reactions))])

    def rhs(self, z: Sequence[float]) -> np.ndarray:
        """Right-hand side of the mass-action ODE: ``C @ f(z)``."""
        out = np.zeros(self.n_species)
        for j, r in enumerate(self.reactions):
            f = self.deterministic_rate(j, z)
            if f == 0.0:
                continue
            for i, n in r.reactants:
                out[i] -= n * f
            for i, n in r.products:
                out[i] += n * f
        return out

    def at_volume(self, volume: float) -> "ReactionNetwork":
        """Same network with stochastic constants recomputed for ``volume``."""
        reactions = [
            _constants(r.reactants, r.products, r.contributions, self.rule_constants, volume)
            for r in self.reactions
        ]
        return ReactionNetwork(
            list(self.species), reactions, volume, list(self.names), dict(self.rule_constants)
        )

    def scaled(self, factor: float) -> "ReactionNetwork":
        """Every rate constant multiplied by ``factor``."""
        consts = {n: (v * factor, kind, m) for n, (v, kind, m) in self.rule_constants.items()}
        reactions = [
            replace(r, k=r.k * factor, c=r.c * factor) for r in self.reactions
        ]
        return ReactionNetwork(list(self.species), reactions, self.volume, list(self.names), consts)

    def initial_state(self, model: Model) -> np.ndarray:
        x = np.zeros(self.n_species, dtype=np.int64)
        for decl in model.init:
            sp = Species.from_graph(decl.species)
            x[self.index(sp.key)] += decl.count
        return x


def _short_names(species: Sequence[Species]) -> list[str]:
    from .sitegraph import to_kappa

    short = [sp.short_name for sp in species]
    counts = Counter(short)
    return [s if counts[s] == 1 else to_kappa(sp.graph) for s, sp in zip(short, species)]


def _rule_stochastic_constant(value: float, kind: str, molecularity: int, volume: float) -> float:
    if kind == "sto":
        return value
    return convert_rate(value, molecularity, volume)


def _constants(
    reactants: tuple[tuple[int, int], ...],
    products: tuple[tuple[int, int], ...],
    contributions: tuple[tuple[str, float], ...],
    rule_constants: dict[str, tuple[float, str, int]],
    volume: float,
) -> Reaction:
    c = 0.0
    for name, mult in contributions:
        value, kind, mol = rule_constants[name]
        c += mult * _rule_stochastic_constant(value, kind, mol, volume)
    order = sum(n for _, n in reactants)
    sym = math.prod(math.factorial(n) for _, n in reactants)
    k = c * volume ** (order - 1) / sym
    return Reaction(reactants, products, k, c, contributions)


# ---------------------------------------------------------------------------
# rule application
# ---------------------------------------------------------------------------


def apply_rule(rule: Rule, target: SiteGraph, emb: Sequence[int]) -> SiteGraph:
    """Rewrite ``target`` along the embedding of ``rule.lhs``."""
    sites = [dict(a.sites) for a in target.agents]
    for p, (la, ra) in enumerate(zip(rule.lhs.agents, rule.rhs.agents)):
        t = emb[p]
        for name, ls in la.sites:
            rs = ra.site(name)
            cur = sites[t][name]
            internal = rs.internal if rs.internal is not None else cur.internal
            sites[t][name] = Site(internal, cur.link)
            if ls.link == rs.link:
                continue
            if cur.is_bond:
                j, other = cur.link
                sites[j][other] = Site(sites[j][other].internal, FREE)
                sites[t][name] = Site(sites[t][name].internal, FREE)
    for p, ra in enumerate(rule.rhs.agents):
        for name, rs in ra.sites:
            if not rs.is_bond or rule.lhs.agents[p].site(name).link == rs.link:
                continue
            q, other = rs.link
            t, u = emb[p], emb[q]
            sites[t][name] = Site(sites[t][name].internal, (u, other))
    agents = tuple(Agent.make(a.type, s) for a, s in zip(target.agents, sites))
    return SiteGraph(agents)


def _set_partitions(items: list[int]) -> Iterable[list[list[int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]
        yield [[first]] + part


@dataclass
class _RulePlan:
    rule: Rule
    aut: int
    groups: list[tuple[SiteGraph, list[int]]]  # (group pattern, lhs agent indices)
    partitions: list[list[int]]  # indices into groups


def _plan(rule: Rule) -> _RulePlan:
    comps = list(rule.lhs.components)
    groups: list[tuple[SiteGraph, list[int]]] = []
    index: dict[tuple[int, ...], int] = {}
    partitions = []
    for part in _set_partitions(list(range(len(comps)))):
        ids = []
        for block in part:
            agents = sorted(a for c in block for a in comps[c])
            key = tuple(agents)
            if key not in index:
                index[key] = len(groups)
                groups.append((rule.lhs.subgraph(agents), agents))
            ids.append(index[key])
        partitions.append(ids)
    return _RulePlan(rule, count_automorphisms(rule.lhs), groups, partitions)


class _Expander:
    """Shared closure engine for species and for fragments.

    ``objects`` are canonical connected site graphs (species or fragments);
    rule outcomes are split back into objects with ``make``.
    """

    def __init__(
        self,
        rules: Sequence[Rule],
        make: Callable[[SiteGraph], Species],
        signatures: Signatures | None,
        cap: int,
        agent_filter=None,
        what: str = "species",
    ):
        self.plans = [_plan(r) for r in rules]
        self.make = make
        self.signatures = signatures
        self.cap = cap
        self.agent_filter = agent_filter
        self.what = what
        self.objects: list[Species] = []
        self.index: dict[str, int] = {}
        self._emb_cache: dict[tuple[int, int, int], list[tuple[int, ...]]] = {}

    def add(self, sp: Species) -> int:
        if sp.key in self.index:
            return self.index[sp.key]
        if len(self.objects) >= self.cap:
            raise CapExceeded(self.what, self.cap, len(self.objects))
        self.index[sp.key] = len(self.objects)
        self.objects.append(sp)
        return self.index[sp.key]

    def _group_embeddings(self, r: int, g: int, s: int) -> list[tuple[int, ...]]:
        key = (r, g, s)
        if key not in self._emb_cache:
            pattern = self.plans[r].groups[g][0]
            self._emb_cache[key] = find_embeddings(
                pattern, self.objects[s].graph, agent_filter=self.agent_filter
            )
        return self._emb_cache[key]

    def _outcomes(self, r: int, partition: list[int], objs: tuple[int, ...]):
        """Yield product object indices for each embedding of the partition."""
        plan = self.plans[r]
        per_group = [self._group_embeddings(r, g, s) for g, s in zip(partition, objs)]
        if any(not e for e in per_group):
            return
        target = disjoint_union(self.objects[s].graph for s in objs)
        offsets = list(itertools.accumulate([0] + [len(self.objects[s].graph) for s in objs]))
        for choice in itertools.product(*per_group):
            emb = [0] * len(plan.rule.lhs.agents)
            for gi, (g, e) in enumerate(zip(partition, choice)):
                for local, lhs_agent in enumerate(plan.groups[g][1]):
                    emb[lhs_agent] = e[local] + offsets[gi]
            result = apply_rule(plan.rule, target, emb)
            if self.signatures is not None:
                problems = check_conformance(result, self.signatures)
                if problems:
                    raise ExpansionError(f"rule {plan.rule.name!r}: " + "; ".join(problems))
            yield [self.make(part) for part in result.split()]

    def _candidates(self, r: int, g: int, hi: int) -> list[int]:
        return [s for s in range(hi) if self._group_embeddings(r, g, s)]

    def close(self, frontier_start: int = 0) -> None:
        lo = frontier_start
        while lo < len(self.objects):
            hi = len(self.objects)
            for r, plan in enumerate(self.plans):
                for partition in plan.partitions:
                    lists = [self._candidates(r, g, hi) for g in partition]
                    for objs in itertools.product(*lists):
                        if max(objs) < lo:
                            continue
                        for products in self._outcomes(r, partition, objs):
                            for sp in products:
                                self.add(sp)
            lo = hi

    def reactions(self) -> list[tuple[dict, dict, str, float, int]]:
        """All instances as (reactants, products, rule, multiplier, count)."""
        merged: dict[tuple, dict] = {}
        order: list[tuple] = []
        n = len(self.objects)
        for r, plan in enumerate(self.plans):
            for partition in plan.partitions:
                lists = [self._candidates(r, g, n) for g in partition]
                for objs in itertools.product(*lists):
                    reactants = Counter(objs)
                    sym = math.prod(math.factorial(m) for m in reactants.values())
                    for products in self._outcomes(r, partition, objs):
                        prod = Counter(self.index[sp.key] for sp in products)
                        key = (tuple(sorted(reactants.items())), tuple(sorted(prod.items())))
                        if key not in merged:
                            merged[key] = {}
                            order.append(key)
                        contrib = merged[key]
                        contrib[plan.rule.name] = contrib.get(plan.rule.name, 0.0) + sym / plan.aut
        out = []
        for key in order:
            if key[0] == key[1]:
                continue
            out.append((key[0], key[1], tuple(merged[key].items())))
        return out


def expand(
    model: Model,
    cap: int = DEFAULT_SPECIES_CAP,
    volume: float | None = None,
) -> ReactionNetwork:
    """Species reachable from the initial mixture, and every rule instance.

    Species are numbered in discovery order (initial species first, then by
    rule order); reactions are listed rule by rule.  Instances with identical
    consumption and production vectors are merged by summing constants.
    """
    volume = model.volume if volume is None else volume
    eng = _Expander(model.rules, Species.from_graph, model.signatures, cap)
    for decl in model.init:
        eng.add(Species.from_graph(decl.species))
    eng.close()
    return _network_from(eng, model.rules, volume)


def _network_from(eng: _Expander, rules: Sequence[Rule], volume: float) -> ReactionNetwork:
    rule_constants = {r.name: (r.rate, r.kind, r.molecularity) for r in rules}
    reactions = [
        _constants(a, b, contrib, rule_constants, volume) for a, b, contrib in eng.reactions()
    ]
    return ReactionNetwork(list(eng.objects), reactions, volume, rule_constants=rule_constants)


def rule_propensity(model: Model, rule: Rule, mixture: SiteGraph, volume: float | None = None) -> float:
    """Total propensity of ``rule`` on a flat mixture: ``c * |emb| / |Aut(lhs)|``."""
    volume = model.volume if volume is None else volume
    c = _rule_stochastic_constant(rule.rate, rule.kind, rule.molecularity, volume)
    return c * len(find_embeddings(rule.lhs, mixture)) / count_automorphisms(rule.lhs)


def agent_content(net: ReactionNetwork) -> tuple[list[str], np.ndarray]:
    """Agent types and the species x type matrix of agent counts."""
    types = sorted({a.type for sp in net.species for a in sp.graph.agents})
    M = np.zeros((net.n_species, len(types)), dtype=np.int64)
    for i, sp in enumerate(net.species):
        for a in sp.graph.agents:
            M[i, types.index(a.type)] += 1
    return types, M
