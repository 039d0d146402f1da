"""Site graphs: signatures, patterns, species, mixtures and their morphisms.

A site graph is a list of typed agents.  Each agent carries a map from
site names to :class:`Site` records holding an optional internal state and
a link state.  The same structure is used for rule patterns (partially
specified), species (connected, fully specified) and whole mixtures.

Link states are encoded as

* ``None``            -- unspecified ("don't care")
* ``FREE``            -- the site is free
* ``BOUND``           -- bound to something, partner not given
* ``(agent, site)``   -- bound to ``site`` of agent number ``agent``
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Iterator, Mapping, Sequence, Union

FREE = "free"
BOUND = "bound"

Link = Union[None, str, tuple[int, str]]
Embedding = tuple[int, ...]


class SiteGraphError(ValueError):
    """Raised for malformed site graphs."""


class SignatureError(SiteGraphError):
    """Raised when a graph does not conform to the agent signatures."""


@dataclass(frozen=True)
class Site:
    internal: str | None = None
    link: Link = None

    @property
    def is_bond(self) -> bool:
        return isinstance(self.link, tuple)


@dataclass(frozen=True)
class Agent:
    type: str
    sites: tuple[tuple[str, Site], ...] = ()

    @classmethod
    def make(cls, type_: str, sites: Mapping[str, Site] | None = None) -> "Agent":
        items = tuple(sorted((sites or {}).items()))
        return cls(type_, items)

    @cached_property
    def site_map(self) -> dict[str, Site]:
        return dict(self.sites)

    def site(self, name: str) -> Site | None:
        return self.site_map.get(name)

    @property
    def site_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.sites)


@dataclass(frozen=True)
class AgentSignature:
    """Interface of one agent type: sites, internal states, binding partners."""

    agent_type: str
    sites: tuple[str, ...]
    states: Mapping[str, frozenset[str]] = field(default_factory=dict)
    partners: Mapping[str, frozenset[tuple[str, str]]] = field(default_factory=dict)

    def allowed_states(self, site: str) -> frozenset[str]:
        return self.states.get(site, frozenset())

    def allowed_partners(self, site: str) -> frozenset[tuple[str, str]]:
        return self.partners.get(site, frozenset())


Signatures = Mapping[str, AgentSignature]


def contact_map_asymmetries(signatures: Signatures) -> list[tuple[str, str, str, str]]:
    """Return every declared partner ``A.x -> B.y`` lacking ``B.y -> A.x``."""
    bad = []
    for sig in signatures.values():
        for site in sig.sites:
            for ptype, psite in sorted(sig.allowed_partners(site)):
                other = signatures.get(ptype)
                if other is None or (sig.agent_type, site) not in other.allowed_partners(psite):
                    bad.append((sig.agent_type, site, ptype, psite))
    return bad


@dataclass(frozen=True)
class SiteGraph:
    agents: tuple[Agent, ...] = ()

    def __post_init__(self):
        for i, agent in enumerate(self.agents):
            for name, site in agent.sites:
                if not site.is_bond:
                    continue
                j, other = site.link
                if not 0 <= j < len(self.agents):
                    raise SiteGraphError(f"agent {i} site {name}: dangling bond to agent {j}")
                if (j, other) == (i, name):
                    raise SiteGraphError(f"agent {i} site {name} bound to itself")
                back = self.agents[j].site(other)
                if back is None or back.link != (i, name):
                    raise SiteGraphError(f"bond {i}.{name} -> {j}.{other} is not mutual")

    def __len__(self) -> int:
        return len(self.agents)

    def __iter__(self) -> Iterator[Agent]:
        return iter(self.agents)

    @cached_property
    def bonds(self) -> tuple[tuple[tuple[int, str], tuple[int, str]], ...]:
        out = []
        for i, agent in enumerate(self.agents):
            for name, site in agent.sites:
                if site.is_bond and (i, name) < site.link:
                    out.append(((i, name), site.link))
        return tuple(out)

    def neighbours(self, i: int) -> list[int]:
        return [site.link[0] for _, site in self.agents[i].sites if site.is_bond]

    @cached_property
    def components(self) -> tuple[tuple[int, ...], ...]:
        """Connected components as sorted tuples of agent indices."""
        seen: set[int] = set()
        comps = []
        for start in range(len(self.agents)):
            if start in seen:
                continue
            seen.add(start)
            comp = [start]
            queue = deque([start])
            while queue:
                for j in self.neighbours(queue.popleft()):
                    if j not in seen:
                        seen.add(j)
                        comp.append(j)
                        queue.append(j)
            comps.append(tuple(sorted(comp)))
        return tuple(comps)

    def is_connected(self) -> bool:
        return len(self.components) <= 1

    def subgraph(self, indices: Sequence[int]) -> "SiteGraph":
        """Induced subgraph on ``indices`` (must be closed under bonds)."""
        new = {old: k for k, old in enumerate(indices)}
        agents = []
        for old in indices:
            agent = self.agents[old]
            sites = {}
            for name, site in agent.sites:
                link = site.link
                if site.is_bond:
                    if link[0] not in new:
                        raise SiteGraphError("subgraph is not closed under bonds")
                    link = (new[link[0]], link[1])
                sites[name] = Site(site.internal, link)
            agents.append(Agent.make(agent.type, sites))
        return SiteGraph(tuple(agents))

    def split(self) -> list["SiteGraph"]:
        return [self.subgraph(c) for c in self.components]

    def is_fully_specified(self, signatures: Signatures | None = None) -> bool:
        for agent in self.agents:
            for _, site in agent.sites:
                if site.link is None or site.link == BOUND:
                    return False
            if signatures is not None:
                sig = signatures.get(agent.type)
                if sig is None or set(agent.site_names) != set(sig.sites):
                    return False
                for name, site in agent.sites:
                    if sig.allowed_states(name) and site.internal is None:
                        return False
        return True


def disjoint_union(graphs: Iterable[SiteGraph]) -> SiteGraph:
    agents: list[Agent] = []
    for g in graphs:
        offset = len(agents)
        for agent in g.agents:
            sites = {}
            for name, site in agent.sites:
                link = site.link
                if site.is_bond:
                    link = (link[0] + offset, link[1])
                sites[name] = Site(site.internal, link)
            agents.append(Agent.make(agent.type, sites))
    return SiteGraph(tuple(agents))


def check_conformance(g: SiteGraph, signatures: Signatures) -> list[str]:
    """Return human-readable conformance problems of ``g`` (empty if none)."""
    problems = []
    for i, agent in enumerate(g.agents):
        sig = signatures.get(agent.type)
        if sig is None:
            problems.append(f"unknown agent type {agent.type!r}")
            continue
        for name, site in agent.sites:
            if name not in sig.sites:
                problems.append(f"agent {agent.type} has no site {name!r}")
                continue
            if site.internal is not None and site.internal not in sig.allowed_states(name):
                problems.append(f"{agent.type}.{name}: state {site.internal!r} not allowed")
            if site.is_bond:
                j, other = site.link
                partner = (g.agents[j].type, other)
                if partner not in sig.allowed_partners(name):
                    problems.append(
                        f"bond {agent.type}.{name}-{partner[0]}.{partner[1]} not in contact map"
                    )
            elif site.link == BOUND and not sig.allowed_partners(name):
                problems.append(f"{agent.type}.{name} bound but has no partners")
    return problems


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

AgentFilter = Callable[[Agent, Agent], bool]


def _site_matches(ps: Site, ts: Site) -> bool:
    if ps.internal is not None and ps.internal != ts.internal:
        return False
    link = ps.link
    if link is None:
        return True
    if link == FREE:
        return ts.link == FREE
    if link == BOUND:
        return ts.link == BOUND or ts.is_bond
    return ts.is_bond


def _grow(
    pattern: SiteGraph,
    target: SiteGraph,
    root: int,
    image: int,
    used: set[int],
    agent_filter: AgentFilter | None,
) -> dict[int, int] | None:
    """Extend ``root -> image`` along bonds; None if it does not embed.

    Site graphs have at most one bond per site, so once one agent of a
    connected pattern is placed the rest of the map is forced.
    """
    mapping = {root: image}
    taken = set(used)
    taken.add(image)
    queue = deque([root])
    while queue:
        p = queue.popleft()
        pa, ta = pattern.agents[p], target.agents[mapping[p]]
        if pa.type != ta.type:
            return None
        if agent_filter is not None and not agent_filter(pa, ta):
            return None
        for name, ps in pa.sites:
            ts = ta.site(name)
            if ts is None or not _site_matches(ps, ts):
                return None
            if not ps.is_bond:
                continue
            q, qsite = ps.link
            tq, tsite = ts.link
            if tsite != qsite:
                return None
            if q in mapping:
                if mapping[q] != tq:
                    return None
            else:
                if tq in taken:
                    return None
                mapping[q] = tq
                taken.add(tq)
                queue.append(q)
    return mapping


def _component_embeddings(
    pattern: SiteGraph,
    comp: Sequence[int],
    target: SiteGraph,
    agent_filter: AgentFilter | None,
) -> list[dict[int, int]]:
    root = comp[0]
    rtype = pattern.agents[root].type
    out = []
    for t, agent in enumerate(target.agents):
        if agent.type != rtype:
            continue
        m = _grow(pattern, target, root, t, set(), agent_filter)
        if m is not None:
            out.append(m)
    return out


def find_embeddings(
    pattern: SiteGraph,
    target: SiteGraph,
    signatures: Signatures | None = None,
    agent_filter: AgentFilter | None = None,
) -> list[Embedding]:
    """All injective structure-preserving maps from ``pattern`` into ``target``.

    Embeddings are returned as tuples ``e`` with ``e[i]`` the target index of
    pattern agent ``i``.  Unspecified pattern attributes match anything.
    """
    if signatures is not None:
        problems = check_conformance(pattern, signatures) + check_conformance(target, signatures)
        if problems:
            raise SignatureError("; ".join(problems))
    per_comp = [
        _component_embeddings(pattern, comp, target, agent_filter)
        for comp in pattern.components
    ]
    results: list[Embedding] = []
    n = len(pattern.agents)

    def combine(k: int, acc: dict[int, int], used: set[int]) -> None:
        if k == len(per_comp):
            results.append(tuple(acc[i] for i in range(n)))
            return
        for m in per_comp[k]:
            images = m.values()
            if used.isdisjoint(images):
                acc.update(m)
                combine(k + 1, acc, used | set(images))
                for key in m:
                    del acc[key]

    combine(0, {}, set())
    return results


def count_embeddings(pattern: SiteGraph, target: SiteGraph) -> int:
    return len(find_embeddings(pattern, target))


def verify_embedding(pattern: SiteGraph, target: SiteGraph, emb: Embedding) -> bool:
    """Independent check that ``emb`` is an embedding (used by tests)."""
    if len(emb) != len(pattern.agents) or len(set(emb)) != len(emb):
        return False
    for i, agent in enumerate(pattern.agents):
        tgt = target.agents[emb[i]]
        if tgt.type != agent.type:
            return False
        for name, ps in agent.sites:
            ts = tgt.site(name)
            if ts is None or not _site_matches(ps, ts):
                return False
            if ps.is_bond and ts.link != (emb[ps.link[0]], ps.link[1]):
                return False
    return True


# ---------------------------------------------------------------------------
# canonical forms and automorphisms
# ---------------------------------------------------------------------------


def _link_code(link: Link, labels: dict[int, int]) -> str:
    if link is None:
        return "?"
    if link == FREE:
        return "."
    if link == BOUND:
        return "_"
    return f"{labels[link[0]]}.{link[1]}"


def _rooted_code(g: SiteGraph, root: int) -> tuple[str, list[int]]:
    """Serialise the component of ``root`` by a deterministic traversal."""
    labels = {root: 0}
    order = [root]
    k = 0
    while k < len(order):
        for _, site in g.agents[order[k]].sites:
            if site.is_bond and site.link[0] not in labels:
                labels[site.link[0]] = len(order)
                order.append(site.link[0])
        k += 1
    parts = []
    for i in order:
        agent = g.agents[i]
        sites = ",".join(
            f"{name}~{'' if s.internal is None else s.internal}/{_link_code(s.link, labels)}"
            for name, s in agent.sites
        )
        parts.append(f"{agent.type}({sites})")
    return "|".join(parts), order


def component_code(g: SiteGraph, comp: Sequence[int] | None = None) -> tuple[str, int, list[int]]:
    """Canonical code of a connected component, its automorphism count and
    a canonical agent order."""
    if comp is None:
        comp = range(len(g.agents))
    best: str | None = None
    best_order: list[int] = []
    hits = 0
    for root in comp:
        code, order = _rooted_code(g, root)
        if best is None or code < best:
            best, best_order, hits = code, order, 1
        elif code == best:
            hits += 1
    return best or "", hits, best_order


def graph_key(g: SiteGraph) -> str:
    """Isomorphism-invariant key for any site graph, patterns included."""
    codes = sorted(component_code(g, c)[0] for c in g.components)
    return " + ".join(codes)


def canonical_key(g: SiteGraph, signatures: Signatures | None = None) -> str:
    """Key equal for two fully specified graphs iff they are isomorphic."""
    if not g.is_fully_specified(signatures):
        raise SiteGraphError("canonical_key needs a fully specified site graph")
    return graph_key(g)


def canonical_form(g: SiteGraph) -> SiteGraph:
    """Reindex a connected graph into its canonical agent order."""
    if not g.agents:
        return g
    _, _, order = component_code(g)
    return g.subgraph(order)


def count_automorphisms(g: SiteGraph) -> int:
    """|Aut(g)| from components: per-class automorphisms times multiplicity!."""
    classes: Counter[str] = Counter()
    per_class: dict[str, int] = {}
    for comp in g.components:
        code, aut, _ = component_code(g, comp)
        classes[code] += 1
        per_class[code] = aut
    total = 1
    for code, mult in classes.items():
        total *= per_class[code] ** mult * math.factorial(mult)
    return total


def count_automorphisms_bruteforce(g: SiteGraph) -> int:
    return sum(1 for e in find_embeddings(g, g) if len(set(e)) == len(g.agents))


# ---------------------------------------------------------------------------
# species and mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Species:
    """A connected, fully specified site graph in canonical agent order."""

    graph: SiteGraph
    key: str

    @classmethod
    def from_graph(cls, g: SiteGraph) -> "Species":
        if not g.is_connected() or not g.agents:
            raise SiteGraphError("a species must be a non-empty connected site graph")
        canon = canonical_form(g)
        return cls(canon, component_code(canon)[0])

    @cached_property
    def automorphisms(self) -> int:
        return component_code(self.graph)[1]

    @property
    def short_name(self) -> str:
        return "".join(a.type for a in self.graph.agents)


def mixture_graph(counts: Sequence[int], species: Sequence[Species]) -> SiteGraph:
    """Flat site graph of a count vector over ``species``."""
    parts = []
    for n, sp in zip(counts, species):
        parts.extend([sp.graph] * int(n))
    return disjoint_union(parts)


def mixture_counts(g: SiteGraph) -> tuple[Counter[str], dict[str, Species]]:
    """Split a flat mixture graph into species keys with multiplicities."""
    counts: Counter[str] = Counter()
    found: dict[str, Species] = {}
    for part in g.split():
        sp = Species.from_graph(part)
        counts[sp.key] += 1
        found.setdefault(sp.key, sp)
    return counts, found


def mixture_automorphisms(counts: Sequence[int], species: Sequence[Species]) -> int:
    """|Aut| of a mixture given as a count vector, without building the graph."""
    total = 1
    for n, sp in zip(counts, species):
        n = int(n)
        if n:
            total *= sp.automorphisms ** n * math.factorial(n)
    return total


def to_kappa(g: SiteGraph) -> str:
    """Render a site graph in the model file's pattern syntax."""
    labels: dict[tuple[tuple[int, str], tuple[int, str]], int] = {}
    for n, bond in enumerate(g.bonds, start=1):
        labels[bond] = n
    out = []
    for i, agent in enumerate(g.agents):
        sites = []
        for name, site in agent.sites:
            text = name
            if site.internal is not None:
                text += f"~{site.internal}"
            if site.link is None:
                text += "?"
            elif site.link == BOUND:
                text += "!_"
            elif site.is_bond:
                key = tuple(sorted([(i, name), site.link]))
                text += f"!{labels[key]}"
            sites.append(text)
        out.append(f"{agent.type}({','.join(sites)})")
    return ", ".join(out)
