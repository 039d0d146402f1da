"""Shared test utilities: model loading, random graphs and brute-force oracles."""

from __future__ import annotations

import itertools
import random
from pathlib import Path

from fraglump.parser import parse_model
from fraglump.sitegraph import BOUND, FREE, Agent, Site, SiteGraph

MODELS = Path(__file__).resolve().parent.parent / "models"


def load(name: str):
    return parse_model((MODELS / f"{name}.ka").read_text())


# -- random fully specified graphs over a small all-to-all contact map ------

RANDOM_TYPES = {"X": ("a", "b", "c"), "Y": ("a", "b", "s"), "Z": ("a",)}
STATEFUL = {("Y", "s"): ("u", "p")}


def random_species(rng: random.Random, n_agents: int, extra_bonds: int = 1) -> SiteGraph:
    """Connected, fully specified graph built from a random spanning tree."""
    while True:
        types = [rng.choice(list(RANDOM_TYPES)) for _ in range(n_agents)]
        links: dict[tuple[int, str], tuple[int, str]] = {}
        ok = True
        for k in range(1, n_agents):
            mine = [s for s in RANDOM_TYPES[types[k]] if (k, s) not in links]
            theirs = [(j, s) for j in range(k) for s in RANDOM_TYPES[types[j]] if (j, s) not in links]
            if not mine or not theirs:
                ok = False
                break
            a, b = (k, rng.choice(mine)), rng.choice(theirs)
            links[a], links[b] = b, a
        if not ok:
            continue
        for _ in range(extra_bonds):
            free = [(i, s) for i in range(n_agents) for s in RANDOM_TYPES[types[i]] if (i, s) not in links]
            if len(free) >= 2:
                a, b = rng.sample(free, 2)
                if a[0] != b[0]:
                    links[a], links[b] = b, a
        agents = []
        for i, t in enumerate(types):
            sites = {}
            for s in RANDOM_TYPES[t]:
                internal = rng.choice(STATEFUL[(t, s)]) if (t, s) in STATEFUL else None
                sites[s] = Site(internal, links.get((i, s), FREE))
            agents.append(Agent.make(t, sites))
        return SiteGraph(tuple(agents))


def permute(g: SiteGraph, perm: list[int]) -> SiteGraph:
    """Copy of ``g`` in which old agent ``i`` sits at index ``perm[i]``."""
    agents: list[Agent | None] = [None] * len(g.agents)
    for i, agent in enumerate(g.agents):
        sites = {}
        for name, site in agent.sites:
            link = site.link
            if site.is_bond:
                link = (perm[link[0]], link[1])
            sites[name] = Site(site.internal, link)
        agents[perm[i]] = Agent.make(agent.type, sites)
    return SiteGraph(tuple(agents))


# -- brute-force oracles ------------------------------------------------------


def _site_ok(ps: Site, ts: Site, emb: dict[int, int]) -> bool:
    if ps.internal is not None and ps.internal != ts.internal:
        return False
    if ps.link is None:
        return True
    if ps.link == FREE:
        return ts.link == FREE
    if ps.link == BOUND:
        return ts.is_bond
    j, other = ps.link
    return ts.link == (emb[j], other)


def is_embedding(pattern: SiteGraph, target: SiteGraph, emb: tuple[int, ...]) -> bool:
    if len(set(emb)) != len(emb):
        return False
    m = dict(enumerate(emb))
    for i, pa in enumerate(pattern.agents):
        ta = target.agents[emb[i]]
        if pa.type != ta.type:
            return False
        for name, ps in pa.sites:
            ts = ta.site(name)
            if ts is None or not _site_ok(ps, ts, m):
                return False
    return True


def brute_embeddings(pattern: SiteGraph, target: SiteGraph) -> set[tuple[int, ...]]:
    return {
        emb
        for emb in itertools.permutations(range(len(target.agents)), len(pattern.agents))
        if is_embedding(pattern, target, emb)
    }


def brute_automorphisms(g: SiteGraph) -> int:
    return sum(
        1
        for emb in itertools.permutations(range(len(g.agents)))
        if is_embedding(g, g, emb)
    )


def brute_isomorphic(g: SiteGraph, h: SiteGraph) -> bool:
    if len(g.agents) != len(h.agents):
        return False
    return any(
        is_embedding(g, h, emb) for emb in itertools.permutations(range(len(h.agents)))
    )


# -- random rule-based models over tree-shaped contact maps -------------------


def random_tree_model(rng: random.Random, max_types: int = 3) -> str:
    """Model text with binding, unbinding and modification rules carrying
    random context, over a contact map that is a tree of agent types."""
    n = rng.randint(2, max_types)
    types = [chr(ord("K") + i) for i in range(n)]
    sites: dict[str, list[str]] = {t: [] for t in types}
    partners: dict[tuple[str, str], tuple[str, str]] = {}
    for k in range(1, n):
        j = rng.randrange(k)
        a, b = types[j], types[k]
        sa, sb = f"b{k}", f"b{k}"
        sites[a].append(sa)
        sites[b].append(sb)
        partners[(a, sa)] = (b, sb)
        partners[(b, sb)] = (a, sa)
    stateful = {t for t in types if rng.random() < 0.6}
    lines = []
    for t in types:
        decl = [f"{s}!{partners[(t, s)][0]}.{partners[(t, s)][1]}" for s in sites[t]]
        if t in stateful:
            decl.append("s~u~p")
        lines.append(f"%agent: {t}({', '.join(decl)})")

    def context(t: str, skip: str) -> tuple[str, str]:
        """Optional extra test on another site of ``t`` (same on both sides)."""
        options = [s for s in sites[t] if s != skip]
        if t in stateful and skip != "s":
            options.append("s")
        if not options or rng.random() < 0.5:
            return "", ""
        s = rng.choice(options)
        if s == "s":
            v = f"s~{rng.choice('up')}"
        else:
            v = s + rng.choice(["", "!_"])
        return v, v

    r = 0
    done = set()
    for (a, sa), (b, sb) in partners.items():
        if (b, sb) in done:
            continue
        done.add((a, sa))
        for kind in ("bind", "unbind"):
            ca, _ = context(a, sa)
            cb, _ = context(b, sb)
            la = ", ".join(x for x in (sa if kind == "bind" else f"{sa}!1", ca) if x)
            lb = ", ".join(x for x in (sb if kind == "bind" else f"{sb}!1", cb) if x)
            ra = ", ".join(x for x in (f"{sa}!1" if kind == "bind" else sa, ca) if x)
            rb = ", ".join(x for x in (f"{sb}!1" if kind == "bind" else sb, cb) if x)
            rate = rng.choice([0.5, 1.0, 2.0, 3.0])
            lines.append(f"'r{r}' {a}({la}), {b}({lb}) -> {a}({ra}), {b}({rb}) @ {rate} det")
            r += 1
    for t in sorted(stateful):
        for src, dst in (("u", "p"), ("p", "u")):
            ctx, _ = context(t, "s")
            body = ", ".join(x for x in (f"s~{src}", ctx) if x)
            out = ", ".join(x for x in (f"s~{dst}", ctx) if x)
            rate = rng.choice([0.5, 1.0, 2.0])
            lines.append(f"'r{r}' {t}({body}) -> {t}({out}) @ {rate} det")
            r += 1
    for t in types:
        full = list(sites[t]) + (["s~u"] if t in stateful else [])
        lines.append(f"%init: {rng.randint(1, 2)} {t}({', '.join(full)})")
    return "\n".join(lines) + "\n"
