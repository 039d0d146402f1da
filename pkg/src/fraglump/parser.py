"""Front end for the Kappa-subset model format.

Line-oriented grammar (``#`` starts a comment)::

    %agent:  B(a!A.a, c!C.c, s~u~p)         signature with partners/states
    %volume: 20 v                           volume and optional unit tag
    %init:   3 B(a, c~u)                    count and one concrete species
    %obs:    'free B' B(a, c)               named observable pattern
    'R1' A(a), B(a) -> A(a!1), B(a!1) @ 1.0 det
    'R2' B(c), C(c) <-> B(c!1), C(c!1) @ 0.2, 0.3 det

Inside an agent, a site written without a link marker is free, ``!n`` is a
bond labelled ``n``, ``!_`` is bound to an unspecified partner and ``?``
leaves the link unspecified.  Sites that are not written at all are
unspecified (don't care, don't write).  ``~x`` fixes the internal state.
A reversible rule ``'R' ... <-> ...`` yields rules ``R`` and ``R_op``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .sitegraph import (
    BOUND,
    FREE,
    Agent,
    AgentSignature,
    Site,
    SiteGraph,
    SiteGraphError,
    contact_map_asymmetries,
    to_kappa,
)

RATE_KINDS = ("det", "sto")


@dataclass(frozen=True)
class Diagnostic:
    code: str
    line: int
    column: int
    message: str
    severity: str = "error"

    def as_dict(self) -> dict:
        return {
            "code": self.code,
            "line": self.line,
            "column": self.column,
            "message": self.message,
            "severity": self.severity,
        }

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity} {self.code}: {self.message}"


class ModelError(Exception):
    """Raised by :func:`parse_model` with one or more diagnostics."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Rule:
    name: str
    lhs: SiteGraph
    rhs: SiteGraph
    rate: float
    kind: str = "det"
    span: tuple[int, int] = field(default=(0, 0), compare=False)

    @property
    def molecularity(self) -> int:
        return len(self.lhs.components)


@dataclass(frozen=True)
class InitDecl:
    count: int
    species: SiteGraph
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Observable:
    name: str
    pattern: SiteGraph
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass
class Model:
    signatures: dict[str, AgentSignature] = field(default_factory=dict)
    rules: list[Rule] = field(default_factory=list)
    init: list[InitDecl] = field(default_factory=list)
    observables: list[Observable] = field(default_factory=list)
    volume: float = 1.0
    volume_unit: str = "v"
    signature_spans: dict[str, tuple[int, int]] = field(default_factory=dict, compare=False)
    volume_span: tuple[int, int] = field(default=(0, 0), compare=False)

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)


# ---------------------------------------------------------------------------
# scanning
# ---------------------------------------------------------------------------

_SITE_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_STATE = re.compile(r"[A-Za-z0-9_]+")
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_INT = re.compile(r"\d+")


class _Fail(Exception):
    def __init__(self, code: str, col: int, message: str):
        self.code, self.col, self.message = code, col, message


class _Cursor:
    def __init__(self, text: str, pos: int = 0):
        self.text = text
        self.pos = pos

    def ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self, s: str) -> bool:
        self.ws()
        return self.text.startswith(s, self.pos)

    def eat(self, s: str) -> bool:
        if self.peek(s):
            self.pos += len(s)
            return True
        return False

    def expect(self, s: str) -> None:
        if not self.eat(s):
            raise _Fail("E_SYNTAX", self.pos, f"expected {s!r}")

    def match(self, rx: re.Pattern, what: str) -> str:
        self.ws()
        m = rx.match(self.text, self.pos)
        if not m:
            raise _Fail("E_SYNTAX", self.pos, f"expected {what}")
        self.pos = m.end()
        return m.group(0)

    def at_end(self) -> bool:
        self.ws()
        return self.pos >= len(self.text)


def _parse_pattern(cur: _Cursor) -> SiteGraph:
    """Comma-separated agents; stops at '->', '<->', '@' or end of line."""
    raw: list[tuple[str, dict[str, tuple[str | None, object]]]] = []
    bonds: dict[str, list[tuple[int, str, int]]] = {}
    while True:
        cur.ws()
        if cur.at_end() or cur.peek("->") or cur.peek("<->") or cur.peek("@"):
            break
        if raw:
            cur.expect(",")
        start = cur.pos
        atype = cur.match(_SITE_NAME, "agent name")
        cur.expect("(")
        sites: dict[str, tuple[str | None, object]] = {}
        while not cur.eat(")"):
            if sites:
                cur.expect(",")
            scol = cur.pos
            sname = cur.match(_SITE_NAME, "site name")
            if sname in sites:
                raise _Fail("E_DUPLICATE_SITE", scol, f"site {sname!r} repeated in {atype}")
            internal = None
            if cur.eat("~"):
                internal = cur.match(_STATE, "internal state")
            link: object = FREE
            if cur.eat("?"):
                link = None
            elif cur.eat("!"):
                if cur.eat("_"):
                    link = BOUND
                else:
                    label = cur.match(_INT, "bond label or '_'")
                    bonds.setdefault(label, []).append((len(raw), sname, scol))
                    link = ("label", label)
            sites[sname] = (internal, link)
        if not _SITE_NAME.fullmatch(atype):
            raise _Fail("E_SYNTAX", start, "bad agent name")
        raw.append((atype, sites))
    resolved: dict[tuple[int, str], tuple[int, str]] = {}
    for label, ends in bonds.items():
        if len(ends) != 2:
            raise _Fail("E_BOND_LABEL", ends[0][2], f"bond label {label} must occur exactly twice")
        (i, s, _), (j, t, col) = ends
        if (i, s) == (j, t):
            raise _Fail("E_BOND_LABEL", col, "site bound to itself")
        resolved[(i, s)] = (j, t)
        resolved[(j, t)] = (i, s)
    agents = []
    for i, (atype, sites) in enumerate(raw):
        built = {}
        for sname, (internal, link) in sites.items():
            if isinstance(link, tuple):
                link = resolved[(i, sname)]
            built[sname] = Site(internal, link)
        agents.append(Agent.make(atype, built))
    return SiteGraph(tuple(agents))


def _parse_signature(cur: _Cursor) -> AgentSignature:
    atype = cur.match(_SITE_NAME, "agent name")
    cur.expect("(")
    sites: list[str] = []
    states: dict[str, frozenset[str]] = {}
    partners: dict[str, frozenset[tuple[str, str]]] = {}
    while not cur.eat(")"):
        if sites:
            cur.expect(",")
        scol = cur.pos
        sname = cur.match(_SITE_NAME, "site name")
        if sname in sites:
            raise _Fail("E_DUPLICATE_SITE", scol, f"site {sname!r} declared twice on {atype}")
        sites.append(sname)
        st: set[str] = set()
        pt: set[tuple[str, str]] = set()
        while True:
            if cur.eat("~"):
                st.add(cur.match(_STATE, "internal state"))
            elif cur.eat("!"):
                ptype = cur.match(_SITE_NAME, "partner agent")
                cur.expect(".")
                pt.add((ptype, cur.match(_SITE_NAME, "partner site")))
            else:
                break
        if st:
            states[sname] = frozenset(st)
        if pt:
            partners[sname] = frozenset(pt)
    return AgentSignature(atype, tuple(sites), states, partners)


def _check_rule_shape(lhs: SiteGraph, rhs: SiteGraph, col: int) -> None:
    if [a.type for a in lhs.agents] != [a.type for a in rhs.agents]:
        raise _Fail(
            "E_RULE_AGENTS", col, "left and right sides must list the same agents in the same order"
        )
    for k, (la, ra) in enumerate(zip(lhs.agents, rhs.agents)):
        if set(la.site_names) != set(ra.site_names):
            missing = sorted(set(la.site_names) ^ set(ra.site_names))
            raise _Fail(
                "E_RULE_SITES",
                col,
                f"agent {k} ({la.type}): sites {missing} documented on one side only",
            )
        for name, ls in la.sites:
            rs = ra.site(name)
            if (ls.internal is None) != (rs.internal is None):
                raise _Fail(
                    "E_RULE_STATE", col, f"{la.type}.{name}: internal state must be tested to be set"
                )
            if rs.link is None or rs.link == BOUND:
                if rs.link != ls.link:
                    raise _Fail(
                        "E_RULE_LINK", col, f"{la.type}.{name}: wildcard link on the right side only"
                    )
            elif ls.link is None:
                raise _Fail("E_RULE_LINK", col, f"{la.type}.{name}: link modified but not tested")
            elif rs.is_bond and ls.link != rs.link and ls.link != FREE:
                raise _Fail(
                    "E_RULE_LINK", col, f"{la.type}.{name}: new bond on a site not known to be free"
                )


def parse_pattern(text: str) -> SiteGraph:
    """Parse a standalone pattern such as ``"A(a!1), B(a!1, c)"``."""
    cur = _Cursor(text)
    try:
        g = _parse_pattern(cur)
        if not cur.at_end():
            raise _Fail("E_SYNTAX", cur.pos, "unexpected trailing input")
    except _Fail as fail:
        raise ModelError([Diagnostic(fail.code, 1, fail.col + 1, fail.message)]) from None
    return g


def _parse_line(model: Model, text: str, lineno: int) -> None:
    cur = _Cursor(text)
    cur.ws()
    col0 = cur.pos
    if cur.eat("%agent:"):
        sig = _parse_signature(cur)
        if sig.agent_type in model.signatures:
            raise _Fail("E_DUPLICATE_AGENT", col0, f"agent {sig.agent_type!r} declared twice")
        model.signatures[sig.agent_type] = sig
        model.signature_spans[sig.agent_type] = (lineno, col0 + 1)
    elif cur.eat("%volume:"):
        model.volume = float(cur.match(_NUMBER, "volume"))
        model.volume_span = (lineno, col0 + 1)
        if not cur.at_end():
            model.volume_unit = cur.match(_SITE_NAME, "unit")
    elif cur.eat("%init:"):
        count = int(cur.match(_INT, "non-negative count"))
        graph = _parse_pattern(cur)
        model.init.append(InitDecl(count, graph, (lineno, col0 + 1)))
    elif cur.eat("%obs:"):
        cur.expect("'")
        end = text.find("'", cur.pos)
        if end < 0:
            raise _Fail("E_SYNTAX", cur.pos, "unterminated observable name")
        name = text[cur.pos:end]
        cur.pos = end + 1
        model.observables.append(Observable(name, _parse_pattern(cur), (lineno, col0 + 1)))
    elif cur.eat("'"):
        end = text.find("'", cur.pos)
        if end < 0:
            raise _Fail("E_SYNTAX", cur.pos, "unterminated rule name")
        name = text[cur.pos:end]
        cur.pos = end + 1
        lhs = _parse_pattern(cur)
        if cur.eat("<->"):
            reversible = True
        elif cur.eat("->"):
            reversible = False
        else:
            raise _Fail("E_SYNTAX", cur.pos, "expected '->' or '<->'")
        rhs = _parse_pattern(cur)
        cur.expect("@")
        rates = [float(cur.match(_NUMBER, "rate constant"))]
        if reversible:
            cur.expect(",")
            rates.append(float(cur.match(_NUMBER, "reverse rate constant")))
        kind = cur.match(_SITE_NAME, "rate kind 'det' or 'sto'")
        if kind not in RATE_KINDS:
            raise _Fail("E_RATE_KIND", cur.pos - len(kind), f"unknown rate kind {kind!r}")
        _check_rule_shape(lhs, rhs, col0)
        span = (lineno, col0 + 1)
        model.rules.append(Rule(name, lhs, rhs, rates[0], kind, span))
        if reversible:
            _check_rule_shape(rhs, lhs, col0)
            model.rules.append(Rule(f"{name}_op", rhs, lhs, rates[1], kind, span))
    else:
        raise _Fail("E_SYNTAX", col0, "unrecognised declaration")
    if not cur.at_end():
        raise _Fail("E_SYNTAX", cur.pos, "unexpected trailing input")


def parse_model(text: str, validate: bool = True) -> Model:
    """Parse model text; raise :class:`ModelError` on any error diagnostic.

    With ``validate=False`` only lexical and rule-shape errors are raised and
    signature conformance is left to :func:`validate_model`.
    """
    model = Model()
    diags: list[Diagnostic] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        try:
            _parse_line(model, body, lineno)
        except _Fail as fail:
            diags.append(Diagnostic(fail.code, lineno, fail.col + 1, fail.message))
        except SiteGraphError as exc:
            diags.append(Diagnostic("E_GRAPH", lineno, 1, str(exc)))
    if diags:
        raise ModelError(diags)
    if validate:
        errors = [d for d in validate_model(model) if d.severity == "error"]
        if errors:
            raise ModelError(errors)
    return model


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _graph_diagnostics(m: Model, g: SiteGraph, span: tuple[int, int], where: str) -> list[Diagnostic]:
    out = []
    line, col = span

    def add(code: str, msg: str) -> None:
        out.append(Diagnostic(code, line, col, f"{where}: {msg}"))

    for agent in g.agents:
        sig = m.signatures.get(agent.type)
        if sig is None:
            add("E_UNKNOWN_AGENT", f"unknown agent type {agent.type!r}")
            continue
        for name, site in agent.sites:
            if name not in sig.sites:
                add("E_UNKNOWN_SITE", f"agent {agent.type} has no site {name!r}")
                continue
            if site.internal is not None and site.internal not in sig.allowed_states(name):
                add("E_UNKNOWN_STATE", f"{agent.type}.{name} has no state {site.internal!r}")
            if site.is_bond:
                j, other = site.link
                partner = (g.agents[j].type, other)
                if partner not in sig.allowed_partners(name):
                    add(
                        "E_CONTACT",
                        f"bond {agent.type}.{name}-{partner[0]}.{partner[1]} not allowed by the contact map",
                    )
            elif site.link == BOUND and not sig.allowed_partners(name):
                add("E_CONTACT", f"{agent.type}.{name} can never be bound")
    return out


def validate_model(m: Model) -> list[Diagnostic]:
    """Machine-readable diagnostics; empty iff the model is well formed."""
    diags: list[Diagnostic] = []
    for atype, stype, ptype, psite in contact_map_asymmetries(m.signatures):
        line, col = m.signature_spans.get(atype, (0, 0))
        diags.append(
            Diagnostic(
                "E_ASYMMETRIC_BOND",
                line,
                col,
                f"{atype}.{stype} lists partner {ptype}.{psite} but not vice versa",
            )
        )
    if not m.volume > 0:
        diags.append(Diagnostic("E_VOLUME", *m.volume_span, "volume must be positive"))
    seen: set[str] = set()
    for r in m.rules:
        for side, g in (("lhs", r.lhs), ("rhs", r.rhs)):
            diags += _graph_diagnostics(m, g, r.span, f"rule {r.name!r} {side}")
        if not r.rate >= 0:
            diags.append(Diagnostic("E_RATE_NEGATIVE", *r.span, f"rule {r.name!r}: negative rate"))
        if r.kind not in RATE_KINDS:
            diags.append(Diagnostic("E_RATE_KIND", *r.span, f"rule {r.name!r}: bad rate kind"))
        if r.name in seen:
            diags.append(
                Diagnostic("W_DUPLICATE_RULE", *r.span, f"rule name {r.name!r} reused", "warning")
            )
        seen.add(r.name)
    for decl in m.init:
        diags += _graph_diagnostics(m, decl.species, decl.span, "init")
        if decl.count < 0:
            diags.append(Diagnostic("E_INIT_COUNT", *decl.span, "negative initial count"))
        if not decl.species.is_connected() or not decl.species.agents:
            diags.append(Diagnostic("E_INIT_SPECIES", *decl.span, "init must declare one connected species"))
        elif not decl.species.is_fully_specified(m.signatures):
            diags.append(
                Diagnostic("E_INIT_PARTIAL", *decl.span, "initial species must document every site and state")
            )
    for obs in m.observables:
        diags += _graph_diagnostics(m, obs.pattern, obs.span, f"observable {obs.name!r}")
    return diags


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------


def format_signature(sig: AgentSignature) -> str:
    parts = []
    for s in sig.sites:
        text = s + "".join(f"~{x}" for x in sorted(sig.allowed_states(s)))
        text += "".join(f"!{t}.{u}" for t, u in sorted(sig.allowed_partners(s)))
        parts.append(text)
    return f"{sig.agent_type}({', '.join(parts)})"


def format_model(m: Model) -> str:
    """Pretty-print a model; ``parse_model(format_model(m))`` reproduces it."""
    lines = [f"%agent: {format_signature(sig)}" for sig in m.signatures.values()]
    lines.append(f"%volume: {m.volume!r} {m.volume_unit}")
    for r in m.rules:
        lines.append(f"'{r.name}' {to_kappa(r.lhs)} -> {to_kappa(r.rhs)} @ {r.rate!r} {r.kind}")
    for decl in m.init:
        lines.append(f"%init: {decl.count} {to_kappa(decl.species)}")
    for obs in m.observables:
        lines.append(f"%obs: '{obs.name}' {to_kappa(obs.pattern)}")
    return "\n".join(lines) + "\n"
