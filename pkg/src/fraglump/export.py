"""File writers: JSON documents, CSV series and DOT graphs.

Every file carries ``format_version`` and the run parameters that produced
it (a ``#`` header for CSV and DOT, a ``run`` object for JSON).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .dynamics import MarkovGraph
from .network import ReactionNetwork
from .sitegraph import Signatures, to_kappa

FORMAT_VERSION = 1


def _plain(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, payload: Mapping[str, Any], run: Mapping[str, Any]) -> Path:
    doc = {"format_version": FORMAT_VERSION, "run": dict(run), **payload}
    path.write_text(json.dumps(doc, indent=2, default=_plain) + "\n")
    return path


def _header_lines(run: Mapping[str, Any]) -> list[str]:
    items = [f"format_version={FORMAT_VERSION}"] + [f"{k}={v}" for k, v in run.items()]
    return ["# " + " ".join(items)]


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    run: Mapping[str, Any],
) -> Path:
    with path.open("w", newline="") as fh:
        for line in _header_lines(run):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Column names and numeric body of a file written by :func:`write_csv`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def markov_dot(chain: MarkovGraph, run: Mapping[str, Any]) -> str:
    labels = chain.labels or [str(i) for i in range(len(chain))]
    out = [f"// format_version={FORMAT_VERSION} " + " ".join(f"{k}={v}" for k, v in run.items())]
    out.append("digraph ctmc {")
    for i, lab in enumerate(labels):
        out.append(f"  s{i} [label={_quote(lab)}];")
    for (i, j), w in sorted(chain.weights.items()):
        terms = chain.terms.get((i, j))
        text = " + ".join(f"{c:g}*{n}" for n, c in terms.items()) if terms else f"{w:g}"
        out.append(f"  s{i} -> s{j} [label={_quote(text)}];")
    out.append("}")
    return "\n".join(out) + "\n"


def contact_map_dot(signatures: Signatures, run: Mapping[str, Any]) -> str:
    out = [f"// format_version={FORMAT_VERSION} " + " ".join(f"{k}={v}" for k, v in run.items())]
    out.append("graph contact_map {")
    for t, sig in signatures.items():
        ports = "|".join(f"<{s}> {s}" for s in sig.sites)
        out.append(f"  {t} [shape=record, label={_quote(f'{t}|{ports}' if ports else t)}];")
    seen = set()
    for t, sig in signatures.items():
        for s in sig.sites:
            for u, v in sig.allowed_partners(s):
                edge = tuple(sorted([(t, s), (u, v)]))
                if edge in seen:
                    continue
                seen.add(edge)
                (a, x), (b, y) = edge
                out.append(f"  {a}:{x} -- {b}:{y};")
    out.append("}")
    return "\n".join(out) + "\n"


def network_document(net: ReactionNetwork) -> dict[str, Any]:
    reactions = []
    for j, r in enumerate(net.reactions):
        reactions.append({
            "index": j,
            "reactants": {net.names[i]: n for i, n in r.reactants},
            "products": {net.names[i]: n for i, n in r.products},
            "k": r.k,
            "c": r.c,
            "rules": dict(r.contributions),
        })
    return {
        "volume": net.volume,
        "species": [
            {"name": n, "key": sp.key, "kappa": to_kappa(sp.graph)}
            for n, sp in zip(net.names, net.species)
        ],
        "reactions": reactions,
        "consumption": net.consumption_matrix(),
        "production": net.production_matrix(),
    }


def chain_document(chain: MarkovGraph) -> dict[str, Any]:
    return {
        "states": [list(map(_to_int, x)) for x in chain.states],
        "labels": list(chain.labels),
        "initial": chain.initial,
        "transitions": [
            {"from": i, "to": j, "rate": w, "terms": chain.terms.get((i, j), {})}
            for (i, j), w in sorted(chain.weights.items())
        ],
    }


def _to_int(v):
    return int(v) if isinstance(v, (int, np.integer)) else v
