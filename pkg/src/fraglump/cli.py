"""Command-line front end.

Subcommands::

    fraglump expand      --model M.ka --out DIR
    fraglump simulate    --model M.ka --mode {ode,cme,ssa} --t-end 10 --t-steps 100
    fraglump fragment    --model M.ka
    fraglump lump        --model M.ka [--discrete] [--approximate]
    fraglump verify      --model M.ka
    fraglump reconstruct --model M.ka --t-end 5

Values may also come from a JSON file given with ``--config``; flags on the
command line take precedence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dynamics import (
    DEFAULT_STATE_CAP,
    IntegrationError,
    build_ctmc,
    cme_integrate,
    cme_mean,
    default_workers,
    ode_integrate,
    ssa_simulate,
)
from .export import (
    chain_document,
    contact_map_dot,
    markov_dot,
    network_document,
    write_csv,
    write_json,
)
from .network import DEFAULT_SPECIES_CAP, CapExceeded, ExpansionError, expand
from .parser import Model, ModelError, parse_model
from .reduction import (
    Annotation,
    NotLumpable,
    ReductionError,
    annotate,
    check_backward_bisimilar,
    check_forward_lumpable,
    discrete_partition,
    generate_fragments,
    induced_partition,
    lump,
    reconstruct,
    reduce_ode,
    symmetry_weights,
)
from .sitegraph import to_kappa

# relative tolerance for rate-equality checks in lumpability tests
LUMP_TOL = 1e-9

COMMANDS = ("expand", "simulate", "fragment", "lump", "verify", "reconstruct")

DEFAULTS: dict[str, Any] = {
    "out": "fraglump_out",
    "volume": None,
    "t_end": 10.0,
    "t_steps": 100,
    "seed": 0,
    "runs": 1000,
    "species_cap": DEFAULT_SPECIES_CAP,
    "state_cap": DEFAULT_STATE_CAP,
    "rel_tol": 1e-6,
    "abs_tol": 1e-9,
    "mode": "ode",
    "annotation": None,
    "discrete": False,
    "approximate": False,
}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    model: Path
    out: Path
    volume: float | None
    t_end: float
    t_steps: int
    seed: int
    runs: int
    species_cap: int
    state_cap: int
    rel_tol: float
    abs_tol: float
    mode: str
    annotation: Path | None
    discrete: bool
    approximate: bool

    def __post_init__(self):
        if self.species_cap <= 0 or self.state_cap <= 0:
            raise UsageError("caps must be positive")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise UsageError("tolerances must be positive")
        if self.t_end <= 0 or self.t_steps < 1:
            raise UsageError("time grid must be strictly increasing")
        if self.runs < 1:
            raise UsageError("--runs must be >= 1")
        if self.mode not in ("ode", "cme", "ssa"):
            raise UsageError(f"unknown mode {self.mode!r}")

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.t_steps + 1)

    def header(self, **extra: Any) -> dict[str, Any]:
        run = {
            "command": self.command,
            "model": str(self.model),
            "seed": self.seed,
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "species_cap": self.species_cap,
            "state_cap": self.state_cap,
        }
        if self.volume is not None:
            run["volume"] = self.volume
        run.update(extra)
        return run


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", type=Path, help="model file")
    common.add_argument("--config", type=Path, help="JSON file with default option values")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--volume", type=float)
    common.add_argument("--t-end", type=float)
    common.add_argument("--t-steps", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--runs", type=int)
    common.add_argument("--species-cap", type=int)
    common.add_argument("--state-cap", type=int)
    common.add_argument("--rel-tol", type=float)
    common.add_argument("--abs-tol", type=float)
    common.add_argument("--mode", choices=("ode", "cme", "ssa"))
    common.add_argument("--annotation", type=Path, help="JSON annotation overriding annotate()")
    common.add_argument("--discrete", action="store_true", default=None,
                        help="use the discrete partition instead of the fragment one")
    common.add_argument("--approximate", action="store_true", default=None,
                        help="lump even when the partition is not lumpable")
    p = argparse.ArgumentParser(prog="fraglump", description="Rule-based model reduction toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def make_config(argv: Sequence[str] | None = None) -> RunConfig:
    ns = build_parser().parse_args(argv)
    values = dict(DEFAULTS)
    if ns.config is not None:
        data = json.loads(ns.config.read_text())
        unknown = set(data) - set(DEFAULTS) - {"model"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update({k.replace("-", "_"): v for k, v in data.items()})
    for key, val in vars(ns).items():
        if key not in ("command", "config") and val is not None:
            values[key] = val
    if values.get("model") is None:
        raise UsageError("--model is required")
    return RunConfig(
        command=ns.command,
        model=Path(values["model"]),
        out=Path(values["out"]),
        volume=None if values["volume"] is None else float(values["volume"]),
        t_end=float(values["t_end"]),
        t_steps=int(values["t_steps"]),
        seed=int(values["seed"]),
        runs=int(values["runs"]),
        species_cap=int(values["species_cap"]),
        state_cap=int(values["state_cap"]),
        rel_tol=float(values["rel_tol"]),
        abs_tol=float(values["abs_tol"]),
        mode=values["mode"],
        annotation=None if values["annotation"] is None else Path(values["annotation"]),
        discrete=bool(values["discrete"]),
        approximate=bool(values["approximate"]),
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _load(cfg: RunConfig) -> Model:
    return parse_model(cfg.model.read_text())


def _network(cfg: RunConfig, model: Model):
    return expand(model, cfg.species_cap, cfg.volume)


def _annotation(cfg: RunConfig, model: Model) -> Annotation:
    if cfg.annotation is None:
        return annotate(model)
    data = json.loads(cfg.annotation.read_text())
    ann = Annotation.from_dict(data.get("annotation", data))
    ann.validate(model)
    return ann


def cmd_expand(cfg: RunConfig) -> int:
    model = _load(cfg)
    net = _network(cfg, model)
    run = cfg.header()
    write_json(cfg.out / "network.json", network_document(net), run)
    for name, M in (("consumption", net.consumption_matrix()), ("production", net.production_matrix())):
        write_csv(cfg.out / f"{name}.csv", ["species"] + [f"r{j}" for j in range(len(net.reactions))],
                  ([n, *row] for n, row in zip(net.names, M.tolist())), run)
    (cfg.out / "contact_map.dot").write_text(contact_map_dot(model.signatures, run))
    print(f"{net.n_species} species, {len(net.reactions)} reactions")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    model = _load(cfg)
    net = _network(cfg, model)
    x0 = net.initial_state(model)
    t = cfg.t_grid
    if cfg.mode == "ode":
        traj = ode_integrate(net, x0 / net.volume, t, cfg.rel_tol, cfg.abs_tol)
        run = cfg.header(mode="ode", volume=net.volume)
        write_csv(cfg.out / "ode.csv", ["t", *net.names],
                  ([ti, *row] for ti, row in zip(t, traj.values)), run)
        print(f"ode: {net.n_species} species, {len(t)} time points")
    elif cfg.mode == "cme":
        chain = build_ctmc(net, x0, cfg.state_cap)
        dist = cme_integrate(chain, t, tol=cfg.abs_tol)
        run = cfg.header(mode="cme", tol=cfg.abs_tol, volume=net.volume)
        write_csv(cfg.out / "cme.csv", ["t", *chain.labels],
                  ([ti, *row] for ti, row in zip(t, dist.probs)), run)
        mean = cme_mean(dist, chain)
        write_csv(cfg.out / "cme_mean.csv", ["t", *net.names],
                  ([ti, *row] for ti, row in zip(t, mean)), run)
        (cfg.out / "chain.dot").write_text(markov_dot(chain, run))
        print(f"cme: {len(chain)} states, {len(t)} time points")
    else:
        ens = ssa_simulate(net, x0, cfg.t_end, cfg.runs, cfg.seed, t,
                           keep_trajectories=cfg.runs == 1)
        run = cfg.header(mode="ssa", runs=cfg.runs, workers=default_workers(), volume=net.volume)
        mean, std = ens.mean(), ens.std()
        write_csv(cfg.out / "ssa_mean.csv", ["t", *net.names],
                  ([ti, *row] for ti, row in zip(t, mean)), run)
        write_csv(cfg.out / "ssa_std.csv", ["t", *net.names],
                  ([ti, *row] for ti, row in zip(t, std)), run)
        if ens.trajectories:
            tr = ens.trajectories[0]
            write_csv(cfg.out / "ssa_trajectory.csv", ["t", *net.names],
                      ([ti, *row] for ti, row in zip(tr.times, tr.states)), run)
        print(f"ssa: {cfg.runs} runs, {len(t)} sample times")
    return 0


def cmd_fragment(cfg: RunConfig) -> int:
    model = _load(cfg)
    net = _network(cfg, model)
    ann = _annotation(cfg, model)
    red = reduce_ode(model, ann, cfg.species_cap, net)
    fs = red.fragments
    run = cfg.header()
    write_json(cfg.out / "annotation.json", {"annotation": ann.as_dict()}, run)
    write_json(cfg.out / "fragments.json", {
        "fragments": [{"key": f.key, "kappa": to_kappa(f.graph)} for f in fs.fragments],
        "species": net.names,
        "counts": fs.matrix,
    }, run)
    write_json(cfg.out / "reduced_network.json", network_document(red.network), run)
    write_json(cfg.out / "silent.json",
               {"silent": [{"rule": r, "fragment": f} for r, f in red.silent]}, run)
    print(f"{len(fs)} fragments, {len(red.network.reactions)} fragment reactions, "
          f"{len(red.silent)} silent pairs")
    for rule_name, frag in red.silent:
        print(f"  silent: {rule_name} on {frag}")
    return 0


def _lumping(cfg: RunConfig):
    model = _load(cfg)
    net = _network(cfg, model)
    chain = build_ctmc(net, net.initial_state(model), cfg.state_cap)
    if cfg.discrete:
        part = discrete_partition(chain)
    else:
        ann = _annotation(cfg, model)
        part = induced_partition(chain, generate_fragments(model, ann, cfg.species_cap, net))
    beta = symmetry_weights(chain, part, net.species)
    part = part.with_weights(beta)
    fwd = check_forward_lumpable(chain, part, LUMP_TOL)
    bwd = check_backward_bisimilar(chain, part, beta, LUMP_TOL)
    return chain, part, fwd, bwd


def _verdicts_doc(fwd, bwd) -> dict[str, Any]:
    return {
        "forward_lumpable": {"verdict": fwd.ok, "witness": fwd.witness},
        "backward_bisimilar": {"verdict": bwd.ok, "witness": bwd.witness},
    }


def _report(fwd, bwd) -> None:
    print(f"forward lumpable: {'yes' if fwd else 'no'}")
    if not fwd:
        print(f"  witness: {fwd.witness}")
    print(f"backward bisimilar: {'yes' if bwd else 'no'}")
    if not bwd:
        print(f"  witness: {bwd.witness}")


def cmd_verify(cfg: RunConfig) -> int:
    chain, part, fwd, bwd = _lumping(cfg)
    write_json(cfg.out / "verdicts.json", _verdicts_doc(fwd, bwd), cfg.header())
    print(f"{len(chain)} states, {len(part)} blocks")
    _report(fwd, bwd)
    return 0


def _partition_doc(chain, part) -> dict[str, Any]:
    return {
        "blocks": [
            {"block": b, "key": list(part.keys[b]),
             "states": [{"index": i, "label": chain.labels[i], "beta": float(part.weights[i])}
                        for i in members]}
            for b, members in enumerate(part.blocks)
        ]
    }


def cmd_lump(cfg: RunConfig) -> int:
    chain, part, fwd, bwd = _lumping(cfg)
    if not fwd and not cfg.approximate:
        raise NotLumpable(fwd.witness)
    lumped = lump(chain, part, approximate=cfg.approximate, tol=LUMP_TOL)
    run = cfg.header(approximate=bool(cfg.approximate and not fwd))
    write_json(cfg.out / "partition.json", _partition_doc(chain, part), run)
    write_json(cfg.out / "verdicts.json", _verdicts_doc(fwd, bwd), run)
    write_json(cfg.out / "lumped_chain.json", chain_document(lumped), run)
    (cfg.out / "chain.dot").write_text(markov_dot(chain, run))
    (cfg.out / "lumped_chain.dot").write_text(markov_dot(lumped, run))
    if cfg.approximate and not fwd:
        print("WARNING: partition is not lumpable; lumped chain is approximate")
    print(f"{len(chain)} states -> {len(lumped)} blocks")
    _report(fwd, bwd)
    return 0


def cmd_reconstruct(cfg: RunConfig) -> int:
    chain, part, fwd, bwd = _lumping(cfg)
    if not fwd:
        raise NotLumpable(fwd.witness)
    lumped = lump(chain, part, tol=LUMP_TOL)
    t = cfg.t_grid
    dist = cme_integrate(lumped, t, tol=cfg.abs_tol)
    rec = reconstruct(dist, part, chain, tol=LUMP_TOL)
    run = cfg.header(tol=cfg.abs_tol, exact=rec.exact)
    write_csv(cfg.out / "lumped_cme.csv", ["t", *lumped.labels],
              ([ti, *row] for ti, row in zip(t, dist.probs)), run)
    write_csv(cfg.out / "reconstructed.csv", ["t", *chain.labels],
              ([ti, *row] for ti, row in zip(t, rec.distribution.probs)), run)
    write_json(cfg.out / "partition.json", _partition_doc(chain, part), run)
    write_json(cfg.out / "verdicts.json", _verdicts_doc(fwd, bwd), run)
    print(f"{len(chain)} states -> {len(lumped)} blocks; reconstruction "
          f"{'exact' if rec.exact else 'asymptotic'} (initial mismatch {rec.initial_mismatch:.3g})")
    return 0


HANDLERS = {
    "expand": cmd_expand,
    "simulate": cmd_simulate,
    "fragment": cmd_fragment,
    "lump": cmd_lump,
    "verify": cmd_verify,
    "reconstruct": cmd_reconstruct,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = make_config(argv)
        cfg.out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[cfg.command](cfg)
    except ModelError as exc:
        for d in exc.diagnostics:
            print(f"{cfg.model}:{d.line}:{d.column}: {d.severity}: {d.code}: {d.message}",
                  file=sys.stderr)
        return 1
    except (UsageError, OSError, json.JSONDecodeError, CapExceeded, ExpansionError,
            IntegrationError, ReductionError, NotLumpable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
