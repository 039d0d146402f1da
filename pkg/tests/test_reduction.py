from __future__ import annotations

import random

import numpy as np
import pytest

from helpers import load, random_tree_model

from fraglump.dynamics import build_ctmc, cme_integrate, ode_integrate
from fraglump.network import CapExceeded, expand
from fraglump.parser import parse_model, parse_pattern
from fraglump.reduction import (
    Annotation,
    NotLumpable,
    ReductionError,
    annotate,
    check_backward_bisimilar,
    check_forward_lumpable,
    discrete_partition,
    full_annotation,
    generate_fragments,
    induced_partition,
    lump,
    project_state,
    reconstruct,
    reduce_ode,
    singleton_annotation,
    symmetry_weights,
    weights_from_symmetry,
)
from fraglump.sitegraph import graph_key, to_kappa

X3 = "A(a!1), B(a!1, c), B(a, c), B(a, c!2), C(c!2)"
X4 = "A(a!1), B(a!1, c!2), C(c!2), B(a, c), B(a, c)"

# fragments of the worked example written as patterns
F_A, F_C = "A(a)", "C(c)"
F_Bq, F_qB = "B(a)", "B(c)"
F_ABq, F_qBC = "A(a!1), B(a!1)", "B(c!1), C(c!1)"


@pytest.fixture(scope="module")
def core(core_model, core_net):
    ann = annotate(core_model)
    return ann, generate_fragments(core_model, ann, network=core_net)


def _fi(fs, pattern: str) -> int:
    return fs.index(parse_pattern(pattern))


# -- annotation ---------------------------------------------------------------


def test_annotation_core(core_model):
    ann = annotate(core_model)
    assert ann.classes["B"] == (("a",), ("c",))
    assert ann.classes["A"] == (("a",),) and ann.classes["C"] == (("c",),)


def test_annotation_trimer(trimer_model):
    assert annotate(trimer_model).classes["B"] == (("a", "c"),)


def test_annotation_single_site_agents():
    m = parse_model("%agent: P(x~u~p)\n%agent: Q(y)\n'r' P(x~u) -> P(x~p) @ 1 det\n")
    assert annotate(m).classes == {"P": (("x",),), "Q": (("y",),)}


def test_observable_correlates_sites(core_model):
    obs = [parse_pattern("A(a!1), B(a!1, c!2), C(c!2)")]
    assert annotate(core_model, obs).classes["B"] == (("a", "c"),)


def test_annotation_round_trip(core_model):
    ann = annotate(core_model)
    assert Annotation.from_dict(ann.as_dict()) == ann
    with pytest.raises(ReductionError):
        Annotation({"A": (("a",),), "B": (("a",),), "C": (("c",),)}).validate(core_model)


# -- fragments ----------------------------------------------------------------


def test_core_fragments(core):
    _, fs = core
    keys = {graph_key(parse_pattern(p)) for p in (F_A, F_C, F_Bq, F_qB, F_ABq, F_qBC)}
    assert {f.key for f in fs.fragments} == keys


def test_trimer_fragments_are_species(trimer_model):
    net = expand(trimer_model)
    fs = generate_fragments(trimer_model, annotate(trimer_model), network=net)
    assert [f.key for f in fs.fragments] == [sp.key for sp in net.species]
    np.testing.assert_array_equal(fs.matrix, np.eye(6, dtype=int))


def test_two_state_agent_has_two_fragments():
    m = parse_model("%agent: P(x~u~p)\n'r' P(x~u) -> P(x~p) @ 1 det\n%init: 1 P(x~u)\n")
    assert len(generate_fragments(m, annotate(m))) == 2


def test_fragment_cap(core_model):
    with pytest.raises(CapExceeded):
        generate_fragments(core_model, annotate(core_model), cap=3)


def test_projection_of_x3_and_x4(core, core_net, core_chain):
    _, fs = core
    x3, x4 = core_chain.states[3], core_chain.states[4]
    v3, v4 = project_state(x3, fs), project_state(x4, fs)
    np.testing.assert_array_equal(v3, v4)
    assert v3[_fi(fs, F_ABq)] == 1 and v3[_fi(fs, F_qBC)] == 1
    assert v3[_fi(fs, F_Bq)] == 2 and v3[_fi(fs, F_A)] == 0 and v3[_fi(fs, F_C)] == 0
    assert not project_state(np.zeros(6), fs).any()


def test_projection_linear_and_concentration_form(core):
    _, fs = core
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.integers(0, 9, 6), rng.integers(0, 9, 6)
        np.testing.assert_array_equal(project_state(x + y, fs), project_state(x, fs) + project_state(y, fs))
    z = rng.uniform(size=6)
    zA, zB, zC, zAB, zBC, zABC = z
    w = project_state(z, fs)
    assert w[_fi(fs, F_A)] == pytest.approx(zA)
    assert w[_fi(fs, F_Bq)] == pytest.approx(zB + zBC)
    assert w[_fi(fs, F_ABq)] == pytest.approx(zAB + zABC)


# -- deterministic reduction -------------------------------------------------


def test_reduced_network_a_side(core_model, core_net):
    red = reduce_ode(core_model, annotate(core_model), network=core_net)
    names = [to_kappa(sp.graph) for sp in red.network.species]
    reactions = {
        (tuple(sorted(names[i] for i, _ in r.reactants)), tuple(sorted(names[i] for i, _ in r.products))): r.k
        for r in red.network.reactions
    }
    assert reactions[(("A(a)", "B(a)"), ("A(a!1), B(a!1)",))] == pytest.approx(1.0)
    assert reactions[(("A(a!1), B(a!1)",), ("A(a)", "B(a)"))] == pytest.approx(2.0)
    assert reactions[(("B(c)", "C(c)"), ("B(c!1), C(c!1)",))] == pytest.approx(0.2)
    assert len(reactions) == 4
    assert ("R2", F_Bq) in red.silent
    assert ("R2-", F_Bq) in red.silent
    assert ("R1", F_Bq) not in red.silent


def test_reduced_ode_matches_projection():
    model = load("example1_fig4")
    net = expand(model)
    red = reduce_ode(model, annotate(model), network=net)
    z0 = net.initial_state(model) / net.volume
    t = np.linspace(0, 10, 101)
    full = ode_integrate(net, z0, t, rel_tol=1e-12, abs_tol=1e-14)
    small = ode_integrate(red.network, z0 @ red.projection, t, rel_tol=1e-12, abs_tol=1e-14)
    assert np.abs(full.values @ red.projection - small.values).max() <= 1e-8


def test_full_annotation_is_identity(core_model, core_net):
    red = reduce_ode(core_model, full_annotation(core_model), network=core_net)
    assert [sp.key for sp in red.network.species] == [sp.key for sp in core_net.species]
    np.testing.assert_array_equal(red.projection, np.eye(6))
    assert sorted((r.reactants, r.products, round(r.k, 12)) for r in red.network.reactions) == sorted(
        (r.reactants, r.products, round(r.k, 12)) for r in core_net.reactions
    )
    chain = build_ctmc(core_net, core_net.initial_state(core_model))
    part = induced_partition(chain, red.fragments)
    assert len(part) == len(chain)


def test_too_fine_annotation_is_rejected(trimer_model):
    with pytest.raises(ReductionError) as info:
        reduce_ode(trimer_model, singleton_annotation(trimer_model))
    assert info.value.rule in {"R3", "R4"}
    assert info.value.fragment


# -- partitions and lumpability -------------------------------------------------


def test_induced_partition(core, core_chain):
    _, fs = core
    part = induced_partition(core_chain, fs)
    assert part.blocks == [[0], [1], [2], [3, 4]]


def test_induced_partition_larger_chain(core_model, core_net, core):
    chain = build_ctmc(core_net, [2, 6, 2, 0, 0, 0])
    part = induced_partition(chain, core[1])
    assert len(part) < len(chain)
    assert check_forward_lumpable(chain, part)


def test_forward_lumpability(core, core_chain):
    part = induced_partition(core_chain, core[1])
    assert check_forward_lumpable(core_chain, part).ok
    assert check_forward_lumpable(core_chain, discrete_partition(core_chain)).ok


def test_perturbed_rates_break_lumpability(perturbed_model, core):
    net = expand(perturbed_model)
    chain = build_ctmc(net, net.initial_state(perturbed_model))
    ann = annotate(load("example1_core"))
    part = induced_partition(chain, generate_fragments(perturbed_model, ann, network=net))
    verdict = check_forward_lumpable(chain, part)
    assert not verdict
    w = verdict.witness
    assert (w["x_index"], w["x_prime_index"]) == (3, 4)
    assert w["rate_x"] != pytest.approx(w["rate_x_prime"])
    with pytest.raises(NotLumpable):
        lump(chain, part)
    approx = lump(chain, part, approximate=True)
    assert len(approx) == 4


def test_backward_bisimilarity(core, core_chain):
    part = induced_partition(core_chain, core[1])
    beta = np.array([1, 1, 1, 2 / 3, 1 / 3])
    assert check_backward_bisimilar(core_chain, part, beta).ok
    bad = check_backward_bisimilar(core_chain, part, np.array([1, 1, 1, 0.5, 0.5]))
    assert not bad and bad.witness["block"] == 3
    disc = discrete_partition(core_chain)
    assert check_backward_bisimilar(core_chain, disc, np.ones(5)).ok
    with pytest.raises(ValueError):
        check_backward_bisimilar(core_chain, part, np.array([1, 1, 1, 0.5, 0.2]))
    with pytest.raises(ValueError):
        check_backward_bisimilar(core_chain, part)


def test_lumped_chain(core, core_chain):
    part = induced_partition(core_chain, core[1])
    lumped = lump(core_chain, part)
    c1, c2, c1m, c2m = 1.0, 0.2, 2.0, 0.3
    assert lumped.weights[(1, 3)] == pytest.approx(3 * c2)
    assert lumped.weights[(2, 3)] == pytest.approx(3 * c1)
    assert lumped.weights[(3, 1)] == pytest.approx(c2m)
    assert lumped.weights[(3, 2)] == pytest.approx(c1m)
    assert lumped.terms[(1, 3)] == {"R2": 3}
    t = np.linspace(0, 5, 51)
    full = cme_integrate(core_chain, t, tol=1e-11).probs
    small = cme_integrate(lumped, t, tol=1e-11).probs
    summed = full @ part.indicator()
    assert np.abs(summed - small).sum(axis=1).max() <= 1e-9
    same = lump(core_chain, discrete_partition(core_chain))
    assert same.weights == core_chain.weights


def test_symmetry_weights():
    beta = weights_from_symmetry([parse_pattern(X3), parse_pattern(X4)])
    np.testing.assert_allclose(beta, [2 / 3, 1 / 3])
    assert weights_from_symmetry([parse_pattern(X3)]).tolist() == [1.0]
    iso = [parse_pattern(X4), parse_pattern("B(a, c), B(a, c), A(a!1), B(a!1, c!2), C(c!2)")]
    np.testing.assert_allclose(weights_from_symmetry(iso), [0.5, 0.5])


def test_symmetry_weights_for_chain(core, core_net, core_chain):
    part = induced_partition(core_chain, core[1])
    np.testing.assert_allclose(symmetry_weights(core_chain, part, core_net.species),
                               [1, 1, 1, 2 / 3, 1 / 3])


def test_reconstruction_exact(core, core_net, core_chain):
    part = induced_partition(core_chain, core[1])
    part = part.with_weights(symmetry_weights(core_chain, part, core_net.species))
    t = np.linspace(0, 5, 26)
    tol = 1e-11
    lumped = cme_integrate(lump(core_chain, part), t, tol=tol)
    rec = reconstruct(lumped, part, core_chain)
    assert rec.exact
    full = cme_integrate(core_chain, t, tol=tol).probs
    assert np.abs(rec.distribution.probs - full).max() <= 10 * 1e-10
    np.testing.assert_array_equal(rec.distribution.probs[0], core_chain.initial)


def test_reconstruction_error_decays(core, core_net, core_chain):
    part = induced_partition(core_chain, core[1])
    part = part.with_weights(symmetry_weights(core_chain, part, core_net.species))
    p0 = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
    chain = core_chain.with_initial(p0)
    t = np.linspace(0, 5, 26)
    lumped = cme_integrate(lump(chain, part), t, tol=1e-11)
    rec = reconstruct(lumped, part, chain)
    assert not rec.exact and rec.initial_mismatch == pytest.approx(2 / 3)
    full = cme_integrate(chain, t, tol=1e-11).probs
    err = np.abs(rec.distribution.probs - full).max(axis=1)
    bound = abs(0.5 * p0[3] - p0[4]) * np.exp(-2.3 * t)
    assert np.all(err <= bound + 1e-9)


def test_reconstruction_rejects_bad_weights(core, core_chain):
    part = induced_partition(core_chain, core[1])
    lumped = cme_integrate(lump(core_chain, part), [0.0, 1.0])
    with pytest.raises(ReductionError):
        reconstruct(lumped, part, core_chain, weights=np.array([1, 1, 1, 0.5, 0.5]))


def test_rate_rescaling_keeps_verdicts(core, core_model, core_net):
    for factor in (0.1, 7.0):
        net = core_net.scaled(factor)
        chain = build_ctmc(net, net.initial_state(core_model))
        part = induced_partition(chain, core[1])
        beta = symmetry_weights(chain, part, net.species)
        np.testing.assert_allclose(beta, [1, 1, 1, 2 / 3, 1 / 3])
        assert check_forward_lumpable(chain, part) and check_backward_bisimilar(chain, part, beta)


@pytest.mark.parametrize("seed", range(25))
def test_annotation_soundness_random_models(seed):
    model = parse_model(random_tree_model(random.Random(seed)))
    net = expand(model, cap=500)
    chain = build_ctmc(net, net.initial_state(model), cap=20_000)
    fs = generate_fragments(model, annotate(model), network=net)
    verdict = check_forward_lumpable(chain, induced_partition(chain, fs))
    assert verdict, verdict.witness
    reduce_ode(model, annotate(model), network=net)
