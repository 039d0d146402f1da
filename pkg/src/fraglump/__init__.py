"""Rule-based reaction models: expansion, simulation and fragment reduction."""

from __future__ import annotations

from .dynamics import (
    MarkovGraph,
    build_ctmc,
    cme_integrate,
    cme_mean,
    ode_integrate,
    ssa_simulate,
)
from .network import ReactionNetwork, convert_rate, expand
from .parser import Model, ModelError, parse_model, validate_model
from .reduction import (
    Annotation,
    annotate,
    check_backward_bisimilar,
    check_forward_lumpable,
    generate_fragments,
    induced_partition,
    lump,
    project_state,
    reconstruct,
    reduce_ode,
    weights_from_symmetry,
)
from .sitegraph import (
    SiteGraph,
    Species,
    canonical_key,
    count_automorphisms,
    find_embeddings,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "MarkovGraph",
    "Model",
    "ModelError",
    "ReactionNetwork",
    "SiteGraph",
    "Species",
    "annotate",
    "build_ctmc",
    "canonical_key",
    "check_backward_bisimilar",
    "check_forward_lumpable",
    "cme_integrate",
    "cme_mean",
    "convert_rate",
    "count_automorphisms",
    "expand",
    "find_embeddings",
    "generate_fragments",
    "induced_partition",
    "lump",
    "ode_integrate",
    "parse_model",
    "project_state",
    "reconstruct",
    "reduce_ode",
    "ssa_simulate",
    "validate_model",
    "weights_from_symmetry",
]
