"""Discrete divergence-form operators with potentials and their semigroups."""

from .domain import DIRICHLET, NEUMANN, GridDomain
from .operator import DiscreteOperator, assemble, lp_norm
from .evolution import CrankNicolson, resolvent_apply, semigroup_apply, sector_distance
from .experiments import (
    ContractivityResult,
    EmbeddingReport,
    FlowTrace,
    TimeGrid,
    TruncationTable,
    bilinear_embedding,
    contractivity_experiment,
    dissipation_value,
    dissipativity_check,
    flow_trace,
    lp_ball_invariance_probe,
    random_fields,
    truncation_convergence,
)
from .problem import Problem, load_problem, potential_from_json, data_from_json, to_csv
