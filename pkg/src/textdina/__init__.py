"""Dynamic DINA cognitive diagnosis with a text-informed Q-matrix prior."""

from .model import (
    AttributeState,
    Dataset,
    ItemParams,
    QMatrix,
    StructuralParams,
    check_identifiable,
    enumerate_candidate_rows,
    ideal_response,
    initial_mastery_prob,
    log_likelihood,
    response_prob,
    transition_prob,
)
from .priors import PriorConfig, preset, q_inclusion_prob
from .sampler import FitData, MultiChainDraws, SamplerConfig, run_mcmc
from .simulate import SimCondition, run_study
from .text_signal import compute_tau, cosine_similarity, standardize_tau

__version__ = "0.1.0"

__all__ = [
    "AttributeState",
    "Dataset",
    "FitData",
    "ItemParams",
    "MultiChainDraws",
    "PriorConfig",
    "QMatrix",
    "SamplerConfig",
    "SimCondition",
    "StructuralParams",
    "check_identifiable",
    "compute_tau",
    "cosine_similarity",
    "enumerate_candidate_rows",
    "ideal_response",
    "initial_mastery_prob",
    "log_likelihood",
    "preset",
    "q_inclusion_prob",
    "response_prob",
    "run_mcmc",
    "run_study",
    "standardize_tau",
    "transition_prob",
]
