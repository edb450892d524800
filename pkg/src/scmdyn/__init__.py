"""Structural causal model simulation, interventions and off-policy evaluation."""

__version__ = "0.1.0"

from .counterfactual import abduct, abduct_batch, counterfactual_worlds, replay, sample_posterior
from .equations import Equation, Interval, PointMass, make_equation, register_equation, registered_equations
from .errors import *  # noqa: F401,F403
from .graph import Node, ScmGraph, endogenous, exogenous, validate_and_order
from .interventions import IDENTITY, Atomic, Composite, Policy, apply, compose, do_atomic, do_policy, interventional_estimate
from .ope import (
    DecisionPolicy,
    EvaluationReport,
    LoggedDataset,
    ModelSpec,
    SweepResult,
    importance_weights,
    log_dataset,
    mismatch_sweep,
    value_counterfactual,
    value_importance_sampling,
    value_model_based,
)
from .priors import Bernoulli, Gaussian, NoisePrior, Uniform, prior_from_dict
from .sampling import Estimate, estimate, evaluate, sample_exogenous, sample_worlds
from .serialize import graph_from_dict, graph_to_dict, load_graph, dump_graph
from .world import World, WorldBatch, worlds_to_csv
from . import bandit, lending  # noqa: E402  (registers model equations)
