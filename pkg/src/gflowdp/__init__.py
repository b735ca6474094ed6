"""Exact and learned samplers for unnormalized targets on the terminal
states of acyclic deterministic MDPs."""

from . import cli, envs, exact, learner, metrics, mdp, numerics, objectives
from .mdp import EnumeratedMdp, Trajectory, enumerate_mdp, invert, validate

__all__ = [
    "cli",
    "envs",
    "exact",
    "learner",
    "metrics",
    "mdp",
    "numerics",
    "objectives",
    "EnumeratedMdp",
    "Trajectory",
    "enumerate_mdp",
    "invert",
    "validate",
]
