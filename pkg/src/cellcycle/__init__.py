"""Simulation and verification toolkit for generalized cell-cycle Markov chains.

Modules: :mod:`model_core` (models and assumption audit), :mod:`chain_sim`
(simulation and empirical measures), :mod:`fm_metric` (Fortet-Mourier
distance), :mod:`coupling_engine`, :mod:`ergodicity_lab`, :mod:`limit_lab`
and the :mod:`cli` front end.
"""

from .chain_sim import EmpiricalMeasure, Trajectory, pushforward, simulate, step
from .fm_metric import fm_distance
from .kernels import BACKEND
from .model_core import ModelSpec, Probe, audit_assumptions, builtin_model

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EmpiricalMeasure",
    "ModelSpec",
    "Probe",
    "Trajectory",
    "audit_assumptions",
    "builtin_model",
    "fm_distance",
    "pushforward",
    "simulate",
    "step",
]
