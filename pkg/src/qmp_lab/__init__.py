"""Bayesian recovery from quadratic measurements by quadratic message passing."""

from .model import ChannelSpec, GqeInstance, PriorSpec, generate_instance
from .solver import QmpConfig, run
from .state_evolution import SeConfig, run_se

__all__ = ["ChannelSpec", "GqeInstance", "PriorSpec", "QmpConfig", "SeConfig",
           "generate_instance", "run", "run_se"]
