"""Cooperative multi-agent contextual linear bandits with batched elimination."""

from .config import RunConfig
from .decbe import run_decbe
from .disbe import run_disbe
from .baseline import dislinucb_baseline
from .environment import make_instance, make_lower_bound_instance

__all__ = ["RunConfig", "run_disbe", "run_decbe", "dislinucb_baseline", "make_instance", "make_lower_bound_instance"]
__version__ = "0.1.0"
