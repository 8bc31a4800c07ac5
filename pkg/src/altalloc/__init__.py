"""Commitment pacing and allocation tools for mixed liquid/illiquid portfolios.

The package has five layers:

- ``latent``: the joint generative model for returns and call/distribution
  intensities (log-normal returns, logit-normal intensities).
- ``dynamics``: the random and mean linear systems describing how commitments
  turn into calls, illiquid wealth, and distributions, plus impulse/step
  responses and steady-state gains.
- ``conic`` / ``programs``: a small conic-program representation, a solver
  front end, and builders for the planning problems (commitment QPs, the
  one-period risk-constrained allocation problem, and the full receding
  horizon planner).
- ``policies``: per-period decision rules sharing one observation/decision
  contract.
- ``simulate``: seeded Monte Carlo trajectory simulation, matched-seed policy
  comparison, and risk/return frontier sweeps.

The ``cli`` module exposes the config-driven experiment runner.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ModelConstructionError,
    NonConvergentSystemError,
    NonConvexProblemError,
)
from .latent import BlockLayout, JointDraw, LatentDistribution, sample_draw

__all__ = [
    "__version__",
    "BlockLayout",
    "JointDraw",
    "LatentDistribution",
    "sample_draw",
    "ConfigError",
    "ModelConstructionError",
    "NonConvergentSystemError",
    "NonConvexProblemError",
]
