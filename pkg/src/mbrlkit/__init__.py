"""mbrlkit: a small model-based reinforcement learning toolkit.

Environments, function approximators, dynamics models, planners and learners
are wired together by control flows and driven from TOML experiment configs.
"""

__version__ = "0.1.0"
