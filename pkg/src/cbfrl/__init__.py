"""Safe RL with barrier-constrained action sampling.

Core package: distribution primitives, a hand-rolled MLP, box-scaled
Beta and clipped Gaussian policies with truncation machinery, barrier
safe-action-set constructions, the two benchmark environments, and the
trainers (random-horizon policy gradient, minimal PPO). The service
subpackage wraps experiments behind a FastAPI job runner; the CLI is a
thin client over it.
"""

__version__ = "0.1.0"
