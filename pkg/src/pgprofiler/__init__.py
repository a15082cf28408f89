"""Policy-gradient training with high-confidence gating of candidate updates.

Candidate parameter updates from an inner policy-gradient algorithm are
accepted, rejected, or blended based on Monte Carlo return comparisons whose
evaluation budgets come from Hoeffding concentration bounds. Ships desk-scale
environments, exact tabular oracles for verification, and a reproducible
experiment harness (``pgprof`` on the command line).
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["__version__", "kernel_backend"]
