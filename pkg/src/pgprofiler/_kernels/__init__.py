"""Rollout kernel backend selection.

The compiled Cython backend is used when available; set
``PGPROFILER_PURE_KERNELS=1`` to force the pure-Python reference kernels.
Both backends are bit-identical by contract, so the choice only affects
speed. ``BACKEND`` reports which one is active.
"""

from __future__ import annotations

import os

if os.environ.get("PGPROFILER_PURE_KERNELS", "") == "1":
    from . import pure as impl
else:
    try:
        from . import _core as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import pure as impl

BACKEND: str = impl.BACKEND

tabular_rollouts = impl.tabular_rollouts
cartpole_rollouts = impl.cartpole_rollouts
reacher_rollouts = impl.reacher_rollouts
