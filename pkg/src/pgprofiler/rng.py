"""Counter-based random streams.

Every source of randomness in the package is a Philox generator keyed by an
integer path such as ``(root_seed, TRAIN, round, episode)``. Streams derived
from distinct paths are statistically independent, and a stream's output
depends only on its path, never on how many other streams were consumed
before it. That is what makes runs reproducible under any scheduling order.

Draw-order contract used by rollouts (see ``envs.rollout``): a rollout stream
is consumed as [reset draws][per-step draws, in step order]. NumPy guarantees
that batched draws (``g.random(n)``, ``g.standard_normal((n, d))``) consume
the underlying bit stream exactly like the equivalent sequence of scalar
draws, so the batch kernels and the step-by-step path see identical values.
"""

from __future__ import annotations

from numpy.random import Generator, Philox, SeedSequence

# Stream path tags. Keeping training and evaluation in disjoint subtrees is
# what makes the Vanilla wrapper bit-identical to the unwrapped algorithm.
TRAIN = 0x7421
EVAL = 0xE7A1
RESET = 0x4E5E

_MASK64 = (1 << 64) - 1


def substream(*path: int) -> Generator:
    """Return the generator for an integer path.

    Path components may be any Python ints; they are reduced mod 2**64 before
    keying so negative seeds are legal.
    """
    if not path:
        raise ValueError("substream needs at least one path component")
    entropy = tuple(int(p) & _MASK64 for p in path)
    return Generator(Philox(SeedSequence(entropy)))


def as_path(seed_material: int | tuple[int, ...]) -> tuple[int, ...]:
    """Normalize user-facing seed material (an int or a tuple) to a path."""
    if isinstance(seed_material, tuple):
        return tuple(int(p) for p in seed_material)
    return (int(seed_material),)
