"""
Seeded random streams.

All randomness goes through numpy's PCG64 bit generator, which produces the same
stream on every platform for a given seed. A single master seed is expanded into
independent data / init / shuffle seeds with numpy's SeedSequence.
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


def make_rng(seed: Union[int, Sequence[int]]) -> np.random.Generator:
    """Return a PCG64-backed generator for ``seed``.

    A sequence seed such as [seed, 1] selects an independent sub-stream.
    """
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class RunSeeds:
    data: int
    init: int
    shuffle: int


def derive_seeds(master: int) -> RunSeeds:
    """Expand one master seed into the three per-run seeds.

    The expansion is SeedSequence(master).spawn(3), each child collapsed to a
    32-bit integer, so a run is fully replayable from its master seed.
    """
    children = np.random.SeedSequence(master).spawn(3)
    data, init, shuffle = (int(child.generate_state(1)[0]) for child in children)
    return RunSeeds(data=data, init=init, shuffle=shuffle)
