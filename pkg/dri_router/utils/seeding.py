"""Counter-based seed derivation so one master seed reproduces a whole run."""

from typing import Union

import numpy as np


STREAMS = {
    "clustering": 1,
    "solver": 2,
    "local_search": 3,
    "synthetic": 4,
    "grid": 5,
    "oracle": 6,
}


def _stream_id(stream: Union[str, int]) -> int:
    if isinstance(stream, int):
        return stream
    if stream not in STREAMS:
        raise ValueError(f"Unknown seed stream: {stream}")
    return STREAMS[stream]


def derive_seed(master: int, stream: Union[str, int], index: int = 0) -> int:
    """
    Derive an independent 32-bit seed for (stream, index) from a master seed.

    Args:
        master: Master seed of the run
        stream: Named consumer ('clustering', 'solver', ...) or a raw stream id
        index: Counter within the stream (subproblem index, restart number, ...)

    Returns:
        Non-negative integer seed
    """
    sequence = np.random.SeedSequence([int(master) & 0xFFFFFFFF, _stream_id(stream), int(index)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def make_rng(master: int, stream: Union[str, int], index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, stream, index))
