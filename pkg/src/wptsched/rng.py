"""Counter-based random streams.

Frames are processed in fixed-size blocks and each block draws from its own
generator keyed by ``(seed, block_index)``. Results therefore do not depend on
how blocks are spread over workers.
"""

import numpy as np

DEFAULT_BLOCK = 4096


def block_generator(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def iter_blocks(n, block_size=DEFAULT_BLOCK):
    """Yield ``(index, count)`` covering ``n`` frames."""
    if n < 0 or block_size < 1:
        raise ValueError("need n >= 0 and block_size >= 1")
    for i, start in enumerate(range(0, n, block_size)):
        yield i, min(block_size, n - start)
