"""Named random streams derived from one master seed."""

import numpy as np

STREAMS = {"sbm": 0, "node_mask": 1, "init": 2, "probe": 3, "mask_order": 4, "split": 5}


def rng_stream(seed, name):
    """Independent generator for stream ``name``; changing one stream's use
    never shifts another's draws."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))
