"""Noisy-node sampling and the trainable noise vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import AllClean

MAX_RESAMPLES = 100
NOISE_INIT_STD = 0.02


@dataclass(frozen=True)
class NodeMask:
    """``flags[v]`` is True when node ``v`` is noisy (receives noise, is remasked and scored)."""

    flags: np.ndarray

    @property
    def count(self):
        return int(self.flags.sum())

    @property
    def indices(self):
        return np.flatnonzero(self.flags)

    def __len__(self):
        return len(self.flags)


def mask_flags(mask):
    """Boolean noisy-node flags from a :class:`NodeMask` or a plain array."""
    flags = mask.flags if isinstance(mask, NodeMask) else mask
    return np.asarray(flags, dtype=bool)


def sample_node_mask(n, pn, rng, retries=MAX_RESAMPLES):
    """Draw each node as noisy with probability ``pn``.

    An empty draw is redrawn up to ``retries`` times when ``pn > 0``. With
    ``pn == 0`` the all-clean mask is returned; callers that need a loss
    must reject it.
    """
    if not 0.0 <= pn <= 1.0:
        raise ValueError(f"noisy rate pn must lie in [0, 1], got {pn}")
    flags = rng.random(n) < pn
    if pn > 0 and n > 0:
        tries = 0
        while not flags.any():
            if tries >= retries:
                raise AllClean(f"no noisy node after {retries} resamples (pn={pn}, n={n})")
            flags = rng.random(n) < pn
            tries += 1
    return NodeMask(flags)


def init_noise(n_dims, rng, std=NOISE_INIT_STD):
    return rng.normal(0.0, std, size=(1, n_dims))


def apply_corruption(xn, mask, w):
    """Add the shared noise row ``w`` to every noisy row of ``xn``.

    ``xn`` may be an array, a :class:`~hatgae.masking.HierarchicalFeatures`
    or a tape tensor; ``w`` is a ``1 x F`` tape tensor, so the result is on
    ``w``'s tape and gradients reach ``w``.
    """
    x = getattr(xn, "matrix", xn)
    if not isinstance(x, ad.Tensor):
        x = w.tape.const(x)
    if len(mask) != x.shape[0]:
        raise ValueError(f"mask has {len(mask)} nodes, features have {x.shape[0]} rows")
    if w.shape != (1, x.shape[1]):
        raise ValueError(f"noise vector must have shape (1, {x.shape[1]}), got {w.shape}")
    return ad.add_to_rows(x, w, mask.indices)
