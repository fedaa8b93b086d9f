"""Feature-dimension importance and the hierarchical masking schedule.

Dimensions are masked least-important first. The schedule is computed once
from the unmasked features; every level masks a superset of the previous one,
and each round masks ``floor(remaining * pf)`` of the still-visible dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ScheduleExhausted


@dataclass(frozen=True)
class DimensionScores:
    values: np.ndarray


@dataclass(frozen=True)
class MaskSchedule:
    order: np.ndarray
    pf: float
    rounds: int
    counts: tuple

    @property
    def n_dims(self):
        return len(self.order)

    @property
    def cumulative(self):
        """Masked-dimension sets after each round (index ``i`` = after round ``i + 1``)."""
        ends = np.cumsum(self.counts)
        return [self.order[:k] for k in ends]

    @property
    def remaining(self):
        """Visible dimension count before each round, plus the count after the last."""
        return [self.n_dims - int(k) for k in np.concatenate([[0], np.cumsum(self.counts)])]

    def masked_dims(self, level):
        """Dimensions zeroed at hierarchy ``level`` (level 1 masks nothing)."""
        if not 1 <= level <= self.rounds + 1:
            raise ValueError(f"level must be in [1, {self.rounds + 1}], got {level}")
        return self.order[:int(sum(self.counts[:level - 1]))]


@dataclass(frozen=True)
class HierarchicalFeatures:
    level: int
    matrix: np.ndarray


def dimension_importance(g, scores):
    """Per-dimension importance: node scores weighted by absolute feature values."""
    s = np.asarray(getattr(scores, "values", scores), dtype=np.float64)
    if s.shape != (g.n_nodes,):
        raise ValueError(f"expected {g.n_nodes} node scores, got shape {s.shape}")
    return DimensionScores(s @ np.abs(g.features))


def mask_counts(n_dims, pf, rounds):
    """Per-round counts; raises :class:`ScheduleExhausted` on the first zero round."""
    counts = []
    remaining = n_dims
    for i in range(1, rounds + 1):
        m = int(np.floor(remaining * pf))
        if m == 0:
            raise ScheduleExhausted(i, i - 1)
        counts.append(m)
        remaining -= m
    return counts


def build_mask_schedule(sd, pf, rounds, order=None):
    """Build the schedule from dimension scores.

    ``order`` overrides the importance ordering (used by the random-masking
    ablation); it must be a permutation of ``range(F)``.
    """
    values = np.asarray(getattr(sd, "values", sd), dtype=np.float64)
    if not 0.0 < pf < 1.0:
        raise ValueError(f"pf must lie in (0, 1), got {pf}")
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    n = len(values)
    if n < 2:
        raise ValueError(f"need at least 2 feature dimensions, got {n}")
    if order is None:
        order = np.argsort(values, kind="stable")
    else:
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(n)):
            raise ValueError("order must be a permutation of the dimension indices")
    counts = mask_counts(n, pf, rounds)
    order = order.astype(np.int64)
    order.setflags(write=False)
    return MaskSchedule(order=order, pf=float(pf), rounds=int(rounds), counts=tuple(counts))


def apply_adaptive_mask(x, dims):
    """Zero the listed columns of ``x`` across all rows."""
    x = np.asarray(x)
    dims = np.asarray(dims, dtype=np.int64).reshape(-1)
    if dims.size and (dims.min() < 0 or dims.max() >= x.shape[1]):
        raise IndexError(f"dimension index out of range [0, {x.shape[1]})")
    out = x.copy()
    out[:, dims] = 0.0
    return out


def features_at_level(g, sched, n):
    if n == 1:
        return HierarchicalFeatures(1, g.features)
    return HierarchicalFeatures(n, apply_adaptive_mask(g.features, sched.masked_dims(n)))
