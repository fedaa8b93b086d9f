"""Node importance scores: in-degree, eigenvector centrality and PageRank.

Adjacency convention throughout: ``A[u, v] = 1`` iff the edge ``u -> v``
exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NonConvergence, ZeroVector
from .graph import in_degree, out_degree

METHODS = ("indegree", "eigenvector", "pagerank")


@dataclass(frozen=True)
class NodeScores:
    values: np.ndarray
    method: str

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class PowerIterConfig:
    tol: float = 1e-10
    max_iter: int = 10_000
    alpha: float = 0.85

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


def indegree_scores(g):
    return NodeScores(in_degree(g).astype(np.float64), "indegree")


def _row_aggregate(g, x):
    # y[v] = sum_u A[v, u] x[u], i.e. sum over out-neighbours of v
    src = np.repeat(np.arange(g.n_nodes), np.diff(g.out_offsets))
    return np.bincount(src, weights=x[g.out_targets], minlength=g.n_nodes)


def eigenvector_scores(g, cfg=None):
    """Leading eigenvector of ``A`` by power iteration.

    Iterates on ``A + I`` (same eigenvectors, spectrum shifted by one) so that
    bipartite graphs, whose ``A`` has eigenvalues ``+lam`` and ``-lam``, do not
    oscillate. Returns the L1-normalized scores and the Rayleigh quotient of
    ``A`` at the final iterate.
    """
    cfg = cfg or PowerIterConfig()
    n = g.n_nodes
    if g.n_edges == 0:
        raise ZeroVector("eigenvector centrality needs at least one edge")
    x = np.full(n, 1.0 / n)
    delta = np.inf
    for _ in range(cfg.max_iter):
        y = x + _row_aggregate(g, x)
        total = y.sum()
        if not total > 0:
            raise ZeroVector("power iterate collapsed to zero")
        y /= total
        delta = np.abs(y - x).sum()
        x = y
        if delta < cfg.tol:
            break
    else:
        raise NonConvergence(cfg.max_iter, delta)
    lam = float(x @ _row_aggregate(g, x) / (x @ x))
    return NodeScores(x, "eigenvector"), lam


def pagerank_scores(g, cfg=None):
    """PageRank with uniform teleport; dangling nodes spread their mass uniformly."""
    cfg = cfg or PowerIterConfig()
    n = g.n_nodes
    if n == 0:
        return NodeScores(np.zeros(0), "pagerank")
    deg = out_degree(g).astype(np.float64)
    dangling = deg == 0
    src = np.repeat(np.arange(n), np.diff(g.out_offsets))
    inv_deg = np.zeros(n)
    inv_deg[~dangling] = 1.0 / deg[~dangling]
    a = cfg.alpha
    x = np.full(n, 1.0 / n)
    delta = np.inf
    for _ in range(cfg.max_iter):
        flow = np.bincount(g.out_targets, weights=(x * inv_deg)[src], minlength=n)
        y = a * (flow + x[dangling].sum() / n) + (1.0 - a) / n
        y /= y.sum()
        delta = np.abs(y - x).sum()
        x = y
        if delta < cfg.tol:
            return NodeScores(x, "pagerank")
    raise NonConvergence(cfg.max_iter, delta)


def node_scores(g, method="indegree", cfg=None):
    method = method.lower().replace("-", "").replace("_", "")
    if method == "indegree":
        return indegree_scores(g)
    if method == "eigenvector":
        return eigenvector_scores(g, cfg)[0]
    if method == "pagerank":
        return pagerank_scores(g, cfg)
    raise ValueError(f"unknown centrality method {method!r}; expected one of {METHODS}")
