"""Immutable CSR graph storage, bundle I/O and synthetic SBM graphs.

Edges are stored twice, as an out-CSR (row ``u`` lists targets of ``u -> v``)
and an in-CSR (row ``v`` lists sources ``u`` of ``u -> v``). Undirected graphs
hold each edge in both directions.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import GraphFormatError

SPLIT_TAGS = ("train", "val", "test")


def _csr(n, rows, cols):
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
    return offsets, cols.astype(np.int64)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """A 0/1 adjacency structure with a dense float64 feature matrix.

    Build instances with :meth:`from_edges`; the raw constructor trusts its
    arguments.
    """

    n_nodes: int
    out_offsets: np.ndarray
    out_targets: np.ndarray
    in_offsets: np.ndarray
    in_targets: np.ndarray
    directed: bool
    features: np.ndarray
    labels: np.ndarray | None = None
    split: np.ndarray | None = None
    name: str = field(default="graph", compare=False)

    @classmethod
    def from_edges(cls, n_nodes, edges, features, *, directed=False, labels=None,
                   split=None, name="graph"):
        """Validate and build a graph.

        ``edges`` is any iterable of ``(u, v)`` pairs. For undirected graphs
        each pair is symmetrized, so listing both ``(u, v)`` and ``(v, u)``
        is a duplicate.
        """
        n = int(n_nodes)
        if n < 0:
            raise GraphFormatError(f"n_nodes must be >= 0, got {n}")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                       dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
            raise GraphFormatError(f"edge ({bad[0]}, {bad[1]}) references a node outside [0, {n})")
        if not directed:
            canon = np.sort(e, axis=1)
        else:
            canon = e
        if len(canon):
            uniq, counts = np.unique(canon, axis=0, return_counts=True)
            if (counts > 1).any():
                u, v = uniq[counts > 1][0]
                raise GraphFormatError(f"duplicate edge ({u}, {v})")
        if not directed and len(e):
            loops = e[:, 0] == e[:, 1]
            e = np.concatenate([e, e[~loops][:, ::-1]])

        x = np.array(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != n:
            raise GraphFormatError(f"features must have shape ({n}, F), got {x.shape}")
        if not np.isfinite(x).all():
            raise GraphFormatError("features contain non-finite values")

        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (n,):
                raise GraphFormatError(f"labels must have length {n}, got {labels.shape}")
            if labels.size and labels.min() < 0:
                raise GraphFormatError("labels must be non-negative class indices")
        if split is not None:
            split = np.asarray(split, dtype="<U5")
            if split.shape != (n,):
                raise GraphFormatError(f"split must have length {n}, got {split.shape}")
            bad = set(np.unique(split)) - set(SPLIT_TAGS)
            if bad:
                raise GraphFormatError(f"unknown split tags {sorted(bad)}")

        src, dst = e[:, 0], e[:, 1]
        out_off, out_tgt = _csr(n, src, dst)
        in_off, in_tgt = _csr(n, dst, src)
        return cls(
            n_nodes=n,
            out_offsets=_frozen(out_off),
            out_targets=_frozen(out_tgt),
            in_offsets=_frozen(in_off),
            in_targets=_frozen(in_tgt),
            directed=bool(directed),
            features=_frozen(x),
            labels=None if labels is None else _frozen(labels),
            split=None if split is None else _frozen(split),
            name=name,
        )

    @property
    def n_dims(self):
        return self.features.shape[1]

    @property
    def n_edges(self):
        """Number of stored directed edges (2x the pair count when undirected)."""
        return int(self.out_offsets[-1])

    @property
    def n_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def edge_array(self):
        """All stored directed edges as an ``(E, 2)`` array sorted by ``(u, v)``."""
        src = np.repeat(np.arange(self.n_nodes), np.diff(self.out_offsets))
        return np.stack([src, self.out_targets], axis=1)

    def adjacency(self):
        """Dense ``A`` with ``A[u, v] = 1`` iff ``u -> v``. Use only for small graphs."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        e = self.edge_array()
        a[e[:, 0], e[:, 1]] = 1.0
        return a

    def split_mask(self, tag):
        if self.split is None:
            raise GraphFormatError("graph has no split")
        return self.split == tag

    def with_features(self, features):
        x = np.array(features, dtype=np.float64)
        if x.shape[0] != self.n_nodes or x.ndim != 2:
            raise GraphFormatError(f"features must have {self.n_nodes} rows")
        return Graph(self.n_nodes, self.out_offsets, self.out_targets, self.in_offsets,
                     self.in_targets, self.directed, _frozen(x), self.labels, self.split,
                     self.name)

    @cached_property
    def attention_index(self):
        """``(src, dst)`` edge arrays of the self-looped graph, grouped by ``dst``."""
        g = with_self_loops(self)
        dst = np.repeat(np.arange(g.n_nodes), np.diff(g.in_offsets))
        return _frozen(g.in_targets.copy()), _frozen(dst)


def in_degree(g):
    return np.diff(g.in_offsets).astype(np.int64)


def out_degree(g):
    return np.diff(g.out_offsets).astype(np.int64)


def _check_node(g, v):
    if not 0 <= v < g.n_nodes:
        raise IndexError(f"node {v} out of range [0, {g.n_nodes})")


def neighbors_out(g, v):
    _check_node(g, v)
    return g.out_targets[g.out_offsets[v]:g.out_offsets[v + 1]].tolist()


def neighbors_in(g, v):
    _check_node(g, v)
    return g.in_targets[g.in_offsets[v]:g.in_offsets[v + 1]].tolist()


def with_self_loops(g):
    """Return ``g`` with exactly one ``(v, v)`` edge per node."""
    e = g.edge_array()
    have = np.zeros(g.n_nodes, dtype=bool)
    have[e[e[:, 0] == e[:, 1], 0]] = True
    if have.all():
        return g
    missing = np.flatnonzero(~have)
    e = np.concatenate([e, np.stack([missing, missing], axis=1)])
    # directed=True: e already holds both directions for undirected graphs
    out = Graph.from_edges(g.n_nodes, e, g.features, directed=True, labels=g.labels,
                           split=g.split, name=g.name)
    object.__setattr__(out, "directed", g.directed)
    return out


def relabel(g, perm):
    """Relabel nodes so that old node ``i`` becomes new node ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    e = perm[g.edge_array()]
    if not g.directed:
        e = e[e[:, 0] <= e[:, 1]]
    return Graph.from_edges(
        g.n_nodes, e, g.features[inv], directed=g.directed,
        labels=None if g.labels is None else g.labels[inv],
        split=None if g.split is None else g.split[inv], name=g.name,
    )


# --------------------------------------------------------------------------
# Bundle I/O


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [ln.rstrip("\r\n") for ln in fh if ln.strip()]


def _parse_int(tok, path, lineno):
    try:
        return int(tok)
    except ValueError:
        raise GraphFormatError(f"{path}:{lineno}: expected an integer, got {tok!r}") from None


def load_graph_bundle(dir_path):
    """Load ``edges.tsv`` + ``features.tsv`` (+ optional labels/split/meta)."""
    d = Path(dir_path)
    for req in ("edges.tsv", "features.tsv"):
        if not (d / req).is_file():
            raise FileNotFoundError(f"missing {req} in {d}")

    directed = False
    if (d / "meta.tsv").is_file():
        for i, ln in enumerate(_read_lines(d / "meta.tsv"), 1):
            key, _, val = ln.partition("\t")
            if key == "directed":
                if val not in ("true", "false"):
                    raise GraphFormatError(f"meta.tsv:{i}: directed must be true|false, got {val!r}")
                directed = val == "true"

    rows = []
    width = None
    for i, ln in enumerate(_read_lines(d / "features.tsv"), 1):
        toks = ln.split("\t")
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise GraphFormatError(f"features.tsv:{i}: ragged row ({len(toks)} values, expected {width})")
        try:
            row = [float(t) for t in toks]
        except ValueError:
            raise GraphFormatError(f"features.tsv:{i}: unparsable real") from None
        if not all(math.isfinite(v) for v in row):
            raise GraphFormatError(f"features.tsv:{i}: non-finite feature value")
        rows.append(row)
    n = len(rows)
    x = np.array(rows, dtype=np.float64).reshape(n, width or 0)

    edges = []
    for i, ln in enumerate(_read_lines(d / "edges.tsv"), 1):
        toks = ln.split("\t")
        if len(toks) != 2:
            raise GraphFormatError(f"edges.tsv:{i}: expected 'u<TAB>v'")
        u, v = (_parse_int(t, "edges.tsv", i) for t in toks)
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edges.tsv:{i}: node id out of range [0, {n})")
        edges.append((u, v))

    labels = split = None
    if (d / "labels.tsv").is_file():
        labels = [_parse_int(t, "labels.tsv", i) for i, t in enumerate(_read_lines(d / "labels.tsv"), 1)]
    if (d / "split.tsv").is_file():
        split = _read_lines(d / "split.tsv")
    return Graph.from_edges(n, edges, x, directed=directed, labels=labels, split=split,
                            name=d.name)


def save_graph_bundle(g, dir_path):
    """Write ``g`` as a bundle directory in canonical form.

    Undirected edges are written once with ``u <= v``; all edge lines are
    sorted. Reals use the shortest round-tripping decimal form.
    """
    d = Path(dir_path)
    os.makedirs(d, exist_ok=True)
    e = g.edge_array()
    if not g.directed:
        e = e[e[:, 0] <= e[:, 1]]
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in e.tolist())
    with open(d / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines("\t".join(repr(v) for v in row) + "\n" for row in g.features.tolist())
    with open(d / "meta.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"directed\t{'true' if g.directed else 'false'}\n")
    if g.labels is not None:
        with open(d / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{c}\n" for c in g.labels.tolist())
    if g.split is not None:
        with open(d / "split.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{t}\n" for t in g.split.tolist())


# --------------------------------------------------------------------------
# Stochastic block model


@dataclass(frozen=True)
class SbmConfig:
    n_nodes: int = 300
    n_blocks: int = 3
    p_in: float = 0.1
    p_out: float = 0.01
    feat_dim: int = 16
    signal: float = 0.5
    noise_sigma: float = 1.0
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError(f"need 0 <= p_out <= p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}")
        if self.n_blocks < 1 or self.n_nodes < self.n_blocks:
            raise ValueError("need 1 <= n_blocks <= n_nodes")
        if self.feat_dim < 1:
            raise ValueError("feat_dim must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def sbm_blocks(n_nodes, n_blocks):
    """Contiguous block ids; the remainder of ``n_nodes / n_blocks`` joins the last block."""
    size = n_nodes // n_blocks
    return np.minimum(np.arange(n_nodes) // size, n_blocks - 1)


def sbm_block_means(n_blocks, feat_dim):
    """Per-block mean vectors: block ``b`` owns a disjoint slice of dimensions set to 1."""
    means = np.zeros((n_blocks, feat_dim))
    width = max(1, feat_dim // n_blocks)
    for b in range(n_blocks):
        if width * n_blocks <= feat_dim:
            means[b, b * width:(b + 1) * width] = 1.0
        else:
            means[b, b % feat_dim] = 1.0
    return means


def random_split(n, rng, fractions=(0.1, 0.1)):
    """Tag nodes train/val/test at random; test takes whatever is left."""
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    split = np.full(n, "test", dtype="<U5")
    split[perm[:n_train]] = "train"
    split[perm[n_train:n_train + n_val]] = "val"
    return split


def sbm_generate(cfg):
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_nodes
    blocks = sbm_blocks(n, cfg.n_blocks)
    iu, iv = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[iv], cfg.p_in, cfg.p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], iv[keep]], axis=1)
    means = sbm_block_means(cfg.n_blocks, cfg.feat_dim)
    x = cfg.signal * means[blocks] + cfg.noise_sigma * rng.standard_normal((n, cfg.feat_dim))
    split = random_split(n, rng)
    return Graph.from_edges(n, edges, x, directed=False, labels=blocks, split=split, name="sbm")
