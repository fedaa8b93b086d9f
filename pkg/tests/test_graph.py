import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hatgae.exceptions import GraphFormatError
from hatgae.graph import (
    Graph,
    SbmConfig,
    in_degree,
    load_graph_bundle,
    neighbors_in,
    neighbors_out,
    out_degree,
    relabel,
    save_graph_bundle,
    sbm_blocks,
    sbm_generate,
    with_self_loops,
)

from .conftest import random_graph


def write_bundle(d, edges, features, directed=None, labels=None, split=None):
    d.mkdir(parents=True, exist_ok=True)
    (d / "edges.tsv").write_text("".join(f"{u}\t{v}\n" for u, v in edges))
    (d / "features.tsv").write_text("".join("\t".join(map(str, r)) + "\n" for r in features))
    if directed is not None:
        (d / "meta.tsv").write_text(f"directed\t{'true' if directed else 'false'}\n")
    if labels is not None:
        (d / "labels.tsv").write_text("".join(f"{c}\n" for c in labels))
    if split is not None:
        (d / "split.tsv").write_text("".join(f"{t}\n" for t in split))
    return d


def test_load_undirected_symmetrizes(tmp_path):
    g = load_graph_bundle(write_bundle(tmp_path / "b", [(0, 1)], [[1, 0], [0, 1]]))
    assert g.n_nodes == 2 and not g.directed
    assert in_degree(g).tolist() == [1, 1]


def test_load_directed_column_counts(tmp_path):
    g = load_graph_bundle(write_bundle(tmp_path / "b", [(0, 1), (0, 2), (1, 2)],
                                       [[0.0], [1.0], [2.0]], directed=True))
    assert in_degree(g).tolist() == [0, 1, 2]


@pytest.mark.parametrize("edges,features,match", [
    ([(0, 1), (0, 1)], [[1.0], [2.0]], "duplicate"),
    ([(0, 1), (1, 0)], [[1.0], [2.0]], "duplicate"),
    ([(0, 2)], [[1.0], [2.0]], "out of range"),
    ([(0, 1)], [[1.0, 2.0], [3.0]], "ragged"),
    ([(0, 1)], [[1.0], ["nan"]], "non-finite"),
    ([("a", 1)], [[1.0], [2.0]], "integer"),
])
def test_load_errors(tmp_path, edges, features, match):
    d = write_bundle(tmp_path / "b", edges, features)
    with pytest.raises(GraphFormatError, match=match):
        load_graph_bundle(d)


def test_load_missing_files(tmp_path):
    (tmp_path / "b").mkdir()
    with pytest.raises(FileNotFoundError):
        load_graph_bundle(tmp_path / "b")


def test_roundtrip_is_byte_identical(tmp_path):
    g = sbm_generate(SbmConfig(n_nodes=40, feat_dim=5, seed=3))
    save_graph_bundle(g, tmp_path / "a")
    g2 = load_graph_bundle(tmp_path / "a")
    save_graph_bundle(g2, tmp_path / "b")
    for name in ("edges.tsv", "features.tsv", "meta.tsv", "labels.tsv", "split.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    np.testing.assert_array_equal(g.features, g2.features)
    np.testing.assert_array_equal(g.edge_array(), g2.edge_array())


def test_roundtrip_directed(tmp_path):
    d = write_bundle(tmp_path / "a", [(2, 0), (0, 1)], [[0.5], [1.5], [-2.0]], directed=True)
    g = load_graph_bundle(d)
    save_graph_bundle(g, tmp_path / "b")
    assert sorted((tmp_path / "b" / "edges.tsv").read_text().splitlines()) == ["0\t1", "2\t0"]


def test_in_degree_examples(cycle3):
    assert in_degree(Graph.from_edges(3, [], np.zeros((3, 1)))).tolist() == [0, 0, 0]
    assert in_degree(cycle3).tolist() == [1, 1, 1]


def test_neighbors():
    star = Graph.from_edges(6, [(0, i) for i in range(1, 5)], np.zeros((6, 2)))
    assert neighbors_out(star, 0) == [1, 2, 3, 4]
    assert neighbors_in(star, 0) == [1, 2, 3, 4]
    assert neighbors_out(star, 5) == []
    cyc = Graph.from_edges(3, [(0, 1), (1, 2), (2, 0)], np.zeros((3, 1)), directed=True)
    assert neighbors_out(cyc, 0) == [1]
    assert neighbors_in(cyc, 0) == [2]
    with pytest.raises(IndexError):
        neighbors_out(cyc, 3)


def test_with_self_loops_examples(cycle3):
    empty = Graph.from_edges(2, [], np.zeros((2, 1)))
    assert with_self_loops(empty).edge_array().tolist() == [[0, 0], [1, 1]]
    assert with_self_loops(cycle3).n_edges == 6
    g = Graph.from_edges(2, [(0, 0), (0, 1)], np.zeros((2, 1)), directed=True)
    looped = with_self_loops(g)
    assert looped.edge_array().tolist().count([0, 0]) == 1
    assert looped.n_edges == 3


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 15), st.floats(0, 1), st.booleans(), st.integers(0, 2**16))
def test_graph_invariants(n, p, directed, seed):
    g = random_graph(np.random.default_rng(seed), n, p, directed=directed)
    for off, tgt in ((g.out_offsets, g.out_targets), (g.in_offsets, g.in_targets)):
        assert (np.diff(off) >= 0).all() and off[-1] == len(tgt)
        assert (tgt < n).all()
    # in-CSR and out-CSR describe the same edge set
    src_in = np.repeat(np.arange(n), np.diff(g.in_offsets))
    rebuilt = sorted(zip(g.in_targets.tolist(), src_in.tolist()))
    assert rebuilt == sorted(map(tuple, g.edge_array().tolist()))
    assert len(set(rebuilt)) == len(rebuilt)
    if not directed:
        np.testing.assert_array_equal(in_degree(g), out_degree(g))
    once = with_self_loops(g)
    twice = with_self_loops(once)
    np.testing.assert_array_equal(once.edge_array(), twice.edge_array())


def test_relabel_permutes_structure():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 10, 0.3, directed=True)
    perm = rng.permutation(10)
    h = relabel(g, perm)
    np.testing.assert_array_equal(h.adjacency()[np.ix_(perm, perm)], g.adjacency())
    np.testing.assert_array_equal(h.features[perm], g.features)


def test_graph_is_immutable(triangle):
    with pytest.raises(ValueError):
        triangle.features[0, 0] = 5.0
    with pytest.raises(AttributeError):
        triangle.n_nodes = 4


def test_sbm_forced_edges():
    g = sbm_generate(SbmConfig(n_nodes=6, n_blocks=2, p_in=1.0, p_out=0.0, feat_dim=2))
    pairs = {tuple(e) for e in g.edge_array().tolist() if e[0] < e[1]}
    assert pairs == {(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)}
    assert g.labels.tolist() == [0, 0, 0, 1, 1, 1]


def test_sbm_no_edges():
    g = sbm_generate(SbmConfig(n_nodes=30, p_in=0.0, p_out=0.0))
    assert g.n_edges == 0


def test_sbm_intra_density_within_three_sigma():
    cfg = SbmConfig(n_nodes=300, n_blocks=3, p_in=0.1, p_out=0.01, seed=7)
    g = sbm_generate(cfg)
    blocks = sbm_blocks(300, 3)
    e = g.edge_array()
    e = e[e[:, 0] < e[:, 1]]
    intra = int(np.sum(blocks[e[:, 0]] == blocks[e[:, 1]]))
    pairs = 3 * 100 * 99 // 2
    sigma = np.sqrt(pairs * 0.1 * 0.9)
    assert abs(intra - 0.1 * pairs) <= 3 * sigma


def test_sbm_remainder_goes_to_last_block():
    assert np.bincount(sbm_blocks(11, 3)).tolist() == [3, 3, 5]


def test_sbm_split_and_determinism():
    cfg = SbmConfig(n_nodes=100, seed=4)
    a, b = sbm_generate(cfg), sbm_generate(cfg)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.edge_array(), b.edge_array())
    np.testing.assert_array_equal(a.split, b.split)
    counts = {t: int(np.sum(a.split == t)) for t in ("train", "val", "test")}
    assert counts == {"train": 10, "val": 10, "test": 80}


def test_sbm_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        sbm_generate(SbmConfig(p_in=0.1, p_out=0.2))
    with pytest.raises(ValueError):
        sbm_generate(SbmConfig(p_in=1.5))
