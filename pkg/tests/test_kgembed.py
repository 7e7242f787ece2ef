import numpy as np
import pytest

from oracles import tucker_naive
from knowrare import config as cfgmod
from knowrare.condkg import ConditionGraph, Edge
from knowrare.errors import EmptyGraph, ZeroVector
from knowrare.kgembed import (
    SelectionResult,
    TuckerModel,
    default_k,
    init_tucker,
    load_embeddings,
    save_embeddings,
    select_sources,
    train_tucker,
    tucker_score,
    tucker_scores,
)
from knowrare.nncore import logistic
from knowrare.pipeline import Experiment


def test_score_examples():
    m = TuckerModel(["a", "b"], np.array([[3.0], [5.0]]), np.array([[7.0]]), np.array([[[2.0]]]))
    assert tucker_score(m, 0, 0, 1) == 210.0
    z = init_tucker(["a", "b"], 2, seed=1)
    z.W[:] = 0
    assert tucker_score(z, 1, 2, 0) == 0.0


def test_score_matches_naive_sum(rng):
    m = init_tucker([f"{i:03d}" for i in range(5)], 4, seed=2)
    m.W[:] = rng.normal(size=m.W.shape)
    h, r, t = rng.integers(5, size=20), rng.integers(3, size=20), rng.integers(5, size=20)
    batch = tucker_scores(m, h, r, t)
    for i in range(20):
        ref = tucker_naive(m.W, m.E[h[i]], m.R[r[i]], m.E[t[i]])
        assert abs(tucker_score(m, h[i], r[i], t[i]) - ref) < 1e-12
        assert abs(batch[i] - ref) < 1e-12


def single_edge_graph():
    return ConditionGraph(["001", "002", "003"], [Edge("001", "drug", "002", 1.0)])


def test_single_triple_learnt():
    m = train_tucker(single_edge_graph(), d=4, epochs=300, lr=0.01, seed=0)
    assert logistic(tucker_score(m, 0, 2, 1)) > 0.9


def test_zero_epochs_is_init_and_training_is_deterministic():
    g = single_edge_graph()
    m = train_tucker(g, d=3, epochs=0, seed=5)
    ref = init_tucker(g.nodes, 3, seed=5)
    for k in ("E", "R", "W"):
        np.testing.assert_array_equal(m.params[k], ref.params[k])
    a, b = train_tucker(g, d=3, epochs=20, seed=5), train_tucker(g, d=3, epochs=20, seed=5)
    assert a.E.tobytes() == b.E.tobytes()
    with pytest.raises(EmptyGraph):
        train_tucker(ConditionGraph(["001"], []))


def test_planted_clusters_recovered():
    config = cfgmod.resolve({"dataset": {"synth": {"n_conditions": 10, "n_clusters": 2, "patients_per_condition": [25, 35]}}})
    gaps = []
    for seed in range(5):
        exp = Experiment(config, seed)
        E = exp.embedding.E / np.linalg.norm(exp.embedding.E, axis=1, keepdims=True)
        cos = E @ E.T
        cl = np.array([exp.data.truth.cluster_of[c] for c in exp.embedding.nodes])
        same = cl[:, None] == cl[None, :]
        off = ~np.eye(len(cl), dtype=bool)
        gaps.append(cos[same & off].mean() - cos[~same].mean())
    assert np.mean(gaps) > 0.2


def toy():
    return TuckerModel(["a", "b", "c", "d"], np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
                       np.zeros((3, 2)), np.zeros((2, 2, 2)))


def test_selection_examples():
    sel = select_sources(toy(), "a", 1)
    assert sel.codes == ["b"] and sel.sources[0][1] == pytest.approx(1.0)
    full = select_sources(toy(), "a", 3)
    assert full.codes == ["b", "d", "c"] and "a" not in full.codes
    cos = [c for _, c in full.sources]
    assert cos == sorted(cos, reverse=True)
    with pytest.raises(ValueError):
        select_sources(toy(), "a", 4)


def test_selection_invariances(rng):
    nodes = [f"{i:03d}" for i in range(12)]
    m = TuckerModel(nodes, rng.normal(size=(12, 5)), np.zeros((3, 5)), np.zeros((5, 5, 5)))
    ref = select_sources(m, "004", 4)
    # brute-force: full sort on explicit cosines
    t = m.E[4]
    cos = {c: float(e @ t / np.linalg.norm(e) / np.linalg.norm(t)) for c, e in zip(nodes, m.E) if c != "004"}
    assert ref.codes == sorted(cos, key=lambda c: (-cos[c], c))[:4]
    perm = rng.permutation(12)
    shuffled = TuckerModel([nodes[i] for i in perm], m.E[perm], m.R, m.W)
    assert select_sources(shuffled, "004", 4).codes == ref.codes
    scaled = TuckerModel(nodes, 3.7 * m.E, m.R, m.W)
    assert select_sources(scaled, "004", 4).codes == ref.codes


def test_zero_vector():
    m = toy()
    m.E[2] = 0
    with pytest.raises(ZeroVector):
        select_sources(m, "a", 1)


@pytest.mark.parametrize("n,k", [(303, 31), (10, 1), (2, 1), (20, 2)])
def test_default_k(n, k):
    assert default_k(n) == k


def test_embedding_and_selection_files(tmp_path, rng):
    m = init_tucker(["001", "002", "003"], 4, seed=0)
    save_embeddings(tmp_path / "e.csv", m)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "condition,dim_0,dim_1,dim_2,dim_3"
    back = load_embeddings(tmp_path / "e.csv")
    assert back.nodes == m.nodes and back.E.tobytes() == m.E.tobytes()
    sel = select_sources(m, "001", 2)
    sel.save(tmp_path / "s.json")
    assert SelectionResult.load(tmp_path / "s.json") == sel
