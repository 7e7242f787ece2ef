"""TuckER embedding of the condition graph and cosine top-k source selection."""
import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .condkg import RELATIONS
from .errors import EmptyGraph, UnknownCondition, ZeroVector
from .nncore.layers import logistic
from .nncore.losses import LOG_FLOOR
from .nncore.optim import AdamState, adam_step


@dataclass
class TuckerModel:
    nodes: list
    E: np.ndarray  # (|V|, d)
    R: np.ndarray  # (|relations|, d)
    W: np.ndarray  # (d, d, d)

    @property
    def params(self):
        return {"E": self.E, "R": self.R, "W": self.W}

    def copy(self):
        return TuckerModel(list(self.nodes), self.E.copy(), self.R.copy(), self.W.copy())

    def embedding(self, code):
        try:
            return self.E[self.nodes.index(code)]
        except ValueError:
            raise UnknownCondition(code) from None


def init_tucker(nodes, d=32, n_relations=len(RELATIONS), seed=0):
    rng = np.random.default_rng([seed, 201])
    return TuckerModel(
        list(nodes),
        rng.uniform(-0.1, 0.1, size=(len(nodes), d)),
        rng.uniform(-0.1, 0.1, size=(n_relations, d)),
        rng.uniform(-0.1, 0.1, size=(d, d, d)),
    )


def tucker_score(model, head_idx, rel_idx, tail_idx):
    """Core tensor contracted with head, relation and tail embeddings (a raw logit)."""
    return float(
        np.einsum("abc,a,b,c->", model.W, model.E[head_idx], model.R[rel_idx], model.E[tail_idx])
    )


def tucker_scores(model, heads, rels, tails):
    scores, _ = _scores_forward(model, heads, rels, tails)
    return scores


def _relation_cores(model):
    """Core contracted with each relation embedding along its second mode, shape (|R|, d, d)."""
    return np.einsum("abc,rb->rac", model.W, model.R)


def _scores_forward(model, heads, rels, tails):
    cores = _relation_cores(model)
    Eh, Et = model.E[heads], model.E[tails]
    left = np.empty_like(Eh)  # Eh @ core_r for each triple
    for r in np.unique(rels):
        sel = rels == r
        left[sel] = Eh[sel] @ cores[r]
    return (left * Et).sum(axis=1), (heads, rels, tails, Eh, Et, cores, left)


def _scores_backward(model, cache, dscore):
    heads, rels, tails, Eh, Et, cores, left = cache
    g = dscore[:, None]
    dEt = g * left
    dEh = np.empty_like(Eh)
    dcores = np.zeros_like(cores)
    for r in np.unique(rels):
        sel = rels == r
        dEh[sel] = (g[sel] * Et[sel]) @ cores[r].T
        dcores[r] = (g[sel] * Eh[sel]).T @ Et[sel]
    dW = np.einsum("rac,rb->abc", dcores, model.R)
    dR = np.einsum("abc,rac->rb", model.W, dcores)
    n_nodes, d = model.E.shape
    dE = np.zeros_like(model.E)
    for j in range(d):
        dE[:, j] = np.bincount(heads, dEh[:, j], n_nodes) + np.bincount(tails, dEt[:, j], n_nodes)
    return {"E": dE, "R": dR, "W": dW}


def tucker_loss(model, heads, rels, tails, labels):
    """Mean logistic cross-entropy of the triple scores and its gradient."""
    scores, cache = _scores_forward(model, heads, rels, tails)
    log_p = np.maximum(-np.logaddexp(0.0, -scores), LOG_FLOOR)
    log_q = np.maximum(-np.logaddexp(0.0, scores), LOG_FLOOR)
    n = scores.size
    loss = float(-np.mean(labels * log_p + (1 - labels) * log_q))
    dscore = (logistic(scores) - labels) / n
    return loss, _scores_backward(model, cache, dscore)


class _TailCorruptor:
    """Uniform tail corruption among non-edges of the same (head, relation), head excluded."""

    def __init__(self, triples, n_nodes):
        keys = {}
        key_of = np.empty(len(triples), dtype=np.int64)
        allowed = []
        for i, (h, r, t) in enumerate(triples):
            k = keys.get((h, r))
            if k is None:
                k = keys[(h, r)] = len(allowed)
                row = np.ones(n_nodes, dtype=bool)
                row[h] = False
                allowed.append(row)
            allowed[k][t] = False
            key_of[i] = k
        sizes = np.array([row.sum() for row in allowed], dtype=np.int64)
        width = max(1, int(sizes.max(initial=0)))
        pools = np.zeros((len(allowed), width), dtype=np.int64)
        for k, row in enumerate(allowed):
            pools[k, : sizes[k]] = np.flatnonzero(row)
        usable = sizes[key_of] > 0
        self.triples = triples[usable]
        self.key_of = key_of[usable]
        self.sizes = sizes
        self.pools = pools

    def sample(self, per_positive, rng):
        n = len(self.triples)
        slot = np.floor(rng.random((n, per_positive)) * self.sizes[self.key_of][:, None]).astype(np.int64)
        tails = self.pools[self.key_of[:, None], slot]
        out = np.repeat(self.triples, per_positive, axis=0)
        out[:, 2] = tails.reshape(-1)
        return out


def train_tucker(graph, d=32, epochs=200, lr=0.005, negatives_per_positive=5, seed=0, batch_size=128):
    """Pointwise logistic training on graph edges; returns the epoch with the lowest training loss."""
    if not graph.edges:
        raise EmptyGraph("cannot embed an empty graph")
    model = init_tucker(graph.nodes, d, seed=seed)
    if epochs == 0:
        return model
    rng = np.random.default_rng([seed, 202])
    positives = graph.triples()
    state = AdamState()
    best, best_loss = model.copy(), math.inf
    corrupt = _TailCorruptor(positives, len(graph.nodes))
    for _ in range(epochs):
        negs = corrupt.sample(negatives_per_positive, rng)
        batch = np.concatenate([positives, negs])
        labels = np.concatenate([np.ones(len(positives)), np.zeros(len(negs))])
        order = rng.permutation(len(batch))
        step = batch_size * (1 + negatives_per_positive)
        total = 0.0
        for start in range(0, len(order), step):
            idx = order[start : start + step]
            loss, grads = tucker_loss(model, batch[idx, 0], batch[idx, 1], batch[idx, 2], labels[idx])
            adam_step(state, model.params, grads, lr)
            total += loss * len(idx)
        epoch_loss = total / len(order)
        if epoch_loss < best_loss:
            best, best_loss = model.copy(), epoch_loss
    return best


@dataclass
class SelectionResult:
    target: str
    sources: list  # [(code, cosine)] in descending cosine

    @property
    def k(self):
        return len(self.sources)

    @property
    def codes(self):
        return [c for c, _ in self.sources]

    def to_json(self):
        return {
            "target": self.target,
            "k": self.k,
            "sources": [{"code": c, "cosine": float(s)} for c, s in self.sources],
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["target"], [(s["code"], float(s["cosine"])) for s in d["sources"]])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def cosine_to(model, target):
    """Cosine similarity of ``target``'s embedding with every other condition."""
    if target not in model.nodes:
        raise UnknownCondition(target)
    norms = np.linalg.norm(model.E, axis=1)
    if np.any(norms == 0):
        bad = [model.nodes[i] for i in np.flatnonzero(norms == 0)]
        raise ZeroVector(f"zero-norm embedding for {bad}")
    t = model.nodes.index(target)
    cos = (model.E @ model.E[t]) / (norms * norms[t])
    return {c: float(cos[i]) for i, c in enumerate(model.nodes) if i != t}


def rank_sources(model, target):
    return sorted(cosine_to(model, target).items(), key=lambda kv: (-kv[1], kv[0]))


def select_sources(model, target, k):
    """Top-``k`` conditions by cosine similarity to ``target`` (ties by code)."""
    if not 1 <= k <= len(model.nodes) - 1:
        raise ValueError(f"k must lie in [1, {len(model.nodes) - 1}], got {k}")
    return SelectionResult(target, rank_sources(model, target)[:k])


def default_k(n_conditions, fraction=0.10):
    if n_conditions < 2:
        raise ValueError("need at least two conditions")
    k = math.ceil(fraction * n_conditions - 1e-9)
    return int(min(max(k, 1), n_conditions - 1))


def save_embeddings(path, model):
    d = model.E.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", *[f"dim_{j}" for j in range(d)]])
        for code, row in zip(model.nodes, model.E):
            w.writerow([code, *[repr(float(v)) for v in row]])


def load_embeddings(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    nodes = [r[0] for r in rows[1:]]
    E = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    d = E.shape[1]
    return TuckerModel(nodes, E, np.zeros((len(RELATIONS), d)), np.zeros((d, d, d)))
