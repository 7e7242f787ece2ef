"""Heterogeneous condition graph: diagnosis co-occurrence, record-statistics and drug-usage relations."""
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import EmptyGraph, ParseError, SchemaError

RELATIONS = ("diag", "record", "drug")


@dataclass(frozen=True)
class Edge:
    head: str
    relation: str
    tail: str
    weight: float


@dataclass
class ConditionGraph:
    nodes: list
    edges: list = field(default_factory=list)

    def relation(self, name):
        return [e for e in self.edges if e.relation == name]

    def weight_map(self, name=None):
        return {(e.head, e.relation, e.tail): e.weight for e in self.edges if name in (None, e.relation)}

    def triples(self):
        """Integer (head, relation, tail) array indexed by node order and ``RELATIONS``."""
        node_idx = {v: i for i, v in enumerate(self.nodes)}
        rel_idx = {r: i for i, r in enumerate(RELATIONS)}
        return np.array(
            [(node_idx[e.head], rel_idx[e.relation], node_idx[e.tail]) for e in self.edges], dtype=np.int64
        ).reshape(-1, 3)

    def to_tsv(self, path):
        lines = ["head\trelation\ttail\tweight"]
        lines += [f"{e.head}\t{e.relation}\t{e.tail}\t{e.weight:.12g}" for e in self.edges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_tsv(cls, path, nodes=None):
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text or text[0].split("\t") != ["head", "relation", "tail", "weight"]:
            raise SchemaError(f"{path}: expected header head, relation, tail, weight")
        edges = []
        for lineno, line in enumerate(text[1:], start=2):
            parts = line.split("\t")
            if len(parts) != 4 or parts[1] not in RELATIONS:
                raise ParseError(path, lineno, f"bad edge line {line!r}")
            try:
                edges.append(Edge(parts[0], parts[1], parts[2], float(parts[3])))
            except ValueError:
                raise ParseError(path, lineno, f"weight {parts[3]!r} is not a number") from None
        if nodes is None:
            nodes = sorted({e.head for e in edges} | {e.tail for e in edges})
        return cls(list(nodes), edges)


def retained_count(fraction, n_items):
    """``ceil(fraction * n)``, at least 1 whenever anything is available."""
    if n_items == 0:
        return 0
    return max(1, min(n_items, math.ceil(fraction * n_items - 1e-12)))


def top_fraction(items, fraction):
    """Keep the highest-weighted ``items`` (tuples ending in a weight); ties by the leading keys."""
    ranked = sorted(items, key=lambda it: (-it[-1], *it[:-1]))
    return ranked[: retained_count(fraction, len(ranked))]


def _symmetric(pairs, relation):
    edges = []
    for a, b, w in sorted(pairs):
        edges.append(Edge(a, relation, b, w))
        edges.append(Edge(b, relation, a, w))
    return edges


def diag_cooccurrence(records, nodes=None):
    """Row-normalised co-occurrence edges; one record is one stay's full code set."""
    keep = None if nodes is None else set(nodes)
    counts = defaultdict(Counter)
    for _, codes in records:
        codes = sorted(c for c in set(codes) if keep is None or c in keep)
        for a, b in combinations(codes, 2):
            counts[a][b] += 1
            counts[b][a] += 1
    edges = []
    for head in sorted(counts):
        total = sum(counts[head].values())
        for tail in sorted(counts[head]):
            edges.append(Edge(head, "diag", tail, counts[head][tail] / total))
    return edges


def condition_profiles(X, conditions):
    """Per-condition ``[mean, std]`` of every processed cell (population std), length 2F."""
    X = np.asarray(X)
    conditions = np.asarray(conditions)
    profiles = {}
    for code in sorted(set(conditions.tolist())):
        cells = X[conditions == code].reshape(-1, X.shape[-1])
        profiles[code] = np.concatenate([cells.mean(axis=0), cells.std(axis=0)])
    return profiles


def record_similarity(profiles, prune_fraction=0.5):
    """``1 / (1 + ||s_i - s_j||)`` over unordered pairs, top fraction kept, both directions emitted."""
    codes = sorted(profiles)
    pairs = [(a, b, 1.0 / (1.0 + float(np.linalg.norm(profiles[a] - profiles[b])))) for a, b in combinations(codes, 2)]
    return _symmetric(top_fraction(pairs, prune_fraction), "record")


def drug_similarity(drug_sets, prune_fraction=0.5):
    """Jaccard of per-condition drug sets; zero-overlap pairs omitted before pruning."""
    codes = sorted(drug_sets)
    pairs = []
    for a, b in combinations(codes, 2):
        union = drug_sets[a] | drug_sets[b]
        if not union:
            continue
        w = len(drug_sets[a] & drug_sets[b]) / len(union)
        if w > 0:
            pairs.append((a, b, w))
    return _symmetric(top_fraction(pairs, prune_fraction), "drug")


def _retain(edges, relation, fraction):
    if fraction >= 1.0:
        return edges
    if relation == "diag":
        kept = top_fraction([(e.head, e.tail, e.weight) for e in edges], fraction)
        return [Edge(h, relation, t, w) for h, t, w in kept]
    pairs = [(e.head, e.tail, e.weight) for e in edges if e.head < e.tail]
    return _symmetric(top_fraction(pairs, fraction), relation)


def build_graph(train_set, train_stays, edge_retention=1.0, prune_fraction=0.5):
    """Union of the three relations, each trimmed to its top ``edge_retention`` share.

    ``train_set`` supplies the processed tensors for record profiles and
    ``train_stays`` the raw drug and diagnosis sets; both must be training-split only.
    """
    if not 0 < edge_retention <= 1:
        raise ValueError("edge_retention must lie in (0, 1]")
    nodes = sorted(set(np.asarray(train_set.conditions).tolist()))
    diag = diag_cooccurrence([(s.stay_id, s.diagnoses) for s in train_stays], nodes)
    record = record_similarity(condition_profiles(train_set.X, train_set.conditions), prune_fraction)
    drug_sets = defaultdict(set)
    for s in train_stays:
        drug_sets[s.condition] |= s.drugs
    drug = drug_similarity({c: frozenset(drug_sets.get(c, ())) for c in nodes}, prune_fraction)
    edges = []
    for name, group in (("diag", diag), ("record", record), ("drug", drug)):
        edges += _retain(group, name, edge_retention)
    if not edges:
        raise EmptyGraph("no edges survive pruning")
    return ConditionGraph(nodes, edges)
