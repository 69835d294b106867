"""Synthetic problems and small factories shared by the test modules."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from vbn.factors import GaussianFactor
from vbn.graph import build_graph
from vbn.sampling import CoOccurrenceData, RelationData, build_epoch_dataset
from vbn.state import ModelState
from vbn.trainer import TrainConfig, TrainingData, initialize


def det(*mean):
    """Deterministic factor."""
    return GaussianFactor(np.array(mean, dtype=float), np.full(len(mean), np.inf))


def gauss(mean, var):
    return GaussianFactor.from_variance(np.array(mean, dtype=float), np.array(var, dtype=float))


def random_factor(rng, dim, scale=1.0):
    return GaussianFactor(rng.normal(0, scale, dim), rng.uniform(0.5, 4.0, dim))


def small_problem(seed=1, dim=6, rank=2):
    """20 entities under a 2-level hierarchy (4 categories, 2 roots), 200 random
    co-occurrences and one undirected relation; frozen dataset."""
    rng = np.random.default_rng(seed)
    n = 20
    edges = [(i, f"c{i % 4}") for i in range(n)] + [(f"c{j}", f"g{j % 2}") for j in range(4)]
    graph = build_graph(list(range(n)), edges)
    left, right = rng.integers(n, size=200), rng.integers(n, size=200)
    cooc = CoOccurrenceData(left, right, np.ones(200, dtype=int), n)
    rel = RelationData("rel", False, rank, np.arange(0, 10), np.arange(10, 20), n)
    data = TrainingData(cooc, [rel])
    config = TrainConfig(dim=dim, seed=seed)
    dataset = build_epoch_dataset(cooc, [rel], 1, np.inf, seed, 0, purpose="fixed")
    state = initialize(graph, data.ranks, config)
    return graph, data, config, dataset, state


def empty_state(dim, n_leaves=1, n_categories=0, ranks=()):
    return ModelState.zeros(n_leaves, n_categories, dim, ranks)


def two_block_problem(seed, per=20, test_frac=0.15):
    """Two clusters of ``per`` entities with dense in-cluster co-occurrence.

    Entity ``per - 1`` is cold: exactly one observation with a random member
    of its cluster. About ``test_frac`` of warm in-cluster pairs are held out.
    Returns ``(n, edges, cooc, test_pairs, cold, known)`` where ``known`` maps
    an entity to every partner observed in train or test.
    """
    rng = np.random.default_rng(seed)
    n = 2 * per
    cold = per - 1
    train, test = [], []
    for c in range(2):
        warm = [m for m in range(c * per, (c + 1) * per) if m != cold]
        for a in warm:
            for b in warm:
                if a < b:
                    cnt = int(rng.integers(1, 4))
                    (test if rng.random() < test_frac else train).append((a, b, cnt))
    train.append((cold, int(rng.integers(0, per - 1)), 1))
    edges = [(i, f"c{i // per}") for i in range(n)]
    left, right, count = [], [], []
    for a, b, c in train:
        left += [a, b]
        right += [b, a]
        count += [c, c]
    cooc = CoOccurrenceData(np.array(left), np.array(right), np.array(count), n)
    known = defaultdict(set)
    for a, b in zip(cooc.left, cooc.right):
        known[int(a)].add(int(b))
    for a, b, _ in test:
        known[a].add(b)
        known[b].add(a)
    return n, edges, cooc, [(a, b) for a, b, _ in test], cold, known


def antonym_problem(seed, n=50, n_train=40, n_test=15, cross_rate=0.2):
    """Two topical clusters of 25 entities, each split into two polarity groups.

    Same-polarity pairs co-occur with count 3; opposite-polarity pairs of a
    cluster co-occur only with probability ``cross_rate``. The planted relation
    links opposite-polarity pairs of the same cluster.
    """
    rng = np.random.default_rng(seed)
    per = n // 2
    pol = np.array([1 if i % per < per // 2 else -1 for i in range(n)])
    left, right, count, opposite = [], [], [], []
    for a in range(n):
        for b in range(a + 1, n):
            if a // per != b // per:
                continue
            if pol[a] != pol[b]:
                opposite.append((a, b))
                if rng.random() > cross_rate:
                    continue
            c = 3 if pol[a] == pol[b] else 1
            left += [a, b]
            right += [b, a]
            count += [c, c]
    cooc = CoOccurrenceData(np.array(left), np.array(right), np.array(count), n)
    pick = rng.permutation(len(opposite))[: n_train + n_test]
    train = [opposite[p] for p in pick[:n_train]]
    test = [opposite[p] for p in pick[n_train:]]
    known = defaultdict(set)
    for a, b in train + test:
        known[a].add(b)
        known[b].add(a)
    return cooc, train, test, known


def random_dag(rng, max_nodes=200, max_parents=3):
    """Random hierarchy over distinct entity names; parents always come later
    in a hidden order, so the result is acyclic. Some entities are both leaf
    and category."""
    n = int(rng.integers(2, max_nodes + 1))
    names = [f"e{i}" for i in range(n)]
    n_leaf = int(rng.integers(1, n))
    leaves = names[:n_leaf]
    edges = []
    for i in range(n - 1):
        k = int(rng.integers(0, max_parents + 1))
        upper = names[max(i + 1, n_leaf):] if i < n_leaf else names[i + 1:]
        if not upper:
            continue
        for p in rng.choice(upper, size=min(k, len(upper)), replace=False):
            edges.append((names[i], str(p)))
    # a few leaf entities double as categories of later leaves
    for a in range(0, n_leaf - 1, 7):
        edges.append((leaves[n_leaf - 1], leaves[a]))
    # drop edges whose child is neither a leaf nor (still) a category
    leaf_set = set(leaves)
    while True:
        parents = {p for _, p in edges}
        kept = [(c, p) for c, p in edges if c in leaf_set or c in parents]
        if len(kept) == len(edges):
            return leaves, edges
        edges = kept
