"""scikit-learn style front end."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_edges, check_pairs, check_relations
from .inference import aggregate_query, predict as predict_pair, rank_candidates
from .io import RelationSpec, assemble
from .metrics import mpr, rank_cases
from .trainer import TrainConfig, TrainingData, fit


class VBN(BaseEstimator):
    """Bayesian entity representations with hierarchical priors and typed relations.

    ``fit`` takes co-occurrence rows ``(i, j)`` or ``(i, j, count)`` over
    arbitrary hashable ids, optional ``(child, parent)`` hierarchy edges and
    optional explicit relations.

    Fitted attributes: ``graph_``, ``state_``, ``partition_``, ``log_``,
    ``relations_`` (names in index order) and ``frequencies_``.
    """

    def __init__(self, dim=50, neg_ratio=1, epochs=40, alpha=1.0, beta=1.0,
                 subsample_rho=1e-3, seed=0, elbo_tol=5e-3, workers=1, patience=3):
        self.dim = dim
        self.neg_ratio = neg_ratio
        self.epochs = epochs
        self.alpha = alpha
        self.beta = beta
        self.subsample_rho = subsample_rho
        self.seed = seed
        self.elbo_tol = elbo_tol
        self.workers = workers
        self.patience = patience

    def _config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, X, y=None, hierarchy=None, relations=None):
        rows = check_pairs(X)
        if not rows:
            raise ValueError("no co-occurrence pairs")
        specs = [RelationSpec(n, d, r, p) for n, p, d, r in check_relations(relations)]
        corpus = assemble(rows, check_edges(hierarchy), specs)
        config = self._config()
        self.state_, self.partition_, self.log_ = fit(
            corpus.graph, TrainingData(corpus.cooc, corpus.relations), config)
        self.graph_ = corpus.graph
        self.relations_ = [r.name for r in corpus.relations]
        self.frequencies_ = corpus.cooc.frequencies()
        return self

    def _index(self, name) -> int:
        try:
            return self.graph_.leaf(name)
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    def _kind(self, kind):
        if kind == "cooc":
            return "cooc"
        if kind in self.relations_:
            return self.relations_.index(kind)
        raise KeyError(f"unknown relation {kind!r}")

    def predict_proba(self, X, kind="cooc") -> np.ndarray:
        """Predictive probability of a positive label for each ``(i, j)`` row."""
        check_is_fitted(self, "state_")
        k = self._kind(kind)
        rows = check_pairs(X, allow_counts=False)
        return np.array([predict_pair(self._index(i), self._index(j), k, self.state_) for i, j, _ in rows])

    def predict(self, X, kind="cooc") -> np.ndarray:
        """Labels in {+1, -1} at probability 0.5."""
        return np.where(self.predict_proba(X, kind) >= 0.5, 1, -1)

    def transform(self, ids, side="u") -> np.ndarray:
        """Posterior means of the given entities' ``u`` (or ``v``) factors."""
        check_is_fitted(self, "state_")
        if side not in ("u", "v"):
            raise ValueError("side must be 'u' or 'v'")
        return self.state_.mean[side][[self._index(i) for i in ids]].copy()

    def rank(self, query, candidates=None, kind="cooc", top=None) -> list[tuple]:
        """``[(id, probability), ...]`` for a bag of query ids, best first."""
        check_is_fitted(self, "state_")
        q = aggregate_query(self.state_.get("u", self._index(i)) for i in query)
        cand = range(self.graph_.n_leaves) if candidates is None else [self._index(c) for c in candidates]
        ranking = rank_candidates(q, cand, self._kind(kind), self.state_)
        names = self.graph_.leaf_names
        return [(names[c], p) for c, p in ranking[:top]]

    def score(self, X, y=None, kind="cooc") -> float:
        """Mean percentile-rank score of hiding ``j`` behind the single query ``i``."""
        check_is_fitted(self, "state_")
        rows = check_pairs(X, allow_counts=False)
        cases = [([self._index(i)], self._index(j)) for i, j, _ in rows]
        return mpr(rank_cases(self.state_, cases, self._kind(kind)))
