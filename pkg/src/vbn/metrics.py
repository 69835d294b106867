"""Ranking and correlation metrics: HR@k%, MPR, Spearman, rare-entity slice."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .inference import aggregate_query, rank_candidates


@dataclass(frozen=True)
class RankedTestCase:
    rank: int  # 1-based position of the hidden target
    catalog_size: int

    def __post_init__(self):
        if self.catalog_size < 1:
            raise ValueError("catalog_size must be >= 1")
        if not 1 <= self.rank <= self.catalog_size:
            raise ValueError(f"rank {self.rank} outside 1..{self.catalog_size}")


def _nonempty(cases):
    cases = list(cases)
    if not cases:
        raise ValueError("no test cases")
    return cases


def hit_rate_at(cases, k_percent: float) -> float:
    """Fraction of cases whose target ranks within the top ``ceil(k% * catalog)``."""
    if not 0 < k_percent <= 100:
        raise ValueError("k_percent must be in (0, 100]")
    cases = _nonempty(cases)
    # round away float noise before the ceiling so that e.g. 10% of 100 is exactly 10
    hits = [c.rank <= math.ceil(round(k_percent * c.catalog_size / 100, 9)) for c in cases]
    return sum(hits) / len(cases)


def mpr(cases) -> float:
    """Mean of ``1 - rank / catalog_size``."""
    cases = _nonempty(cases)
    return sum(1 - c.rank / c.catalog_size for c in cases) / len(cases)


def spearman(model_scores, ground_truth) -> float:
    """Pearson correlation of average-tie ranks."""
    a = np.asarray(model_scores, dtype=float)
    b = np.asarray(ground_truth, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("score lists must be 1-d and of equal length")
    if a.size < 2:
        raise ValueError("need at least two scored pairs")
    ra, rb = rankdata(a), rankdata(b)
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        raise ValueError("correlation is undefined for constant input")
    ra -= ra.mean()
    rb -= rb.mean()
    return float(np.clip(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)), -1.0, 1.0))


def rank_of(target: int, ranking) -> int:
    """1-based position of ``target`` in a ranked ``[(id, score), ...]`` list."""
    for pos, (cand, _) in enumerate(ranking, start=1):
        if cand == target:
            return pos
    raise KeyError(f"target {target} is not among the candidates")


def rare_entities(frequencies, fraction: float = 0.2) -> np.ndarray:
    """Ids of the ``fraction`` least frequent entities (ties broken by lower id)."""
    freq = np.asarray(frequencies)
    n = max(1, int(math.ceil(fraction * freq.size))) if freq.size else 0
    order = np.lexsort((np.arange(freq.size), freq))
    return np.sort(order[:n])


def rank_cases(state, cases, kind="cooc", catalog=None, exclude=None) -> list[RankedTestCase]:
    """Rank each hidden target among ``catalog`` minus the case's query ids.

    ``cases`` holds ``(query_ids, target)`` in index space; the query is the
    average of its members' ``u`` factors. ``exclude`` optionally maps a query
    id to further ids to drop (typically its training positives). The target
    always stays a candidate.
    """
    catalog = np.arange(state.n_leaves) if catalog is None else np.asarray(catalog, dtype=np.int64)
    out = []
    for queries, target in cases:
        query = aggregate_query(state.get("u", q) for q in queries)
        drop = set(queries)
        if exclude is not None:
            for q in queries:
                drop.update(exclude.get(q, ()))
        cand = np.union1d(np.setdiff1d(catalog, sorted(drop)), [target])
        ranking = rank_candidates(query, cand, kind, state)
        out.append(RankedTestCase(rank_of(target, ranking), len(ranking)))
    return out
