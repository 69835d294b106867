"""Approximate posterior-predictive scoring and ranking.

A score ``x`` (``u.v + b`` or ``u^T W v + r``) is summarized by its mean and
variance under the factorized posterior, treated as Gaussian, and pushed
through the probit-style approximation of the logistic-Gaussian integral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit

from .factors import GaussianFactor
from .state import ModelState
from .updates import map_gram


@dataclass(frozen=True)
class ScoreMoments:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("score variance must be >= 0")


def _check_dims(*factors):
    dims = {f.dim for f in factors}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {sorted(dims)}")


def _as_scalar_factor(b) -> GaussianFactor:
    if b is None:
        return GaussianFactor([0.0], [np.inf])
    return b


def score_moments_cooc(u: GaussianFactor, v: GaussianFactor, b: GaussianFactor | None = None) -> ScoreMoments:
    """Moments of ``u.v + b`` for independent ``u``, ``v``, ``b``."""
    _check_dims(u, v)
    b = _as_scalar_factor(b)
    mean = float(u.mean @ v.mean + b.mean[0])
    var = float(np.sum(u.mean**2 * v.variance + u.variance * v.mean**2 + u.variance * v.variance))
    return ScoreMoments(mean, max(var + float(b.variance[0]), 0.0))


def _relation_arrays(state: ModelState, k: int):
    if not 0 <= k < state.n_relations:
        raise KeyError(f"unknown relation index {k}")
    return (state.mean["x"][k], 1.0 / state.prec["x"][k],
            state.mean["y"][k], 1.0 / state.prec["y"][k])


def score_moments_rel(u: GaussianFactor, v: GaussianFactor, k: int, r: GaussianFactor | None,
                      state: ModelState) -> ScoreMoments:
    """Moments of ``u^T W_k v + r`` with ``W_k = X_k Y_k^T`` taken from ``state``."""
    _check_dims(u, v)
    r = _as_scalar_factor(r)
    xm, xv, ym, yv = _relation_arrays(state, k)
    cu = map_gram(xm, xv, u.mean[None], u.variance[None])[0]
    cv = map_gram(ym, yv, v.mean[None], v.variance[None])[0]
    bil = float((xm @ u.mean) @ (ym @ v.mean))
    var = float(np.sum(cu * cv)) - bil**2
    return ScoreMoments(bil + float(r.mean[0]), max(var, 0.0) + float(r.variance[0]))


def probit_logistic_integral(m: ScoreMoments | float, variance: float | None = None):
    """``sigmoid(mean / sqrt(1 + pi * variance / 8))``; accepts arrays."""
    if isinstance(m, ScoreMoments):
        mean, variance = m.mean, m.variance
    else:
        mean = m
    return expit(np.asarray(mean) / np.sqrt(1.0 + np.pi * np.asarray(variance) / 8.0))


def _kind_index(kind):
    if kind == "cooc":
        return None
    if isinstance(kind, str) and kind.startswith("rel:"):
        kind = kind[4:]
    return int(kind)


def predict(i: int, j: int, kind, state: ModelState) -> float:
    """Approximate ``p(label = 1)`` for the pair ``(i, j)``.

    ``kind`` is ``"cooc"``, a relation index, or ``"rel:K"``.
    """
    n = state.n_leaves
    for e in (i, j):
        if not 0 <= e < n:
            raise KeyError(f"unknown entity index {e}")
    k = _kind_index(kind)
    u, v = state.get("u", i), state.get("v", j)
    if k is None:
        m = score_moments_cooc(u, v, state.get("b", j))
    else:
        m = score_moments_rel(u, v, k, state.get("r", (k, j)) if k < state.n_relations else None, state)
    return float(probit_logistic_integral(m))


def aggregate_query(factors) -> GaussianFactor:
    """Average of independent Gaussian factors."""
    factors = list(factors)
    if not factors:
        raise ValueError("cannot aggregate an empty query")
    _check_dims(*factors)
    m = len(factors)
    mean = np.mean([f.mean for f in factors], axis=0)
    var = np.sum([f.variance for f in factors], axis=0) / m**2
    return GaussianFactor.from_variance(mean, var)


def candidate_moments(query: GaussianFactor, candidates, kind, state: ModelState):
    """Score means and variances of ``query`` against every candidate (vectorized)."""
    cand = np.asarray(candidates, dtype=np.int64)
    vm, vv = state.mean["v"][cand], 1.0 / state.prec["v"][cand]
    qm, qv = query.mean, query.variance
    k = _kind_index(kind)
    if k is None:
        bm, bv = state.mean["b"][cand], 1.0 / state.prec["b"][cand]
        mean = vm @ qm + bm
        var = (vv @ qm**2) + (vm**2 + vv) @ qv + bv
    else:
        xm, xv, ym, yv = _relation_arrays(state, k)
        rm, rv = state.mean["r"][k][cand], 1.0 / state.prec["r"][k][cand]
        cu = map_gram(xm, xv, qm[None], qv[None])[0]
        cv = map_gram(ym, yv, vm, vv)
        bil = (vm @ ym.T) @ (xm @ qm)
        mean = bil + rm
        var = np.maximum(np.einsum("mn,pmn->p", cu, cv) - bil**2, 0.0) + rv
    return mean, var


def rank_candidates(query: GaussianFactor, candidates, kind, state: ModelState) -> list[tuple[int, float]]:
    """Candidates sorted by predictive probability, descending; ties by ascending id."""
    cand = np.asarray(sorted(set(int(c) for c in candidates)), dtype=np.int64)
    if cand.size == 0:
        raise ValueError("empty candidate set")
    if cand[0] < 0 or cand[-1] >= state.n_leaves:
        raise KeyError("candidate id out of range")
    mean, var = candidate_moments(query, cand, kind, state)
    prob = probit_logistic_integral(mean, var)
    order = np.lexsort((cand, -prob))
    return [(int(cand[o]), float(prob[o])) for o in order]


def cosine_scores(query: GaussianFactor, candidates, state: ModelState) -> np.ndarray:
    """Cosine similarity of posterior means; a diagnostic, not used for ranking."""
    vm = state.mean["v"][np.asarray(candidates, dtype=np.int64)]
    denom = np.linalg.norm(vm, axis=1) * np.linalg.norm(query.mean)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, vm @ query.mean / denom, 0.0)


def validate_normal_approx(u: GaussianFactor, v: GaussianFactor, b: GaussianFactor | None,
                           samples: int, rng: np.random.Generator, chunk: int = 20000) -> float:
    """Kolmogorov-Smirnov distance between sampled ``u.v + b`` and its Gaussian
    approximation."""
    if samples < 10_000:
        raise ValueError("samples must be >= 10000")
    b = _as_scalar_factor(b)
    m = score_moments_cooc(u, v, b)
    if m.variance == 0:
        raise ValueError("score has zero variance; the Gaussian comparison is undefined")
    su, sv, sb = np.sqrt(u.variance), np.sqrt(v.variance), float(np.sqrt(b.variance[0]))
    xs = []
    for start in range(0, samples, chunk):
        size = min(chunk, samples - start)
        uu = u.mean + su * rng.standard_normal((size, u.dim))
        vv = v.mean + sv * rng.standard_normal((size, v.dim))
        bb = b.mean[0] + sb * rng.standard_normal(size)
        xs.append(np.einsum("pt,pt->p", uu, vv) + bb)
    x = np.concatenate(xs)
    return float(stats.kstest(x, "norm", args=(m.mean, np.sqrt(m.variance))).statistic)
