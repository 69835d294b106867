"""Bounded variational free energy (ELBO) under the factorized posterior."""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, gammaln, log_expit

from .graph import EntityGraph
from .sampling import EpochDataset
from .state import ModelState
from .factors import jaakkola_lambda
from .updates import _xi, cooc_stats, rel_stats

LOG_2PI = np.log(2 * np.pi)


class NumericalFault(FloatingPointError):
    def __init__(self, term: str, value):
        self.term = term
        super().__init__(f"non-finite free-energy term {term!r}: {value}")


def _gauss_prior(dim, e_log_tau, e_tau, e_dev):
    return np.sum(0.5 * dim * (e_log_tau - LOG_2PI) - 0.5 * e_tau * e_dev)


def _gauss_entropy(prec):
    return 0.5 * np.sum(1.0 + LOG_2PI - np.log(prec))


def _gamma_terms(shape, rate, alpha, beta):
    """``E[log p(tau)] + H[q(tau)]`` summed, plus the moments for the Gaussian terms."""
    e_tau = shape / rate
    e_log = digamma(shape) - np.log(rate)
    prior = np.sum(alpha * np.log(beta) - gammaln(alpha) + (alpha - 1) * e_log - beta * e_tau)
    entropy = np.sum(shape - np.log(rate) + gammaln(shape) + (1 - shape) * digamma(shape))
    return prior + entropy, e_tau, e_log


def _parent_blocks(graph: EntityGraph):
    cached = graph.__dict__.get("_parent_blocks")
    if cached is None:
        P = graph.parent_average()
        n = graph.n_leaves
        cached = {}
        for name, rows in (("leaf", slice(0, n)), ("category", slice(n, graph.n_nodes))):
            sub = P[rows].tocsr()
            cached[name] = (sub, sub.multiply(sub).tocsr())
        object.__setattr__(graph, "_parent_blocks", cached)
    return cached


def _hier_dev(state: ModelState, sym: str, hier: str, graph: EntityGraph, rows: str):
    """``E[||z_n - s_n||^2]`` for every leaf (``rows="leaf"``) or category node."""
    mean, var = state.mean[sym], 1.0 / state.prec[sym]
    e_z = np.sum(mean**2 + var, axis=1)
    if graph.n_categories == 0:
        return e_z
    P, P2 = _parent_blocks(graph)[rows]
    hm, hv = state.mean[hier], 1.0 / state.prec[hier]
    s_mean = P @ hm
    s_var = P2 @ hv
    return e_z - 2 * np.sum(mean * s_mean, axis=1) + np.sum(s_mean**2, axis=1) + np.sum(s_var, axis=1)


def bound_params(state: ModelState, epoch: EpochDataset) -> dict:
    """Optimal logistic-bound parameters at the current moments, one per pair:
    ``{"cooc": xi, "rel": [zeta_k, ...]}`` aligned with the dataset rows."""
    out = {"cooc": np.zeros(0), "rel": []}
    if len(epoch.cooc):
        out["cooc"] = _xi(cooc_stats(state, epoch.cooc, np.arange(len(epoch.cooc)))[2])
    for k, blk in enumerate(epoch.rel):
        out["rel"].append(_xi(rel_stats(state, k, blk, np.arange(len(blk)))[2]) if len(blk) else np.zeros(0))
    return out


def _data_term(blk, e_x, e_x2, xi):
    if xi is None:
        # tight bound: xi^2 = E[x^2] cancels the quadratic term
        xi = _xi(e_x2)
        return float(np.sum(blk.weight * (blk.label * e_x / 2 - xi / 2 + log_expit(xi))))
    lam = jaakkola_lambda(xi)
    return float(np.sum(blk.weight * (
        (blk.label * e_x - xi) / 2 - lam * (e_x2 - xi**2) + log_expit(xi))))


def elbo_terms(state: ModelState, graph: EntityGraph, epoch: EpochDataset, bound: dict | None = None) -> dict:
    """Named contributions to the bounded free energy.

    With ``bound=None`` every logistic bound is tight at the current moments;
    otherwise the given per-pair parameters (see :func:`bound_params`) are used.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        terms = _terms(state, graph, epoch, bound)
    for name, val in terms.items():
        if not np.isfinite(val):
            raise NumericalFault(name, val)
    return terms


def _terms(state, graph, epoch, bound):
    a, b, t = state.alpha, state.beta, state.dim
    terms = {}

    blk = epoch.cooc
    if len(blk):
        _, e_x, e_x2 = cooc_stats(state, blk, np.arange(len(blk)))
        terms["data.cooc"] = _data_term(blk, e_x, e_x2, None if bound is None else bound["cooc"])
    else:
        terms["data.cooc"] = 0.0
    rel_total = 0.0
    for k, blk in enumerate(epoch.rel):
        if not len(blk):
            continue
        _, e_x, e_x2 = rel_stats(state, k, blk, np.arange(len(blk)))
        rel_total += _data_term(blk, e_x, e_x2, None if bound is None else bound["rel"][k])
    terms["data.rel"] = rel_total

    for sym, hier, rows in (("u", "hu", "leaf"), ("v", "hv", "leaf"), ("hu", "hu", "category"), ("hv", "hv", "category")):
        gterm, e_tau, e_log = _gamma_terms(state.tau_shape[sym], state.tau_rate[sym], a, b)
        dev = _hier_dev(state, sym, hier, graph, rows) if state.mean[sym].size else np.zeros(0)
        terms[f"prior.{sym}"] = float(_gauss_prior(t, e_log, e_tau, dev))
        terms[f"entropy.{sym}"] = float(_gauss_entropy(state.prec[sym]))
        terms[f"tau.{sym}"] = float(gterm)

    for sym in ("x", "y"):
        pr = ent = gt = 0.0
        for k in range(state.n_relations):
            g, e_tau, e_log = _gamma_terms(state.tau_shape[sym][k], state.tau_rate[sym][k], a, b)
            mean, prec = state.mean[sym][k], state.prec[sym][k]
            dev = np.sum(mean**2 + 1.0 / prec, axis=1)
            pr += _gauss_prior(t, e_log, e_tau, dev)
            ent += _gauss_entropy(prec)
            gt += g
        terms[f"prior.{sym}"] = float(pr)
        terms[f"entropy.{sym}"] = float(ent)
        terms[f"tau.{sym}"] = float(gt)

    for sym in ("b", "r"):
        g, e_tau, e_log = _gamma_terms(state.tau_shape[sym], state.tau_rate[sym], a, b)
        mean, prec = state.mean[sym], state.prec[sym]
        terms[f"prior.{sym}"] = float(_gauss_prior(1, e_log, e_tau, mean**2 + 1.0 / prec))
        terms[f"entropy.{sym}"] = float(_gauss_entropy(prec))
        terms[f"tau.{sym}"] = float(g)
    return terms


def elbo(state: ModelState, graph: EntityGraph, epoch: EpochDataset, bound: dict | None = None) -> float:
    return float(sum(elbo_terms(state, graph, epoch, bound).values()))
