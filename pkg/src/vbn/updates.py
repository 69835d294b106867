"""Closed-form coordinate updates of every variational factor.

Each update returns the exact maximizer of the bounded free energy over its
own factor (diagonal Gaussian or Gamma), holding all other factors fixed. The
logistic-bound parameters are recomputed from the current moments whenever an
update needs them.

For Gaussian factors the objective is ``lin^T mu - 1/2 E[z^T A z] + H[q]``
with a dense ``A`` (the partner second moments are not diagonal); the optimal
diagonal factor has ``precision = diag(A)`` and ``mean = A^{-1} lin``.
"""

from __future__ import annotations

import numpy as np

from .factors import GammaFactor, GaussianFactor, clip_precision, jaakkola_lambda
from .graph import EntityGraph
from .sampling import EpochDataset, PairBlock
from .state import ModelState

_SIDES = {
    # self table, partner table, hierarchy table, grouping column, partner column,
    # map acting on self, map acting on partner
    "u": ("u", "v", "hu", "left", "right", "x", "y"),
    "v": ("v", "u", "hv", "right", "left", "y", "x"),
}
_MAP_SIDES = {"x": "u", "y": "v"}


def _moments(state: ModelState, sym: str, idx):
    mean = state.mean[sym][idx]
    var = 1.0 / state.prec[sym][idx]
    return mean, var


def map_gram(map_mean, map_var, z_mean, z_var):
    """``C[p, m, n] = E[(a_m . z_p)(a_n . z_p)]`` for map columns ``a_m`` and
    vectors ``z_p``, all independent.

    ``map_mean``/``map_var`` are ``(rank, dim)``; ``z_mean``/``z_var`` are ``(P, dim)``.
    """
    proj = z_mean @ map_mean.T
    gram = proj[:, :, None] * proj[:, None, :]
    gram += np.einsum("mt,pt,nt->pmn", map_mean, z_var, map_mean)
    diag = (z_mean**2 + z_var) @ map_var.T
    idx = np.arange(map_mean.shape[0])
    gram[:, idx, idx] += diag
    return gram


def cooc_stats(state: ModelState, block: PairBlock, idx):
    """Per-pair ``(E[x], E[x^2])`` for co-occurrence scores ``x = u_i.v_j + b_j``."""
    l, r = block.left[idx], block.right[idx]
    um, uv = _moments(state, "u", l)
    vm, vv = _moments(state, "v", r)
    bm, bv = _moments(state, "b", r)
    dot = np.einsum("pt,pt->p", um, vm)
    sq_dot = dot**2 + np.einsum("pt,pt->p", um**2, vv) + np.einsum("pt,pt->p", uv, vm**2 + vv)
    e_x = dot + bm
    e_x2 = sq_dot + 2 * bm * dot + bm**2 + bv
    return dot, e_x, e_x2


def rel_stats(state: ModelState, k: int, block: PairBlock, idx):
    """Per-pair ``(bilinear mean, E[x], E[x^2])`` for ``x = u_i^T W_k v_j + r_jk``."""
    l, r = block.left[idx], block.right[idx]
    um, uv = _moments(state, "u", l)
    vm, vv = _moments(state, "v", r)
    rm, rv = state.mean["r"][k][r], 1.0 / state.prec["r"][k][r]
    xm, xv = state.mean["x"][k], 1.0 / state.prec["x"][k]
    ym, yv = state.mean["y"][k], 1.0 / state.prec["y"][k]
    cu = map_gram(xm, xv, um, uv)
    cv = map_gram(ym, yv, vm, vv)
    bil = np.einsum("pm,pm->p", um @ xm.T, vm @ ym.T)
    sq = np.einsum("pmn,pmn->p", cu, cv)
    e_x = bil + rm
    e_x2 = sq + 2 * rm * bil + rm**2 + rv
    return bil, e_x, e_x2


def _xi(e_x2):
    if np.any(e_x2 < -1e-9 * (1.0 + np.abs(e_x2))):
        raise AssertionError("negative second moment of a score; moment computation is inconsistent")
    return np.sqrt(np.maximum(e_x2, 0.0))


def update_variational(i: int, j: int, kind, state: ModelState) -> float:
    """Optimal bound parameter ``sqrt(E[x^2])`` for the pair ``(i, j)``.

    ``kind`` is ``"cooc"`` or a relation index ``k``.
    """
    block = PairBlock(np.array([i]), np.array([j]), np.ones(1), np.ones(1))
    if kind == "cooc":
        _, _, e_x2 = cooc_stats(state, block, np.array([0]))
    else:
        _, _, e_x2 = rel_stats(state, int(kind), block, np.array([0]))
    return float(_xi(e_x2)[0])


def expected_WvvW(k: int, v: GaussianFactor, state: ModelState, side: str = "u") -> np.ndarray:
    """``E[W_k v v^T W_k^T]`` (``side="u"``) or ``E[W_k^T u u^T W_k]`` (``side="v"``)."""
    amap, bmap = ("x", "y") if side == "u" else ("y", "x")
    am, av = state.mean[amap][k], 1.0 / state.prec[amap][k]
    bm, bv = state.mean[bmap][k], 1.0 / state.prec[bmap][k]
    c = map_gram(bm, bv, v.mean[None, :], v.variance[None, :])[0]
    out = am.T @ c @ am
    out[np.diag_indices_from(out)] += np.diag(c) @ av
    return out


def diag_expected_WvvW(k: int, v: GaussianFactor, state: ModelState) -> np.ndarray:
    return np.diag(expected_WvvW(k, v, state)).copy()


def _parent_mean(state: ModelState, sym: str, graph: EntityGraph, node: int):
    ps = graph.parents[node]
    if not ps:
        return np.zeros(state.dim)
    rows = [graph.category_slot(p) for p in ps]
    return state.mean[sym][rows].mean(axis=0)


def leaf_system(i: int, side: str, state: ModelState, graph: EntityGraph, epoch: EpochDataset):
    """Dense ``(A, lin)`` of the quadratic objective of leaf factor ``i`` on ``side``."""
    me, partner, hier, by, other, amap, bmap = _SIDES[side]
    t = state.dim
    n = state.n_leaves
    tau = state.tau_mean(me, i)
    A = tau * np.eye(t)
    lin = tau * _parent_mean(state, hier, graph, i)

    idx = epoch.cooc.incident(i, by, n)
    if idx.size:
        blk = epoch.cooc
        _, _, e_x2 = cooc_stats(state, blk, idx)
        lam = jaakkola_lambda(_xi(e_x2))
        w = blk.weight[idx]
        wm, wv = _moments(state, partner, getattr(blk, other)[idx])
        bm = state.mean["b"][blk.right[idx]]
        c = 2 * lam * w
        A += (wm.T * c) @ wm
        A[np.diag_indices(t)] += c @ wv
        lin += (w * (blk.label[idx] / 2 - 2 * lam * bm)) @ wm

    for k, blk in enumerate(epoch.rel):
        idx = blk.incident(i, by, n)
        if not idx.size:
            continue
        _, _, e_x2 = rel_stats(state, k, blk, idx)
        lam = jaakkola_lambda(_xi(e_x2))
        w = blk.weight[idx]
        wm, wv = _moments(state, partner, getattr(blk, other)[idx])
        am, av = state.mean[amap][k], 1.0 / state.prec[amap][k]
        bmm, bmv = state.mean[bmap][k], 1.0 / state.prec[bmap][k]
        rm = state.mean["r"][k][blk.right[idx]]
        c = 2 * lam * w
        csum = np.einsum("p,pmn->mn", c, map_gram(bmm, bmv, wm, wv))
        A += am.T @ csum @ am
        A[np.diag_indices(t)] += np.diag(csum) @ av
        lin += (w * (blk.label[idx] / 2 - 2 * lam * rm)) @ ((wm @ bmm.T) @ am)
    return A, lin


def _solve(A, lin) -> GaussianFactor:
    mean = np.linalg.solve(A, lin)
    return GaussianFactor(mean, clip_precision(np.diag(A).copy()))


def update_leaf(i: int, side: str, state: ModelState, graph: EntityGraph, epoch: EpochDataset) -> GaussianFactor:
    return _solve(*leaf_system(i, side, state, graph, epoch))


def update_parent(node: int, side: str, state: ModelState, graph: EntityGraph) -> GaussianFactor:
    """Category factor ``h`` of ``node``: own prior plus the pull of each child.

    Leaf children contribute through their ``u``/``v`` factor and category
    children through their ``h`` factor.
    """
    me, _, hier, *_ = _SIDES[side]
    slot = graph.category_slot(node)
    tau_h = state.tau_mean(hier, slot)
    prec = tau_h
    lin = tau_h * _parent_mean(state, hier, graph, node)
    for child in graph.children[node]:
        ps = graph.parents[child]
        npar = len(ps)
        if graph.is_leaf(child):
            tau_c, mu_c = state.tau_mean(me, child), state.mean[me][child]
        else:
            cs = graph.category_slot(child)
            tau_c, mu_c = state.tau_mean(hier, cs), state.mean[hier][cs]
        others = [graph.category_slot(p) for p in ps if p != node]
        co = state.mean[hier][others].sum(axis=0) if others else 0.0
        prec += tau_c / npar**2
        lin = lin + (tau_c / npar) * (mu_c - co / npar)
    p = clip_precision(np.full(state.dim, prec))
    return GaussianFactor(lin / prec, p)


def map_system(m: int, k: int, side: str, state: ModelState, epoch: EpochDataset):
    """Dense ``(A, lin)`` for column ``m`` of map ``x`` (``side="x"``) or ``y``."""
    me_side = _MAP_SIDES[side]
    _, partner, _, by, other, amap, bmap = _SIDES[me_side]
    t = state.dim
    tau = state.tau_mean(side, (k, m))
    A = tau * np.eye(t)
    lin = np.zeros(t)
    blk = epoch.rel[k] if k < len(epoch.rel) else PairBlock.empty()
    if len(blk) == 0:
        return A, lin
    idx = np.arange(len(blk))
    _, _, e_x2 = rel_stats(state, k, blk, idx)
    lam = jaakkola_lambda(_xi(e_x2))
    w = blk.weight
    zm, zv = _moments(state, me_side, getattr(blk, by))
    wm, wv = _moments(state, partner, getattr(blk, other))
    am = state.mean[amap][k]
    bmm, bmv = state.mean[bmap][k], 1.0 / state.prec[bmap][k]
    rm = state.mean["r"][k][blk.right]
    cw = map_gram(bmm, bmv, wm, wv)
    coef = 2 * lam * w * cw[:, m, m]
    A += (zm.T * coef) @ zm
    A[np.diag_indices(t)] += coef @ zv
    lin += (w * (blk.label / 2 - 2 * lam * rm) * (wm @ bmm[m])) @ zm
    cross = cw[:, m, :].copy()
    cross[:, m] = 0.0
    q = cross @ am  # sum over n != m of C[m, n] mu_{a_n}
    ezzq = zm * np.einsum("pt,pt->p", zm, q)[:, None] + zv * q
    lin -= (2 * lam * w) @ ezzq
    return A, lin


def update_relation_map(m: int, k: int, side: str, state: ModelState, epoch: EpochDataset) -> GaussianFactor:
    return _solve(*map_system(m, k, side, state, epoch))


def update_bias(j: int, state: ModelState, epoch: EpochDataset) -> GaussianFactor:
    tau = state.tau_mean("b", j)
    blk = epoch.cooc
    idx = blk.incident(j, "right", state.n_leaves)
    if not idx.size:
        return GaussianFactor([0.0], clip_precision([tau]))
    dot, _, e_x2 = cooc_stats(state, blk, idx)
    lam = jaakkola_lambda(_xi(e_x2))
    w = blk.weight[idx]
    prec = tau + 2 * np.sum(lam * w)
    pre_mean = np.sum(w * (blk.label[idx] / 2 - 2 * lam * dot))
    return GaussianFactor([pre_mean / prec], clip_precision([prec]))


def update_relation_bias(j: int, k: int, state: ModelState, epoch: EpochDataset) -> GaussianFactor:
    tau = state.tau_mean("r", (k, j))
    blk = epoch.rel[k] if k < len(epoch.rel) else PairBlock.empty()
    idx = blk.incident(j, "right", state.n_leaves) if len(blk) else np.zeros(0, dtype=int)
    if not idx.size:
        return GaussianFactor([0.0], clip_precision([tau]))
    bil, _, e_x2 = rel_stats(state, k, blk, idx)
    lam = jaakkola_lambda(_xi(e_x2))
    w = blk.weight[idx]
    prec = tau + 2 * np.sum(lam * w)
    pre_mean = np.sum(w * (blk.label[idx] / 2 - 2 * lam * bil))
    return GaussianFactor([pre_mean / prec], clip_precision([prec]))


def expected_sq_deviation(sym: str, idx, state: ModelState, graph: EntityGraph) -> float:
    """``E[||z - prior mean||^2]`` for the Gaussian governed by ``tau_sym[idx]``."""
    if sym in ("x", "y"):
        k, m = idx
        mean, var = state.mean[sym][k][m], 1.0 / state.prec[sym][k][m]
        return float(mean @ mean + var.sum())
    if sym in ("b", "r"):
        mean, var = (state.mean["b"][idx], 1.0 / state.prec["b"][idx]) if sym == "b" else (
            state.mean["r"][idx[0]][idx[1]], 1.0 / state.prec["r"][idx[0]][idx[1]])
        return float(mean**2 + var)
    if sym in ("u", "v"):
        node, hier = idx, "hu" if sym == "u" else "hv"
    else:
        node, hier = graph.n_leaves + idx, sym
    mean, var = state.mean[sym][idx], 1.0 / state.prec[sym][idx]
    ps = [graph.category_slot(p) for p in graph.parents[node]]
    e_z = float(mean @ mean + var.sum())
    if not ps:
        return e_z
    s_mean = state.mean[hier][ps].mean(axis=0)
    s_var = (1.0 / state.prec[hier][ps]).sum(axis=0) / len(ps) ** 2
    return e_z - 2 * float(mean @ s_mean) + float(s_mean @ s_mean + s_var.sum())


def update_gamma(sym: str, idx, state: ModelState, graph: EntityGraph) -> GammaFactor:
    """Precision posterior: ``shape = alpha + dim/2``, ``rate = beta + E[dev^2]/2``."""
    dim = 1 if sym in ("b", "r") else state.dim
    dev = expected_sq_deviation(sym, idx, state, graph)
    return GammaFactor(state.alpha + dim / 2, state.beta + dev / 2)
