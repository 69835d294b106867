import numpy as np
import pytest
from scipy import stats
from scipy.special import log_expit

from vbn.factors import jaakkola_bound
from vbn.graph import build_graph
from vbn.objective import NumericalFault, bound_params, elbo, elbo_terms
from vbn.sampling import EpochDataset, PairBlock
from vbn.state import ModelState


def randomized_state(graph, dim, ranks, seed):
    rng = np.random.default_rng(seed)
    s = ModelState.zeros(graph.n_leaves, graph.n_categories, dim, ranks, alpha=1.5, beta=0.7)
    for table in (s.mean,):
        for sym in ("u", "v", "hu", "hv", "b", "r"):
            table[sym] = rng.normal(size=table[sym].shape)
        for sym in ("x", "y"):
            table[sym] = [rng.normal(size=a.shape) for a in table[sym]]
    for sym in ("u", "v", "hu", "hv", "b", "r"):
        s.prec[sym] = rng.uniform(0.8, 5, s.prec[sym].shape)
        s.tau_shape[sym] = rng.uniform(1, 4, s.tau_shape[sym].shape)
        s.tau_rate[sym] = rng.uniform(0.5, 3, s.tau_rate[sym].shape)
    for sym in ("x", "y"):
        s.prec[sym] = [rng.uniform(0.8, 5, a.shape) for a in s.prec[sym]]
        s.tau_shape[sym] = [rng.uniform(1, 4, a.shape) for a in s.tau_shape[sym]]
        s.tau_rate[sym] = [rng.uniform(0.5, 3, a.shape) for a in s.tau_rate[sym]]
    return s


def tiny_problem():
    g = build_graph(["a", "b", "c"], [("a", "h"), ("b", "h"), ("b", "k"), ("h", "k")])
    cooc = PairBlock(np.array([0, 0, 1, 2]), np.array([1, 2, 2, 0]),
                     np.array([1.0, -1, 1, -1]), np.array([2.0, 1, 1, 1]))
    rel = PairBlock(np.array([0, 2]), np.array([2, 1]), np.array([1.0, -1]), np.array([1.0, 1]))
    return g, EpochDataset(cooc, [rel])


def monte_carlo_elbo(s, g, ds, bound, n, rng):
    """Sample every latent from q and average the bounded log joint minus log q."""
    dim = s.dim
    total = np.zeros(n)

    def draw(mean, prec):
        z = mean + rng.standard_normal((n,) + np.shape(mean)) / np.sqrt(prec)
        total[:] -= stats.norm.logpdf(z, mean, 1 / np.sqrt(prec)).reshape(n, -1).sum(axis=1)
        return z

    def draw_tau(shape, rate):
        t = rng.gamma(shape, 1 / rate, size=(n,) + np.shape(shape))
        total[:] -= stats.gamma.logpdf(t, shape, scale=1 / rate).reshape(n, -1).sum(axis=1)
        total[:] += stats.gamma.logpdf(t, s.alpha, scale=1 / s.beta).reshape(n, -1).sum(axis=1)
        return t

    def gauss_prior(z, centre, tau, d):
        dev = np.sum((z - centre) ** 2, axis=-1) if d > 1 else (z - centre) ** 2
        total[:] += (0.5 * d * (np.log(tau) - np.log(2 * np.pi)) - 0.5 * tau * dev).reshape(n, -1).sum(axis=1)

    z = {sym: draw(s.mean[sym], s.prec[sym]) for sym in ("u", "v", "hu", "hv", "b", "r")}
    maps = {sym: [draw(m, p) for m, p in zip(s.mean[sym], s.prec[sym])] for sym in ("x", "y")}
    P = g.parent_average().toarray()
    nl = g.n_leaves
    for sym, hier in (("u", "hu"), ("v", "hv"), ("hu", "hu"), ("hv", "hv")):
        rows = slice(0, nl) if sym in ("u", "v") else slice(nl, g.n_nodes)
        centre = np.einsum("nc,sct->snt", P[rows], z[hier])
        gauss_prior(z[sym], centre, draw_tau(s.tau_shape[sym], s.tau_rate[sym]), dim)
    for sym in ("b", "r"):
        gauss_prior(z[sym], 0.0, draw_tau(s.tau_shape[sym], s.tau_rate[sym]), 1)
    for sym in ("x", "y"):
        for k, a in enumerate(maps[sym]):
            gauss_prior(a, 0.0, draw_tau(s.tau_shape[sym][k], s.tau_rate[sym][k]), dim)

    blk = ds.cooc
    x = np.einsum("spt,spt->sp", z["u"][:, blk.left], z["v"][:, blk.right]) + z["b"][:, blk.right]
    total += (blk.weight * jaakkola_bound(blk.label * x, bound["cooc"])).sum(axis=1)
    for k, blk in enumerate(ds.rel):
        W = np.einsum("smt,smq->stq", maps["x"][k], maps["y"][k])
        x = np.einsum("spt,stq,spq->sp", z["u"][:, blk.left], W, z["v"][:, blk.right]) + z["r"][:, k, blk.right]
        total += (blk.weight * jaakkola_bound(blk.label * x, bound["rel"][k])).sum(axis=1)
    return total.mean(), total.std() / np.sqrt(n)


@pytest.mark.parametrize("seed", [0, 1])
def test_free_energy_matches_monte_carlo(seed):
    g, ds = tiny_problem()
    s = randomized_state(g, 2, (2,), seed)
    bound = bound_params(s, ds)
    rng = np.random.default_rng(100 + seed)
    est, se = monte_carlo_elbo(s, g, ds, bound, 400_000, rng)
    got = elbo(s, g, ds)
    assert abs(est - got) < 4 * se, (est, got, se)
    # a loose bound parameter changes only the data terms, by a matching amount
    off = {"cooc": bound["cooc"] + 0.5, "rel": [b * 0.5 for b in bound["rel"]]}
    est2, se2 = monte_carlo_elbo(s, g, ds, off, 400_000, rng)
    assert abs(est2 - elbo(s, g, ds, off)) < 4 * se2


def test_tight_bound_dominates_any_fixed_bound():
    g, ds = tiny_problem()
    s = randomized_state(g, 2, (2,), 3)
    tight = elbo(s, g, ds)
    bp = bound_params(s, ds)
    assert elbo(s, g, ds, bp) == pytest.approx(tight, rel=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(20):
        other = {"cooc": np.abs(bp["cooc"] + rng.normal(size=bp["cooc"].shape)),
                 "rel": [np.abs(b + rng.normal(size=b.shape)) for b in bp["rel"]]}
        assert elbo(s, g, ds, other) <= tight + 1e-12


def test_no_data_gives_negative_kl():
    g, _ = tiny_problem()
    empty = EpochDataset(PairBlock.empty(), [PairBlock.empty()])
    for seed in range(5):
        s = randomized_state(g, 3, (2,), seed)
        terms = elbo_terms(s, g, empty)
        assert terms["data.cooc"] == 0.0 and terms["data.rel"] == 0.0
        assert sum(terms.values()) <= 0.0


def test_gamma_terms_vanish_when_q_equals_prior():
    g = build_graph(range(3), [])
    s = ModelState.zeros(3, 0, 2, (1,), alpha=1.0, beta=1.0)
    empty = EpochDataset(PairBlock.empty(), [PairBlock.empty()])
    terms = elbo_terms(s, g, empty)
    for sym in ("u", "v", "b", "r", "x", "y"):
        assert terms[f"tau.{sym}"] == pytest.approx(0.0, abs=1e-12)


def test_deterministic_score_gives_log_sigmoid():
    g = build_graph(range(2), [])
    s = ModelState.zeros(2, 0, 2)
    s.mean["u"][0] = [1.5, -0.5]
    s.mean["v"][1] = [0.4, 2.0]
    s.mean["b"][1] = 0.3
    for sym in ("u", "v", "b"):
        s.prec[sym][...] = 1e300
    for label in (1.0, -1.0):
        ds = EpochDataset(PairBlock(np.array([0]), np.array([1]), np.array([label]), np.array([3.0])), [])
        x = 1.5 * 0.4 - 0.5 * 2.0 + 0.3
        assert elbo_terms(s, g, ds)["data.cooc"] == pytest.approx(3 * log_expit(label * x), rel=1e-9)


def test_non_finite_term_raises():
    g, ds = tiny_problem()
    s = randomized_state(g, 2, (2,), 0)
    s.tau_rate["u"][0] = 0.0
    with pytest.raises(NumericalFault) as info:
        elbo(s, g, ds)
    assert info.value.term.startswith(("tau.u", "prior.u"))
