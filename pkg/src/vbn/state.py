"""The complete set of variational factors, stored as dense arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factors import GammaFactor, GaussianFactor

VECTOR_SYMBOLS = ("u", "v", "hu", "hv")
MAP_SYMBOLS = ("x", "y")
SCALAR_SYMBOLS = ("b", "r")
TAU_SYMBOLS = ("u", "v", "hu", "hv", "x", "y", "b", "r")


@dataclass
class ModelState:
    """Array-backed variational parameters.

    Means and precision diagonals per symbol:

    * ``u``, ``v``: ``(n_leaves, dim)``; ``hu``, ``hv``: ``(n_categories, dim)``
    * ``b``: ``(n_leaves,)``; ``r``: ``(n_relations, n_leaves)``
    * ``x``, ``y``: one ``(rank_k, dim)`` array per relation; row ``m`` is column
      ``m`` of the low-rank factor of ``W_k``

    Gamma shape/rate arrays in ``tau_shape``/``tau_rate`` mirror the leading
    shape of the matching Gaussian table (``x``/``y`` are per-relation lists).
    """

    dim: int
    ranks: tuple
    alpha: float
    beta: float
    mean: dict = field(default_factory=dict)
    prec: dict = field(default_factory=dict)
    tau_shape: dict = field(default_factory=dict)
    tau_rate: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, n_leaves, n_categories, dim, ranks=(), alpha=1.0, beta=1.0) -> ModelState:
        ranks = tuple(int(r) for r in ranks)
        s = cls(dim=dim, ranks=ranks, alpha=float(alpha), beta=float(beta))
        n_rel = len(ranks)
        shapes = {
            "u": (n_leaves, dim), "v": (n_leaves, dim),
            "hu": (n_categories, dim), "hv": (n_categories, dim),
            "b": (n_leaves,), "r": (n_rel, n_leaves),
        }
        for sym, shp in shapes.items():
            s.mean[sym] = np.zeros(shp)
            s.prec[sym] = np.ones(shp)
            s.tau_shape[sym] = np.ones(shp[:1] if sym in VECTOR_SYMBOLS else shp)
            s.tau_rate[sym] = np.ones(shp[:1] if sym in VECTOR_SYMBOLS else shp)
        for sym in MAP_SYMBOLS:
            s.mean[sym] = [np.zeros((r, dim)) for r in ranks]
            s.prec[sym] = [np.ones((r, dim)) for r in ranks]
            s.tau_shape[sym] = [np.ones(r) for r in ranks]
            s.tau_rate[sym] = [np.ones(r) for r in ranks]
        return s

    @property
    def n_leaves(self) -> int:
        return self.mean["u"].shape[0]

    @property
    def n_categories(self) -> int:
        return self.mean["hu"].shape[0]

    @property
    def n_relations(self) -> int:
        return len(self.ranks)

    # index conventions: vector/bias symbols take an int, ``r`` takes (k, j),
    # ``x``/``y`` take (k, m)
    def _slot(self, table, sym, idx):
        if sym in MAP_SYMBOLS:
            k, m = idx
            return table[sym][k], m
        return table[sym], idx

    def get(self, sym: str, idx) -> GaussianFactor:
        arr_m, i = self._slot(self.mean, sym, idx)
        arr_p, _ = self._slot(self.prec, sym, idx)
        return GaussianFactor(np.array(arr_m[i], dtype=float), np.array(arr_p[i], dtype=float))

    def set(self, sym: str, idx, f: GaussianFactor) -> None:
        arr_m, i = self._slot(self.mean, sym, idx)
        arr_p, _ = self._slot(self.prec, sym, idx)
        if sym in SCALAR_SYMBOLS:
            arr_m[i] = f.mean[0]
            arr_p[i] = f.precision[0]
        else:
            arr_m[i] = f.mean
            arr_p[i] = f.precision

    def get_tau(self, sym: str, idx) -> GammaFactor:
        sh, i = self._slot(self.tau_shape, sym, idx)
        rt, _ = self._slot(self.tau_rate, sym, idx)
        return GammaFactor(sh[i], rt[i])

    def set_tau(self, sym: str, idx, g: GammaFactor) -> None:
        sh, i = self._slot(self.tau_shape, sym, idx)
        rt, _ = self._slot(self.tau_rate, sym, idx)
        sh[i] = g.shape
        rt[i] = g.rate

    def tau_mean(self, sym: str, idx) -> float:
        sh, i = self._slot(self.tau_shape, sym, idx)
        rt, _ = self._slot(self.tau_rate, sym, idx)
        return float(sh[i] / rt[i])

    def map_mean(self, k: int) -> np.ndarray:
        """``M_k = M_X M_Y^T``, the mean of the relation map ``W_k``."""
        return self.mean["x"][k].T @ self.mean["y"][k]

    def copy(self) -> ModelState:
        def dup(d):
            return {k: ([a.copy() for a in v] if isinstance(v, list) else v.copy()) for k, v in d.items()}

        return ModelState(
            dim=self.dim, ranks=self.ranks, alpha=self.alpha, beta=self.beta,
            mean=dup(self.mean), prec=dup(self.prec),
            tau_shape=dup(self.tau_shape), tau_rate=dup(self.tau_rate),
        )

    def arrays(self):
        """Flat ``(name, array)`` listing of every parameter, in a fixed order."""
        for table_name, table in (("mean", self.mean), ("prec", self.prec),
                                  ("tau_shape", self.tau_shape), ("tau_rate", self.tau_rate)):
            for sym in sorted(table):
                val = table[sym]
                if isinstance(val, list):
                    for k, a in enumerate(val):
                        yield f"{table_name}.{sym}.{k}", a
                else:
                    yield f"{table_name}.{sym}", val

    def equals(self, other: ModelState) -> bool:
        """Exact parameter equality."""
        mine, theirs = list(self.arrays()), list(other.arrays())
        return (
            self.dim == other.dim and self.ranks == other.ranks
            and len(mine) == len(theirs)
            and all(n1 == n2 and a.shape == b.shape and np.array_equal(a, b)
                    for (n1, a), (n2, b) in zip(mine, theirs))
        )
