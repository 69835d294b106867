"""Per-epoch construction of the labeled co-occurrence and relation training sets."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


def rng_stream(seed: int, *key) -> np.random.Generator:
    """Named, independent generator derived from one 64-bit seed.

    ``key`` items may be ints or strings; strings are hashed with crc32 so the
    stream for e.g. ``("negatives", epoch)`` never depends on call order.
    """
    spawn_key = tuple(
        k if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode()) for k in key
    )
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn_key))


def _aggregate(left, right, count, n_entities):
    """Sum counts of duplicate pairs; result sorted by (left, right)."""
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    count = np.asarray(count, dtype=np.int64)
    if left.size == 0:
        return left, right, count
    keys = left * n_entities + right
    uniq, inv = np.unique(keys, return_inverse=True)
    summed = np.bincount(inv, weights=count).astype(np.int64)
    return uniq // n_entities, uniq % n_entities, summed


@dataclass
class CoOccurrenceData:
    """Positive co-occurrence multiset ``I_P`` as unique pairs with counts."""

    left: np.ndarray
    right: np.ndarray
    count: np.ndarray
    n_entities: int

    def __post_init__(self):
        self.left, self.right, self.count = _aggregate(
            self.left, self.right, self.count, self.n_entities
        )
        if np.any(self.count < 1):
            raise ValueError("co-occurrence counts must be >= 1")
        for arr in (self.left, self.right):
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_entities):
                raise ValueError("co-occurrence pair references an unknown entity")

    @property
    def n_pairs(self) -> int:
        return int(self.count.sum())

    def frequencies(self) -> np.ndarray:
        """Occurrences of each entity at either end of a pair."""
        n = self.n_entities
        return (
            np.bincount(self.left, weights=self.count, minlength=n)
            + np.bincount(self.right, weights=self.count, minlength=n)
        ).astype(np.int64)


@dataclass
class RelationData:
    """Positive pairs of one explicit relation type and its map rank."""

    name: str
    directed: bool
    rank: int
    left: np.ndarray
    right: np.ndarray
    n_entities: int

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.int64)
        right = np.asarray(self.right, dtype=np.int64)
        if not self.directed:
            left, right = np.concatenate([left, right]), np.concatenate([right, left])
        if self.rank < 1:
            raise ValueError(f"relation {self.name!r}: rank must be >= 1")
        for arr in (left, right):
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_entities):
                raise ValueError(f"relation {self.name!r} references an unknown entity")
        keys = np.unique(left * self.n_entities + right)
        self.left, self.right = keys // self.n_entities, keys % self.n_entities


@dataclass
class PairBlock:
    """Labeled pairs with integer multiplicities, sorted by (left, right)."""

    left: np.ndarray
    right: np.ndarray
    label: np.ndarray
    weight: np.ndarray
    _groups: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def empty(cls) -> PairBlock:
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0), np.zeros(0))

    def __len__(self):
        return self.left.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weight.sum())

    def group(self, by: str, n: int):
        """``(order, indptr)`` so that pairs incident to entity ``e`` on side
        ``by`` are ``order[indptr[e]:indptr[e + 1]]``, in ascending partner id."""
        key = (by, n)
        if key not in self._groups:
            if by == "left":
                order = np.lexsort((self.right, self.left))
                ids = self.left[order]
            else:
                order = np.lexsort((self.left, self.right))
                ids = self.right[order]
            indptr = np.searchsorted(ids, np.arange(n + 1), side="left")
            self._groups[key] = (order, indptr)
        return self._groups[key]

    def incident(self, entity: int, by: str, n: int) -> np.ndarray:
        order, indptr = self.group(by, n)
        return order[indptr[entity]:indptr[entity + 1]]


@dataclass
class EpochDataset:
    cooc: PairBlock
    rel: list  # one PairBlock per relation type

    def __eq__(self, other):
        if not isinstance(other, EpochDataset) or len(self.rel) != len(other.rel):
            return False
        blocks = [(self.cooc, other.cooc)] + list(zip(self.rel, other.rel))
        return all(
            all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("left", "right", "label", "weight"))
            for a, b in blocks
        )


def subsample_positives(data: CoOccurrenceData, rho: float, rng: np.random.Generator):
    """Thin each occurrence independently with probability
    ``min(1, sqrt(rho / p(i))) * min(1, sqrt(rho / p(j)))``.

    Returns ``(left, right, count)`` with zero-count pairs removed.
    """
    if rho <= 0:
        raise ValueError("rho must be > 0")
    freq = data.frequencies().astype(float)
    total = freq.sum()
    if total == 0:
        return data.left[:0], data.right[:0], data.count[:0]
    p = freq / total
    with np.errstate(divide="ignore"):
        keep_entity = np.minimum(1.0, np.sqrt(rho / p))
    keep = keep_entity[data.left] * keep_entity[data.right]
    kept = rng.binomial(data.count, np.minimum(keep, 1.0))
    mask = kept > 0
    return data.left[mask], data.right[mask], kept[mask]


def sample_negatives(
    left: np.ndarray,
    right: np.ndarray,
    count: np.ndarray,
    n: int,
    catalog: np.ndarray,
    rng: np.random.Generator,
    n_entities: int | None = None,
):
    """``n`` uniform negatives ``(i, z)`` per positive occurrence of ``(i, j)``.

    ``z`` is redrawn while ``(i, z)`` is one of the given positive pairs.
    Returns ``(left, right)`` of length ``n * sum(count)``, in draw order.
    """
    if n < 1:
        raise ValueError("negative ratio n must be >= 1")
    catalog = np.asarray(catalog, dtype=np.int64)
    if n_entities is None:
        n_entities = int(max(catalog.max(initial=-1), left.max(initial=-1), right.max(initial=-1)) + 1)
    pos_keys = np.unique(left * n_entities + right)
    in_catalog = np.isin(right, catalog)
    fan_out = np.bincount(left[in_catalog], minlength=n_entities)
    lefts = np.repeat(left, count * n)
    if lefts.size == 0:
        return lefts, lefts.copy()
    full = np.unique(lefts)[fan_out[np.unique(lefts)] >= catalog.size]
    if full.size:
        raise ValueError(
            f"entity {int(full[0])} is positive with every catalog entry; cannot sample negatives"
        )
    z = catalog[rng.integers(catalog.size, size=lefts.size)]
    bad = np.isin(lefts * n_entities + z, pos_keys)
    while bad.any():
        idx = np.flatnonzero(bad)
        z[idx] = catalog[rng.integers(catalog.size, size=idx.size)]
        bad[idx] = np.isin(lefts[idx] * n_entities + z[idx], pos_keys)
    return lefts, z


def _labeled_block(pos_left, pos_right, pos_count, neg_left, neg_right, n_entities) -> PairBlock:
    pl, pr, pc = _aggregate(pos_left, pos_right, pos_count, n_entities)
    nl, nr, nc = _aggregate(neg_left, neg_right, np.ones_like(neg_left), n_entities)
    left = np.concatenate([pl, nl])
    right = np.concatenate([pr, nr])
    label = np.concatenate([np.ones(pl.size), -np.ones(nl.size)])
    weight = np.concatenate([pc, nc]).astype(float)
    order = np.lexsort((right, left))
    return PairBlock(left[order], right[order], label[order], weight[order])


def build_epoch_dataset(
    cooc: CoOccurrenceData,
    relations: list,
    neg_ratio: int,
    subsample_rho: float,
    seed: int,
    epoch: int,
    purpose: str = "train",
) -> EpochDataset:
    """Sample one epoch: thinned co-occurrence positives plus fresh negatives for
    every stream; relation positives are always kept in full."""
    n = cooc.n_entities
    catalog = np.arange(n)
    rng = rng_stream(seed, purpose, epoch, "subsample")
    pl, pr, pc = subsample_positives(cooc, subsample_rho, rng)
    rng = rng_stream(seed, purpose, epoch, "cooc-negatives")
    nl, nr = sample_negatives(pl, pr, pc, neg_ratio, catalog, rng, n)
    cooc_block = _labeled_block(pl, pr, pc, nl, nr, n)

    rel_blocks = []
    for k, rel in enumerate(relations):
        ones = np.ones_like(rel.left)
        rng = rng_stream(seed, purpose, epoch, "relation-negatives", k)
        nl, nr = sample_negatives(rel.left, rel.right, ones, neg_ratio, catalog, rng, n)
        rel_blocks.append(_labeled_block(rel.left, rel.right, ones, nl, nr, n))
    return EpochDataset(cooc_block, rel_blocks)


def fixed_dataset(cooc: CoOccurrenceData, relations: list, neg_ratio: int, seed: int) -> EpochDataset:
    """A dataset with all positives kept, used for monitoring and frozen-data runs."""
    return build_epoch_dataset(cooc, relations, neg_ratio, np.inf, seed, 0, purpose="fixed")
