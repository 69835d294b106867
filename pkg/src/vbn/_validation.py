"""Input checks for the estimator front end."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np


def check_pairs(X, allow_counts: bool = True) -> list[tuple]:
    """Normalize ``X`` into ``(i, j, count)`` rows.

    Accepts an iterable of ``(i, j)`` or ``(i, j, count)`` rows, or an array
    with two or three columns. Ids are any hashables; counts default to 1.
    """
    if isinstance(X, np.ndarray):
        if X.ndim != 2 or X.shape[1] not in (2, 3):
            raise ValueError(f"expected an array of shape (n, 2) or (n, 3), got {X.shape}")
        X = X.tolist()
    rows = []
    for n, row in enumerate(X):
        row = tuple(row)
        if len(row) == 2:
            i, j = row
            c = 1
        elif len(row) == 3 and allow_counts:
            i, j, c = row
        else:
            raise ValueError(f"row {n}: expected (i, j{', count' if allow_counts else ''}), got {row!r}")
        if isinstance(c, float) and not c.is_integer():
            raise ValueError(f"row {n}: count {c!r} is not an integer")
        c = int(c)
        if c < 1:
            raise ValueError(f"row {n}: count must be >= 1")
        rows.append((_plain(i), _plain(j), c))
    return rows


def _plain(x):
    # numpy scalars become Python scalars so ids hash and serialize predictably
    return x.item() if isinstance(x, np.generic) else x


def check_edges(edges) -> list[tuple]:
    if edges is None:
        return []
    out = []
    for n, e in enumerate(edges):
        e = tuple(e)
        if len(e) != 2:
            raise ValueError(f"hierarchy edge {n}: expected (child, parent), got {e!r}")
        out.append((_plain(e[0]), _plain(e[1])))
    return out


def check_relations(relations) -> list[tuple]:
    """``{name: {"pairs": [...], "directed": bool, "rank": int}}`` (or a list of
    ``(name, pairs, directed, rank)``) into a list of tuples of that form."""
    if relations is None:
        return []
    if isinstance(relations, Mapping):
        items = []
        for name, spec in relations.items():
            if not isinstance(spec, Mapping) or "pairs" not in spec:
                raise ValueError(f"relation {name!r}: expected a mapping with a 'pairs' entry")
            items.append((name, spec["pairs"], bool(spec.get("directed", False)), int(spec.get("rank", 1))))
    else:
        items = [tuple(r) for r in relations]
    out = []
    for name, pairs, directed, rank in items:
        if rank < 1:
            raise ValueError(f"relation {name!r}: rank must be >= 1")
        rows = [(i, j) for i, j, _ in check_pairs(pairs, allow_counts=False)]
        out.append((name, rows, directed, rank))
    return out
