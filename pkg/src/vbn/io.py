"""TSV readers, the corpus-to-pairs converter, and the model archive."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import EntityGraph, build_graph
from .sampling import CoOccurrenceData, RelationData
from .state import ModelState

ARCHIVE_FORMAT = "vbn-model"
ARCHIVE_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def _rows(path, n_fields: int | tuple):
    """Yield ``(line_no, fields)`` for every non-blank line of a UTF-8 TSV file."""
    path = Path(path)
    widths = (n_fields,) if isinstance(n_fields, int) else n_fields
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8") from exc
    for no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in widths:
            raise InputError(f"{path}:{no}: expected {' or '.join(map(str, widths))} tab-separated fields, got {len(parts)}")
        if any(p == "" for p in parts):
            raise InputError(f"{path}:{no}: empty field")
        yield no, parts


def read_cooccurrence(path) -> list[tuple[str, str, int]]:
    out = []
    for no, (i, j, c) in _rows(path, 3):
        try:
            count = int(c)
        except ValueError:
            raise InputError(f"{path}:{no}: count {c!r} is not an integer") from None
        if count < 1:
            raise InputError(f"{path}:{no}: count must be >= 1")
        out.append((i, j, count))
    return out


def read_hierarchy(path) -> list[tuple[str, str]]:
    return [(c, p) for _, (c, p) in _rows(path, 2)]


@dataclass
class RelationSpec:
    name: str
    directed: bool
    rank: int
    pairs: list = field(default_factory=list)


def read_relations(manifest) -> list[RelationSpec]:
    """Manifest lines ``name<TAB>directed|undirected<TAB>rank<TAB>path``; relative
    paths resolve against the manifest's directory."""
    manifest = Path(manifest)
    specs, seen = [], set()
    for no, (name, kind, rank, rel_path) in _rows(manifest, 4):
        if kind not in ("directed", "undirected"):
            raise InputError(f"{manifest}:{no}: expected 'directed' or 'undirected', got {kind!r}")
        try:
            r = int(rank)
        except ValueError:
            raise InputError(f"{manifest}:{no}: rank {rank!r} is not an integer") from None
        if r < 1:
            raise InputError(f"{manifest}:{no}: rank must be >= 1")
        if name in seen:
            raise InputError(f"{manifest}:{no}: duplicate relation {name!r}")
        seen.add(name)
        p = Path(rel_path)
        if not p.is_absolute():
            p = manifest.parent / p
        pairs = [(i, j) for _, (i, j) in _rows(p, 2)]
        specs.append(RelationSpec(name, kind == "directed", r, pairs))
    return specs


def read_inference_testset(path) -> list[tuple[list[str], str]]:
    """Lines ``q1,q2,...<TAB>target``."""
    out = []
    for no, (queries, target) in _rows(path, 2):
        qs = [q for q in queries.split(",") if q]
        if not qs:
            raise InputError(f"{path}:{no}: empty query")
        out.append((qs, target))
    if not out:
        raise InputError(f"{path}: no test cases")
    return out


def read_similarity_testset(path) -> list[tuple[str, str, float]]:
    out = []
    for no, (a, b, score) in _rows(path, 3):
        try:
            out.append((a, b, float(score)))
        except ValueError:
            raise InputError(f"{path}:{no}: score {score!r} is not a number") from None
    if not out:
        raise InputError(f"{path}: no test cases")
    return out


def pairs_from_text(lines, window: int) -> list[tuple[str, str, int]]:
    """Symmetric sliding-window pairs with aggregated counts, in first-seen order."""
    if window < 1:
        raise ValueError("window must be >= 1")
    counts: Counter = Counter()
    any_tokens = False
    for line in lines:
        toks = line.split()
        any_tokens = any_tokens or bool(toks)
        for a, tok in enumerate(toks):
            for b in range(max(0, a - window), min(len(toks), a + window + 1)):
                if b != a:
                    counts[(tok, toks[b])] += 1
    if not any_tokens:
        raise InputError("corpus is empty")
    return [(i, j, c) for (i, j), c in counts.items()]


@dataclass
class Corpus:
    """Everything needed to train: the graph plus index-space training data."""

    graph: EntityGraph
    cooc: CoOccurrenceData
    relations: list  # RelationData


def assemble(cooc_rows, hierarchy_edges=(), relation_specs=()) -> Corpus:
    """Map opaque ids to dense indices. Leaves are the co-occurrence entities in
    order of first appearance; relation pairs must reference known leaves."""
    leaf_names = list(dict.fromkeys(x for i, j, _ in cooc_rows for x in (i, j)))
    graph = build_graph(leaf_names, list(hierarchy_edges))
    n = graph.n_leaves

    def index(name, what):
        try:
            return graph.leaf(name)
        except KeyError:
            raise InputError(f"{what} references unknown entity {name!r}") from None

    if cooc_rows:
        li, ri, cs = zip(*[(graph.leaf(i), graph.leaf(j), c) for i, j, c in cooc_rows])
    else:
        li = ri = cs = ()
    cooc = CoOccurrenceData(np.array(li, dtype=np.int64), np.array(ri, dtype=np.int64),
                            np.array(cs, dtype=np.int64), n)
    rels = []
    for spec in relation_specs:
        pl = [index(i, f"relation {spec.name!r}") for i, _ in spec.pairs]
        pr = [index(j, f"relation {spec.name!r}") for _, j in spec.pairs]
        rels.append(RelationData(spec.name, spec.directed, spec.rank,
                                 np.array(pl, dtype=np.int64), np.array(pr, dtype=np.int64), n))
    return Corpus(graph, cooc, rels)


def load_corpus(cooc_path, hierarchy_path=None, relations_manifest=None) -> Corpus:
    rows = read_cooccurrence(cooc_path)
    edges = read_hierarchy(hierarchy_path) if hierarchy_path else []
    specs = read_relations(relations_manifest) if relations_manifest else []
    return assemble(rows, edges, specs)


# -- archive -----------------------------------------------------------------

def _encode(value):
    if isinstance(value, list):
        return [np.asarray(a).tolist() for a in value]
    return np.asarray(value).tolist()


def _decode(value, like):
    if isinstance(like, list):
        return [np.asarray(a, dtype=float).reshape(l.shape) for a, l in zip(value, like)]
    return np.asarray(value, dtype=float).reshape(like.shape)


@dataclass
class ModelArchive:
    graph: EntityGraph
    state: ModelState
    relations: list  # dicts with name/directed/rank
    config: dict
    frequencies: np.ndarray

    def to_dict(self) -> dict:
        s = self.state
        return {
            "format": ARCHIVE_FORMAT,
            "version": ARCHIVE_VERSION,
            "entities": list(self.graph.leaf_names),
            "categories": list(self.graph.category_names),
            "edges": [list(e) for e in self.graph.edges],
            "relations": self.relations,
            "config": self.config,
            "frequencies": np.asarray(self.frequencies).tolist(),
            "state": {
                "dim": s.dim, "ranks": list(s.ranks), "alpha": s.alpha, "beta": s.beta,
                **{table: {sym: _encode(v) for sym, v in getattr(s, table).items()}
                   for table in ("mean", "prec", "tau_shape", "tau_rate")},
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> ModelArchive:
        if d.get("format") != ARCHIVE_FORMAT:
            raise InputError("not a model archive")
        if d.get("version") != ARCHIVE_VERSION:
            raise InputError(f"unsupported archive version {d.get('version')!r} (expected {ARCHIVE_VERSION})")
        graph = build_graph(d["entities"], [tuple(e) for e in d["edges"]])
        if list(graph.category_names) != d["categories"]:
            raise InputError("archive category table is inconsistent with its edges")
        st = d["state"]
        state = ModelState.zeros(graph.n_leaves, graph.n_categories, st["dim"], st["ranks"],
                                 st["alpha"], st["beta"])
        for table in ("mean", "prec", "tau_shape", "tau_rate"):
            target = getattr(state, table)
            for sym, like in list(target.items()):
                target[sym] = _decode(st[table][sym], like)
        return cls(graph, state, d["relations"], d["config"], np.asarray(d["frequencies"], dtype=np.int64))

    @classmethod
    def load(cls, path) -> ModelArchive:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: malformed archive ({exc.msg})") from exc
        try:
            return cls.from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"{path}: malformed archive ({exc})") from exc

    def relation_index(self, name) -> int:
        for k, r in enumerate(self.relations):
            if r["name"] == name:
                return k
        if isinstance(name, str) and name.isdigit() and int(name) < len(self.relations):
            return int(name)
        raise KeyError(f"unknown relation {name!r}")
