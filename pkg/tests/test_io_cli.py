import json
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import expit

from vbn.cli import main
from vbn.graph import build_graph
from vbn.io import InputError, ModelArchive, assemble, load_corpus, pairs_from_text, read_relations
from vbn.state import ModelState


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def corpus(tmp_path):
    rows = []
    ents = ["apple", "pear", "plum", "car", "bus"]
    for a in ents[:3]:
        for b in ents[:3]:
            if a != b:
                rows.append(f"{a}\t{b}\t3")
    rows += ["car\tbus\t2", "bus\tcar\t2", "plum\tcar\t1"]
    write(tmp_path / "cooc.tsv", "\n".join(rows) + "\n")
    write(tmp_path / "hier.tsv", "apple\tfruit\npear\tfruit\nplum\tfruit\ncar\tvehicle\nbus\tvehicle\nfruit\tthing\n")
    write(tmp_path / "opp.tsv", "apple\tcar\npear\tbus\n")
    write(tmp_path / "rels.tsv", "opp\tundirected\t2\topp.tsv\n")
    return tmp_path


def run(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def train(corpus, capsys, out="model.json", *extra):
    args = ["train", "--cooc", corpus / "cooc.tsv", "--out", corpus / out, "--dim", 4,
            "--epochs", 3, "--subsample-rho", 1, *extra]
    code, _, err = run(args, capsys)
    assert code == 0, err
    return corpus / out


# -- readers --------------------------------------------------------------------

def test_pairs_from_text_examples():
    assert pairs_from_text(["a b c"], 1) == [("a", "b", 1), ("b", "a", 1), ("b", "c", 1), ("c", "b", 1)]
    full = pairs_from_text(["a b c"], 5)
    assert sorted((i, j) for i, j, _ in full) == sorted(
        (i, j) for i in "abc" for j in "abc" if i != j)
    doubled = pairs_from_text(["a b c", "a b c"], 1)
    assert [c for *_, c in doubled] == [2, 2, 2, 2]
    with pytest.raises(InputError):
        pairs_from_text(["", "   "], 2)


def test_malformed_rows_name_file_and_line(tmp_path):
    p = write(tmp_path / "c.tsv", "a\tb\t1\na\tb\n")
    with pytest.raises(InputError, match=r"c\.tsv:2"):
        load_corpus(p)
    write(p, "a\tb\tmany\n")
    with pytest.raises(InputError, match="not an integer"):
        load_corpus(p)
    write(p, "a\tb\t0\n")
    with pytest.raises(InputError):
        load_corpus(p)


def test_relation_manifest(corpus):
    [spec] = read_relations(corpus / "rels.tsv")
    assert (spec.name, spec.directed, spec.rank, spec.pairs) == ("opp", False, 2, [("apple", "car"), ("pear", "bus")])
    write(corpus / "bad.tsv", "opp\tsideways\t2\topp.tsv\n")
    with pytest.raises(InputError, match="directed"):
        read_relations(corpus / "bad.tsv")
    write(corpus / "dup.tsv", "opp\tdirected\t1\topp.tsv\nopp\tdirected\t1\topp.tsv\n")
    with pytest.raises(InputError, match="duplicate"):
        read_relations(corpus / "dup.tsv")


def test_relation_pairs_must_name_known_entities():
    with pytest.raises(InputError, match="ghost"):
        from vbn.io import RelationSpec
        assemble([("a", "b", 1)], [], [RelationSpec("r", True, 1, [("a", "ghost")])])


def test_corpus_indexing_follows_first_appearance(corpus):
    c = load_corpus(corpus / "cooc.tsv", corpus / "hier.tsv", corpus / "rels.tsv")
    assert c.graph.leaf_names == ("apple", "pear", "plum", "car", "bus")
    assert c.graph.category_names == ("fruit", "vehicle", "thing")
    assert c.cooc.n_entities == 5 and c.relations[0].rank == 2
    # undirected relations store both orientations
    assert len(c.relations[0].left) == 4


# -- archive ---------------------------------------------------------------------

def random_archive(seed=0):
    rng = np.random.default_rng(seed)
    g = build_graph(["a", "b", "c"], [("a", "h"), ("b", "h"), ("h", "top")])
    s = ModelState.zeros(3, 2, 3, (2,), alpha=1.5, beta=0.25)
    for table in (s.mean, s.prec, s.tau_shape, s.tau_rate):
        for sym, val in table.items():
            table[sym] = [rng.uniform(0.1, 3, a.shape) for a in val] if isinstance(val, list) else rng.uniform(0.1, 3, val.shape)
    s.mean["u"][0, 0] = 1 / 3  # needs every digit to survive
    return ModelArchive(g, s, [{"name": "r", "directed": True, "rank": 2}], {"dim": 3}, np.array([2, 1, 0]))


def test_archive_round_trip_is_exact(tmp_path):
    arc = random_archive()
    arc.save(tmp_path / "m.json")
    back = ModelArchive.load(tmp_path / "m.json")
    assert back.state.equals(arc.state)
    assert back.graph == arc.graph
    assert back.dumps() == arc.dumps()


def test_archive_version_and_format_are_checked(tmp_path):
    d = random_archive().to_dict()
    for key, val, msg in (("version", 99, "version"), ("format", "other", "not a model archive")):
        bad = dict(d, **{key: val})
        write(tmp_path / "bad.json", json.dumps(bad))
        with pytest.raises(InputError, match=msg):
            ModelArchive.load(tmp_path / "bad.json")
    write(tmp_path / "junk.json", "{not json")
    with pytest.raises(InputError, match="malformed"):
        ModelArchive.load(tmp_path / "junk.json")


# -- commands -------------------------------------------------------------------

def test_train_writes_loadable_archive_and_log(corpus, capsys):
    path = train(corpus, capsys)
    arc = ModelArchive.load(path)
    assert arc.state.dim == 4 and arc.graph.n_leaves == 5
    assert "workers" not in arc.config
    lines = (corpus / "model.json.log").read_text().splitlines()
    assert 1 <= len(lines) <= 3
    assert [int(l.split("\t")[0]) for l in lines] == list(range(len(lines)))


def test_train_is_byte_identical_across_runs_and_worker_counts(corpus, capsys):
    a = train(corpus, capsys, "a.json", "--hierarchy", corpus / "hier.tsv", "--relations", corpus / "rels.tsv")
    b = train(corpus, capsys, "b.json", "--hierarchy", corpus / "hier.tsv", "--relations", corpus / "rels.tsv")
    c = train(corpus, capsys, "c.json", "--hierarchy", corpus / "hier.tsv", "--relations", corpus / "rels.tsv",
              "--workers", 8)
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_train_rejects_cycle_with_its_members(corpus, capsys):
    write(corpus / "cyc.tsv", "apple\tfruit\nfruit\tthing\nthing\tfruit\n")
    code, _, err = run(["train", "--cooc", corpus / "cooc.tsv", "--out", corpus / "m.json",
                        "--hierarchy", corpus / "cyc.tsv"], capsys)
    assert code == 1
    assert "fruit" in err and "thing" in err


def test_input_errors_exit_with_one(corpus, capsys):
    assert run(["train", "--cooc", corpus / "missing.tsv", "--out", corpus / "m.json"], capsys)[0] == 1
    assert run(["train", "--cooc", corpus / "cooc.tsv", "--out", corpus / "m.json", "--dim", 0], capsys)[0] == 1
    with pytest.raises(SystemExit) as info:
        main(["train", "--cooc"])
    assert info.value.code == 1


def test_numerical_fault_exits_with_two(corpus, capsys, monkeypatch):
    from vbn import cli
    from vbn.objective import NumericalFault

    def boom(*a, **k):
        raise NumericalFault("prior.u", float("nan"))

    monkeypatch.setattr(cli, "fit", boom)
    code, _, err = run(["train", "--cooc", corpus / "cooc.tsv", "--out", corpus / "m.json"], capsys)
    assert code == 2 and "prior.u" in err


def test_predict_output(corpus, capsys):
    path = train(corpus, capsys, "m.json", "--relations", corpus / "rels.tsv")
    code, out, _ = run(["predict", "--model", path, "--query", "apple", "--top", 1], capsys)
    assert code == 0 and len(out.splitlines()) == 1
    code, out, _ = run(["predict", "--model", path, "--query", "apple,pear", "--kind", "rel:opp"], capsys)
    rows = [l.split("\t") for l in out.splitlines()]
    probs = [float(p) for _, p in rows]
    assert code == 0 and len(rows) == 5
    assert all(0 < p < 1 for p in probs) and probs == sorted(probs, reverse=True)
    assert run(["predict", "--model", path, "--query", "ghost"], capsys)[0] == 1
    assert run(["predict", "--model", path, "--query", "apple", "--kind", "rel:nope"], capsys)[0] == 1


def test_predict_on_deterministic_model_is_plain_logistic(tmp_path, capsys):
    g = build_graph(["a", "b", "c"], [])
    s = ModelState.zeros(3, 0, 2)
    s.mean["u"][0] = [1.0, -1.0]
    s.mean["v"] = np.array([[0.5, 0.5], [2.0, 0.0], [0.0, 1.5]])
    s.mean["b"] = np.array([0.1, -0.3, 0.2])
    for sym in ("u", "v", "b"):
        s.prec[sym][...] = np.inf
    ModelArchive(g, s, [], {}, np.zeros(3, dtype=int)).save(tmp_path / "m.json")
    code, out, _ = run(["predict", "--model", tmp_path / "m.json", "--query", "a"], capsys)
    got = {name: float(p) for name, p in (l.split("\t") for l in out.splitlines())}
    assert code == 0
    assert got == {"a": expit(0.1), "b": expit(2 - 0.3), "c": expit(-1.5 + 0.2)}


def test_eval_examples(tmp_path, capsys):
    # candidate j's score grows with j, so target c always ranks first
    g = build_graph(["a", "b", "c"], [])
    s = ModelState.zeros(3, 0, 1)
    s.mean["u"][:, 0] = 1.0
    s.mean["v"][:, 0] = [0.0, 1.0, 2.0]
    s.prec["u"][...] = s.prec["v"][...] = s.prec["b"][...] = np.inf
    ModelArchive(g, s, [], {}, np.array([5, 3, 1])).save(tmp_path / "m.json")
    write(tmp_path / "inf.tsv", "a\tc\nb\tc\n")
    base = ["eval", "--model", tmp_path / "m.json", "--testset", tmp_path / "inf.tsv"]
    code, out, _ = run(base + ["--task", "mpr"], capsys)
    assert code == 0 and out == f"mpr\t{1 - 1 / 2!r}\n"
    code, out, _ = run(base + ["--task", "hr", "--k", 100], capsys)
    assert out == "hr@100%\t1.0\n"
    code, out, _ = run(base + ["--task", "hr", "--k", 10, "--slice", "rare"], capsys)
    assert [l.split("\t")[0] for l in out.splitlines()] == ["hr@10%", "hr@10%.rare"]
    write(tmp_path / "sim.tsv", "a\tb\t1\na\tc\t3\nb\tc\t2\n")
    code, out, _ = run(["eval", "--model", tmp_path / "m.json", "--testset", tmp_path / "sim.tsv",
                        "--task", "spearman"], capsys)
    assert code == 0 and out.startswith("spearman\t") and len(out.splitlines()) == 1
    write(tmp_path / "bad.tsv", "a\n")
    assert run(base[:-1] + [tmp_path / "bad.tsv", "--task", "mpr"], capsys)[0] == 1


def test_pairs_from_text_command(tmp_path, capsys):
    write(tmp_path / "corpus.txt", "a b c\n")
    code, out, _ = run(["pairs-from-text", "--corpus", tmp_path / "corpus.txt", "--window", 1], capsys)
    assert code == 0 and out == "a\tb\t1\nb\ta\t1\nb\tc\t1\nc\tb\t1\n"
    write(tmp_path / "empty.txt", "\n")
    assert run(["pairs-from-text", "--corpus", tmp_path / "empty.txt", "--window", 1], capsys)[0] == 1


def test_console_entry_point(tmp_path):
    write(tmp_path / "corpus.txt", "x y\n")
    res = subprocess.run([sys.executable, "-m", "vbn.cli", "pairs-from-text", "--corpus",
                          str(tmp_path / "corpus.txt"), "--window", "2"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout == "x\ty\t1\ny\tx\t1\n"
