"""Command-line interface: ``vbn train | predict | eval | pairs-from-text``.

Exit status is 0 on success, 1 on an input error and 2 on a numerical fault.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .graph import GraphError
from .inference import aggregate_query, cosine_scores, predict, rank_candidates
from .io import InputError, ModelArchive, load_corpus, pairs_from_text, read_inference_testset, read_similarity_testset
from .metrics import hit_rate_at, mpr, rank_cases, rare_entities, spearman
from .objective import NumericalFault
from .trainer import TrainConfig, TrainingData, fit

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

logger = logging.getLogger("vbn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vbn", description="Variational Bayesian entity representations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a model and write an archive")
    t.add_argument("--cooc", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--hierarchy", type=Path)
    t.add_argument("--relations", type=Path, help="relations manifest")
    t.add_argument("--dim", type=int, default=50)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--neg-ratio", type=int, default=1)
    t.add_argument("--alpha", type=float, default=1.0)
    t.add_argument("--beta", type=float, default=1.0)
    t.add_argument("--subsample-rho", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--elbo-tol", type=float, default=5e-3)
    t.add_argument("--log", type=Path, help="training log (default: OUT with .log suffix)")

    q = sub.add_parser("predict", help="rank candidates for a query")
    q.add_argument("--model", required=True, type=Path)
    q.add_argument("--query", required=True, help="comma-separated entity ids")
    q.add_argument("--kind", default="cooc", help="cooc or rel:NAME")
    q.add_argument("--top", type=int)
    q.add_argument("--candidates", type=Path, help="file with one candidate id per line")
    q.add_argument("--cosine", action="store_true", help="diagnostic: cosine of posterior means")

    e = sub.add_parser("eval", help="score a test set")
    e.add_argument("--model", required=True, type=Path)
    e.add_argument("--task", required=True, choices=("hr", "mpr", "spearman"))
    e.add_argument("--testset", required=True, type=Path)
    e.add_argument("--k", type=float, default=10.0, help="percent for hr")
    e.add_argument("--slice", choices=("full", "rare"), default="full")
    e.add_argument("--kind", default="cooc", help="cooc or rel:NAME")

    c = sub.add_parser("pairs-from-text", help="sliding-window co-occurrence counts")
    c.add_argument("--corpus", required=True, type=Path)
    c.add_argument("--window", required=True, type=int)
    c.add_argument("--out", type=Path, help="output file (default: stdout)")
    return p


def _config_echo(config: TrainConfig) -> dict:
    # worker count is an execution detail and does not belong in the archive
    d = dict(vars(config))
    d.pop("workers")
    return d


def cmd_train(args) -> int:
    corpus = load_corpus(args.cooc, args.hierarchy, args.relations)
    config = TrainConfig(
        dim=args.dim, neg_ratio=args.neg_ratio, epochs=args.epochs, alpha=args.alpha,
        beta=args.beta, subsample_rho=args.subsample_rho, seed=args.seed,
        elbo_tol=args.elbo_tol, workers=args.workers,
    )
    state, _, log = fit(corpus.graph, TrainingData(corpus.cooc, corpus.relations), config)
    archive = ModelArchive(
        corpus.graph, state,
        [{"name": r.name, "directed": r.directed, "rank": r.rank} for r in corpus.relations],
        _config_echo(config), corpus.cooc.frequencies(),
    )
    archive.save(args.out)
    log_path = args.log or args.out.with_suffix(args.out.suffix + ".log")
    log_path.write_text("".join(line + "\n" for line in log.lines()), encoding="utf-8")
    logger.info("wrote %s (%d epochs, converged=%s)", args.out, len(log.epochs), log.converged)
    return EXIT_OK


def _kind(archive: ModelArchive, kind: str):
    if kind == "cooc":
        return "cooc"
    if not kind.startswith("rel:"):
        raise InputError(f"--kind must be 'cooc' or 'rel:NAME', got {kind!r}")
    try:
        return archive.relation_index(kind[4:])
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None


def _ids(archive: ModelArchive, names) -> list[int]:
    g = archive.graph
    try:
        return [g.leaf(n) for n in names]
    except KeyError as exc:
        raise InputError(f"unknown entity {exc.args[0]!r}") from None


def cmd_predict(args) -> int:
    archive = ModelArchive.load(args.model)
    kind = _kind(archive, args.kind)
    names = archive.graph.leaf_names
    queries = _ids(archive, [q for q in args.query.split(",") if q])
    if not queries:
        raise InputError("empty --query")
    if args.candidates:
        lines = args.candidates.read_text(encoding="utf-8").split()
        cand = _ids(archive, lines)
    else:
        cand = list(range(len(names)))
    if not cand:
        raise InputError("empty candidate set")
    query = aggregate_query(archive.state.get("u", q) for q in queries)
    if args.cosine:
        cand = sorted(set(cand))
        scores = cosine_scores(query, cand, archive.state)
        order = np.lexsort((cand, -scores))
        ranking = [(cand[o], float(scores[o])) for o in order]
    else:
        ranking = rank_candidates(query, cand, kind, archive.state)
    if args.top is not None:
        ranking = ranking[: max(args.top, 0)]
    out = sys.stdout
    for idx, score in ranking:
        out.write(f"{names[idx]}\t{score!r}\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    archive = ModelArchive.load(args.model)
    kind = _kind(archive, args.kind)
    state = archive.state
    rare = set(rare_entities(archive.frequencies).tolist())
    rows = []
    if args.task == "spearman":
        tests = read_similarity_testset(args.testset)
        pairs = [(_ids(archive, [a])[0], _ids(archive, [b])[0], gold) for a, b, gold in tests]

        def corr(subset):
            if len(subset) < 2:
                return float("nan")
            return spearman([predict(i, j, kind, state) for i, j, _ in subset], [g for *_, g in subset])

        rows.append(("spearman", corr(pairs)))
        if args.slice == "rare":
            rows.append(("spearman.rare", corr([p for p in pairs if p[0] in rare or p[1] in rare])))
    else:
        tests = read_inference_testset(args.testset)
        cases = [(_ids(archive, qs), _ids(archive, [t])[0]) for qs, t in tests]
        name = f"hr@{args.k:g}%" if args.task == "hr" else "mpr"

        def metric(subset, catalog=None):
            if not subset:
                return float("nan")
            ranked = rank_cases(state, subset, kind, catalog)
            return hit_rate_at(ranked, args.k) if args.task == "hr" else mpr(ranked)

        rows.append((name, metric(cases)))
        if args.slice == "rare":
            rare_cases = [c for c in cases if c[1] in rare]
            rows.append((f"{name}.rare", metric(rare_cases, sorted(rare))))
    for key, value in rows:
        sys.stdout.write(f"{key}\t{value!r}\n")
    return EXIT_OK


def cmd_pairs_from_text(args) -> int:
    try:
        lines = args.corpus.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {args.corpus}: {exc.strerror}") from exc
    if args.window < 1:
        raise InputError("--window must be >= 1")
    text = "".join(f"{i}\t{j}\t{c}\n" for i, j, c in pairs_from_text(lines, args.window))
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "pairs-from-text": cmd_pairs_from_text,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalFault as exc:
        print(f"vbn: numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, GraphError) as exc:
        print(f"vbn: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        # invalid hyperparameters and similar configuration errors
        print(f"vbn: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
