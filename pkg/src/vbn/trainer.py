"""Epoch loop: sampling, partition-scheduled coordinate updates, convergence."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import updates
from .graph import EntityGraph, Partition, partition as make_partition
from .objective import elbo
from .sampling import CoOccurrenceData, EpochDataset, build_epoch_dataset, rng_stream
from .state import ModelState

logger = logging.getLogger(__name__)

# callback(symbol, index) fired after every single factor write
UpdateHook = Callable[[str, object], None]


@dataclass
class TrainConfig:
    dim: int = 50
    neg_ratio: int = 1
    epochs: int = 40
    alpha: float = 1.0
    beta: float = 1.0
    subsample_rho: float = 1e-3
    seed: int = 0
    elbo_tol: float = 5e-3
    workers: int = 1
    patience: int = 3

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.neg_ratio < 1:
            raise ValueError("neg_ratio must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class TrainingData:
    cooc: CoOccurrenceData
    relations: list = field(default_factory=list)

    @property
    def ranks(self) -> tuple:
        return tuple(r.rank for r in self.relations)


@dataclass
class EpochReport:
    epoch: int
    elbo: float
    seconds: float
    n_cooc: int
    n_rel: int
    monitor_elbo: float | None = None

    def line(self) -> str:
        mon = "" if self.monitor_elbo is None else f"\t{self.monitor_elbo:.10g}"
        return f"{self.epoch}\t{self.elbo:.10g}\t{self.seconds:.4f}\t{self.n_cooc}\t{self.n_rel}{mon}"


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    converged: bool = False

    def lines(self) -> list[str]:
        return [r.line() for r in self.epochs]

    def without_timing(self) -> list[tuple]:
        return [(r.epoch, r.elbo, r.n_cooc, r.n_rel, r.monitor_elbo) for r in self.epochs]


def initialize(graph: EntityGraph, ranks, config: TrainConfig) -> ModelState:
    """Standard-normal means, unit precisions, unit Gamma shape and rate."""
    state = ModelState.zeros(
        graph.n_leaves, graph.n_categories, config.dim, ranks, config.alpha, config.beta
    )
    rng = rng_stream(config.seed, "init")
    for sym in ("u", "v", "hu", "hv", "b", "r"):
        state.mean[sym] = rng.standard_normal(state.mean[sym].shape)
    for sym in ("x", "y"):
        state.mean[sym] = [rng.standard_normal(a.shape) for a in state.mean[sym]]
    return state


class _Runner:
    """Fork-join executor: computes a batch of independent updates against the
    current state, then writes them in ascending order."""

    def __init__(self, state: ModelState, workers: int, hook: UpdateHook | None):
        self.state = state
        self.hook = hook
        self.pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def step(self, jobs: list, gamma: bool = False):
        """``jobs`` are ``(symbol, index, thunk)``; all thunks read a common snapshot."""
        if not jobs:
            return
        thunks = [j[2] for j in jobs]
        if self.pool is None:
            results = [f() for f in thunks]
        else:
            results = list(self.pool.map(lambda f: f(), thunks))
        for (sym, idx, _), res in zip(jobs, results):
            if gamma:
                self.state.set_tau(sym, idx, res)
            else:
                self.state.set(sym, idx, res)
            if self.hook is not None:
                self.hook(sym, idx)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def sweep(
    state: ModelState,
    graph: EntityGraph,
    part: Partition,
    epoch: EpochDataset,
    workers: int = 1,
    hook: UpdateHook | None = None,
) -> None:
    """One pass over every factor, in place."""
    runner = _Runner(state, workers, hook)
    try:
        _sweep(runner, state, graph, part, epoch)
    finally:
        runner.close()


def _sweep(runner, state, graph, part, epoch):
    U = updates
    for side, hier in (("u", "hu"), ("v", "hv")):
        for ys in part.sets:
            jobs = []
            for node in ys:
                if graph.is_leaf(node):
                    jobs.append((side, node, lambda n=node, s=side: U.update_leaf(n, s, state, graph, epoch)))
                else:
                    jobs.append((hier, graph.category_slot(node),
                                 lambda n=node, s=side: U.update_parent(n, s, state, graph)))
            runner.step(jobs)

    max_rank = max(state.ranks, default=0)
    for side in ("x", "y"):
        for m in range(max_rank):
            jobs = [(side, (k, m), lambda k=k, s=side, m=m: U.update_relation_map(m, k, s, state, epoch))
                    for k, rank in enumerate(state.ranks) if m < rank]
            runner.step(jobs)

    n = state.n_leaves
    jobs = [("b", j, lambda j=j: U.update_bias(j, state, epoch)) for j in range(n)]
    jobs += [("r", (k, j), lambda j=j, k=k: U.update_relation_bias(j, k, state, epoch))
             for k in range(state.n_relations) for j in range(n)]
    runner.step(jobs)

    jobs = []
    for sym, count in (("u", n), ("v", n), ("hu", graph.n_categories), ("hv", graph.n_categories), ("b", n)):
        jobs += [(sym, i, lambda s=sym, i=i: U.update_gamma(s, i, state, graph)) for i in range(count)]
    for k, rank in enumerate(state.ranks):
        for sym in ("x", "y"):
            jobs += [(sym, (k, m), lambda s=sym, k=k, m=m: U.update_gamma(s, (k, m), state, graph))
                     for m in range(rank)]
        jobs += [("r", (k, j), lambda k=k, j=j: U.update_gamma("r", (k, j), state, graph)) for j in range(n)]
    runner.step(jobs, gamma=True)


def train_epoch(
    state: ModelState,
    graph: EntityGraph,
    part: Partition,
    data: TrainingData,
    config: TrainConfig,
    epoch_index: int,
    dataset: EpochDataset | None = None,
    hook: UpdateHook | None = None,
) -> EpochReport:
    """Sample the epoch's data (unless ``dataset`` is given) and run one sweep."""
    start = time.perf_counter()
    if graph.n_leaves == 0:
        return EpochReport(epoch_index, 0.0, 0.0, 0, 0)
    if dataset is None:
        dataset = build_epoch_dataset(
            data.cooc, data.relations, config.neg_ratio, config.subsample_rho, config.seed, epoch_index
        )
    sweep(state, graph, part, dataset, config.workers, hook)
    value = elbo(state, graph, dataset)
    return EpochReport(
        epoch=epoch_index,
        elbo=value,
        seconds=time.perf_counter() - start,
        n_cooc=int(dataset.cooc.total_weight),
        n_rel=int(sum(b.total_weight for b in dataset.rel)),
    )


def fit(graph: EntityGraph, data: TrainingData, config: TrainConfig, dataset: EpochDataset | None = None):
    """Run up to ``config.epochs`` epochs; returns ``(state, part, log)``.

    Convergence is judged on a monitoring sample drawn once from its own
    stream: training stops when the relative change of its free energy stays
    below ``elbo_tol`` for ``patience`` consecutive epochs. Passing ``dataset``
    freezes the training data for every epoch.
    """
    part = make_partition(graph)
    state = initialize(graph, data.ranks, config)
    log = TrainLog()
    if config.epochs == 0 or graph.n_leaves == 0:
        return state, part, log
    monitor = dataset if dataset is not None else build_epoch_dataset(
        data.cooc, data.relations, config.neg_ratio, config.subsample_rho, config.seed, 0, purpose="monitor"
    )
    prev = None
    streak = 0
    for e in range(config.epochs):
        report = train_epoch(state, graph, part, data, config, e, dataset=dataset)
        report.monitor_elbo = report.elbo if dataset is not None else elbo(state, graph, monitor)
        report.seconds = round(report.seconds, 6)
        log.epochs.append(report)
        logger.info("epoch %d elbo %.6g monitor %.6g", e, report.elbo, report.monitor_elbo)
        cur = report.monitor_elbo
        if prev is not None and abs(cur - prev) <= config.elbo_tol * abs(prev):
            streak += 1
            if streak >= config.patience:
                log.converged = True
                break
        else:
            streak = 0
        prev = cur
    return state, part, log


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
