"""Synthetic observer: generates comparisons and ratings from known truth.

The generator is the exact sampling dual of the scaling model, so recovery
experiments have a well-defined target: comparison outcomes are binomial in
the preference probability of the Gaussian observer, and ratings are
Gaussian with mean (q_i - b) / a and standard deviation c * sigma in rating
units.

Random streams are derived per pair or per condition from the master seed
with a counter-based scheme, so generation is order-independent and
replaying a configuration is byte-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError
from .metricmap import correlation_metrics
from .model import (
    ComparisonGraph,
    ConditionId,
    DatasetCollection,
    DatasetMeta,
    RatingRecord,
    RatingTable,
)
from .photometry import DisplayModel
from .scaling import LinkParams, ObserverModel, UnifiedScale, preference_probability, scale

_STREAM_TRUTH = 0
_STREAM_LINKS = 1
_STREAM_COMPARISON = 2
_STREAM_RATING = 3
_STREAM_DESIGN = 4


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


@dataclass(frozen=True)
class GroundTruth:
    """Known scores and link parameters driving the synthetic observer."""

    conditions: tuple[ConditionId, ...]
    q_true: np.ndarray
    links_true: dict[str, LinkParams]
    model: ObserverModel = ObserverModel()
    seed: int = 0

    def __post_init__(self):
        q = np.asarray(self.q_true, dtype=float)
        object.__setattr__(self, "q_true", q)
        if q.shape != (len(self.conditions),):
            raise IntegrityError("q_true must have one entry per condition")
        if self.seed < 0:
            raise IntegrityError(f"seed must be non-negative, got {self.seed}")
        for idx, cond in enumerate(self.conditions):
            if cond.is_reference and q[idx] != 0.0:
                raise IntegrityError(f"reference {cond.key} must have q_true = 0")


def simulate_comparison(
    truth: GroundTruth, i: int, j: int, n_trials: int, stream: int = 0
) -> tuple[int, int]:
    """Simulate n_trials forced-choice trials between conditions i and j.

    Returns (c_ij, c_ji). Deterministic given the truth seed, the pair and
    the stream index (bump ``stream`` to redraw the same pair independently).
    """
    if n_trials < 0:
        raise IntegrityError(f"n_trials must be non-negative, got {n_trials}")
    if n_trials == 0:
        return 0, 0
    p = float(preference_probability(truth.q_true[i], truth.q_true[j], truth.model))
    rng = _rng(truth.seed, _STREAM_COMPARISON, i, j, stream)
    c_ij = int(rng.binomial(n_trials, p))
    return c_ij, n_trials - c_ij


def simulate_ratings(truth: GroundTruth, dataset: str, n_observers: int) -> RatingTable:
    """Simulate one rating session per observer for every condition of a dataset.

    Ratings are Gaussian around (q_i - b) / a with spread c * sigma, so
    mapping them through the link reproduces the quality-domain observer
    noise. Deterministic given the truth seed.
    """
    if dataset not in truth.links_true:
        raise IntegrityError(f"no ground-truth link for dataset {dataset!r}")
    if n_observers < 0:
        raise IntegrityError(f"n_observers must be non-negative, got {n_observers}")
    link = truth.links_true[dataset]
    sigma = truth.model.sigma
    records = []
    for idx, cond in enumerate(truth.conditions):
        if cond.dataset != dataset:
            continue
        rng = _rng(truth.seed, _STREAM_RATING, idx)
        mean = (truth.q_true[idx] - link.b) / link.a
        scores = mean + rng.normal(0.0, link.c * sigma, size=n_observers)
        for k in range(n_observers):
            records.append(RatingRecord(idx, f"o{k:03d}", float(scores[k])))
    return RatingTable(tuple(records))


def comparison_callback(truth: GroundTruth, n_trials: int):
    """Observer callback for iterative selection; redraws repeated pairs."""
    calls: dict[tuple[int, int], int] = {}

    def run_batch(batch, collection):
        del collection
        counts = []
        for i, j in batch.pairs:
            key = (min(i, j), max(i, j))
            stream = calls.get(key, 0)
            calls[key] = stream + 1
            counts.append(simulate_comparison(truth, i, j, n_trials, stream=stream))
        return counts

    return run_batch


@dataclass(frozen=True)
class RecoveryConfig:
    """Parameters of one synthetic end-to-end recovery experiment."""

    n_conditions: int = 50
    n_datasets: int = 3
    trials_per_pair: int = 30
    observers: int = 15
    graph_density: float = 0.5
    seed: int = 0
    q_low: float = -5.0
    q_high: float = 0.0
    prior_enabled: bool = False
    tol: float = 1e-6
    max_iter: int = 2000

    def __post_init__(self):
        if self.n_datasets < 1 or self.n_conditions < 2 * self.n_datasets:
            raise IntegrityError(
                "need at least one dataset and two conditions (reference + test) per dataset"
            )
        if self.seed < 0:
            raise IntegrityError(f"seed must be non-negative, got {self.seed}")


def synthesize_collection(config: RecoveryConfig) -> tuple[GroundTruth, DatasetCollection]:
    """Build ground truth and a simulated collection for a recovery run.

    The first dataset is comparison-based, the remaining ones are
    rating-based. Every dataset gets one reference and a dense set of
    within-dataset comparisons; datasets are connected by a spanning chain
    of cross-dataset pairs plus ``graph_density * n_conditions`` random
    extras.
    """
    counts = [
        config.n_conditions // config.n_datasets
        + (1 if d < config.n_conditions % config.n_datasets else 0)
        for d in range(config.n_datasets)
    ]
    conditions: list[ConditionId] = []
    dataset_names: list[str] = []
    dataset_members: list[list[int]] = []
    for d, size in enumerate(counts):
        name = f"ds{d}"
        dataset_names.append(name)
        members = []
        members.append(len(conditions))
        conditions.append(ConditionId.reference(name))
        for t in range(size - 1):
            members.append(len(conditions))
            conditions.append(ConditionId(name, f"c{t:03d}", "dist", 1))
        dataset_members.append(members)

    n = len(conditions)
    rng_truth = _rng(config.seed, _STREAM_TRUTH)
    q_true = np.zeros(n)
    for idx, cond in enumerate(conditions):
        if not cond.is_reference:
            q_true[idx] = rng_truth.uniform(config.q_low, config.q_high)

    rng_links = _rng(config.seed, _STREAM_LINKS)
    links_true: dict[str, LinkParams] = {}
    for name in dataset_names[1:]:
        links_true[name] = LinkParams(
            a=float(rng_links.uniform(0.6, 1.6)),
            b=float(rng_links.uniform(-2.0, 2.0)),
            c=float(rng_links.uniform(0.5, 1.2)),
        )

    truth = GroundTruth(
        conditions=tuple(conditions),
        q_true=q_true,
        links_true=links_true,
        model=ObserverModel(),
        seed=config.seed,
    )

    measured: set[tuple[int, int]] = set()
    for members in dataset_members:
        for a_pos in range(len(members)):
            for b_pos in range(a_pos + 1, len(members)):
                measured.add((members[a_pos], members[b_pos]))
    rng_design = _rng(config.seed, _STREAM_DESIGN)
    for d in range(1, config.n_datasets):
        i = int(rng_design.choice(dataset_members[d - 1]))
        j = int(rng_design.choice(dataset_members[d]))
        measured.add((min(i, j), max(i, j)))
    n_extra = int(round(config.graph_density * config.n_conditions))
    attempts = 0
    added = 0
    while added < n_extra and attempts < 50 * max(n_extra, 1):
        attempts += 1
        i, j = (int(v) for v in rng_design.integers(0, n, size=2))
        if i == j or conditions[i].dataset == conditions[j].dataset:
            continue
        key = (min(i, j), max(i, j))
        if key in measured:
            continue
        measured.add(key)
        added += 1

    entries: dict[tuple[int, int], int] = {}
    for i, j in sorted(measured):
        c_ij, c_ji = simulate_comparison(truth, i, j, config.trials_per_pair)
        if c_ij:
            entries[(i, j)] = c_ij
        if c_ji:
            entries[(j, i)] = c_ji

    ratings: dict[str, RatingTable] = {}
    if config.observers > 0:
        for name in dataset_names[1:]:
            ratings[name] = simulate_ratings(truth, name, config.observers)

    manifest = {
        name: DatasetMeta(
            name=name,
            experiment="pwc" if d == 0 else "rating",
            display=DisplayModel(100.0, 0.5, 2.2),
        )
        for d, name in enumerate(dataset_names)
    }
    graph = ComparisonGraph(n, entries)
    collection = DatasetCollection(conditions, graph, ratings, manifest)
    return truth, collection


def recovery_experiment(config: RecoveryConfig) -> dict:
    """Generate, scale and score one synthetic instance.

    Returns a report with the rank correlation and RMSE between recovered
    and true scores (non-reference conditions), per-dataset link-parameter
    errors, and solver diagnostics. ``runtime_seconds`` is wall-clock time
    and is the only non-deterministic entry.
    """
    truth, collection = synthesize_collection(config)
    start = time.perf_counter()
    result = scale(
        collection,
        prior_enabled=config.prior_enabled,
        tol=config.tol,
        max_iter=config.max_iter,
    )
    runtime = time.perf_counter() - start
    return build_recovery_report(truth, result, runtime)


def build_recovery_report(truth: GroundTruth, result: UnifiedScale, runtime: float) -> dict:
    free = [i for i, c in enumerate(truth.conditions) if not c.is_reference]
    stats = correlation_metrics(result.q[free], truth.q_true[free])
    link_errors = {}
    for name in sorted(truth.links_true):
        true_link = truth.links_true[name]
        fit_link = result.links[name]
        link_errors[name] = {
            "a_rel": abs(fit_link.a - true_link.a) / abs(true_link.a),
            "b_abs": abs(fit_link.b - true_link.b),
            "c_rel": abs(fit_link.c - true_link.c) / abs(true_link.c),
        }
    summary = {
        "a_rel_max": max((e["a_rel"] for e in link_errors.values()), default=0.0),
        "b_abs_max": max((e["b_abs"] for e in link_errors.values()), default=0.0),
        "c_rel_max": max((e["c_rel"] for e in link_errors.values()), default=0.0),
    }
    return {
        "srocc": stats.srocc,
        "rmse": stats.rmse,
        "link_errors": link_errors,
        "link_error_summary": summary,
        "log_posterior": result.log_posterior,
        "converged": result.converged,
        "iterations": result.iterations,
        "n_conditions": len(truth.conditions),
        "runtime_seconds": runtime,
    }
