"""Domain types and ingestion for comparison and rating datasets.

A collection bundles the conditions of every source dataset together with a
sparse win-count matrix of pairwise comparisons and per-dataset rating
tables. Collections are immutable after construction and safe to share
read-only across threads.

File formats
------------
manifest JSON
    ``{"datasets": [...], "comparisons": "comparisons.csv"}`` where each
    dataset entry carries ``name``, ``experiment`` ("pwc" or "rating"),
    ``display`` (``{"L_peak": .., "L_black": .., "gamma": ..}``),
    ``conditions`` (CSV path or inline list of condition ids) and, for
    rating datasets, ``ratings`` (CSV path). Paths are resolved relative to
    the manifest. Unknown fields are ignored with a warning.
conditions CSV
    header ``condition``; ids are ``dataset/content/distortion/level``.
comparisons CSV
    header ``cond_a,cond_b,count_a_over_b``.
ratings CSV
    header ``condition,observer,score``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import IntegrityError, ParseError, UndefinedPairError
from .photometry import DisplayModel

REFERENCE_DISTORTION = "reference"

_KNOWN_MANIFEST_KEYS = {"datasets", "comparisons"}
_KNOWN_DATASET_KEYS = {"name", "experiment", "display", "conditions", "ratings", "dynamic_range"}
_KNOWN_DISPLAY_KEYS = {"L_peak", "L_black", "gamma"}

EXPERIMENT_PWC = "pwc"
EXPERIMENT_RATING = "rating"


@dataclass(frozen=True, slots=True)
class ConditionId:
    """Identity of one compared item: a content at one distortion level.

    Reference conditions (the undistorted anchors that pin the scale at
    quality zero) are encoded as ``distortion="reference"``, ``level=0``.
    """

    dataset: str
    content: str
    distortion: str
    level: int
    is_reference: bool = field(init=False, default=False)

    def __post_init__(self):
        for part in (self.dataset, self.content, self.distortion):
            if not part or "/" in part:
                raise IntegrityError(f"bad condition id component {part!r}")
        object.__setattr__(
            self,
            "is_reference",
            self.distortion == REFERENCE_DISTORTION and self.level == 0,
        )

    @property
    def key(self) -> str:
        return f"{self.dataset}/{self.content}/{self.distortion}/{self.level}"

    @classmethod
    def parse(cls, text: str) -> "ConditionId":
        parts = text.strip().split("/")
        if len(parts) != 4:
            raise ParseError(f"condition id {text!r} must have four '/'-separated parts")
        try:
            level = int(parts[3])
        except ValueError as exc:
            raise ParseError(f"condition id {text!r} has a non-integer level") from exc
        return cls(parts[0], parts[1], parts[2], level)

    @classmethod
    def reference(cls, dataset: str, content: str = "ref") -> "ConditionId":
        return cls(dataset, content, REFERENCE_DISTORTION, 0)


class ComparisonGraph:
    """Sparse count matrix of pairwise wins.

    ``entries[(i, j)]`` holds the number of times condition ``i`` was chosen
    over condition ``j``; an absent entry means zero. Self comparisons are
    forbidden and counts must be non-negative. The dense matrix is never
    materialized.
    """

    __slots__ = ("n", "_entries", "_arrays")

    def __init__(self, n: int, entries: Mapping[tuple[int, int], int] | None = None):
        if n < 0:
            raise IntegrityError(f"graph size must be non-negative, got {n}")
        self.n = int(n)
        self._entries: dict[tuple[int, int], int] = {}
        self._arrays = None
        for (i, j), count in (entries or {}).items():
            self._accumulate(i, j, count)

    def _accumulate(self, i: int, j: int, count: int) -> None:
        i, j = int(i), int(j)
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IntegrityError(f"condition index out of range in pair ({i}, {j})")
        if i == j:
            raise IntegrityError(f"self-comparison is forbidden (condition {i})")
        if int(count) != count or count < 0:
            raise IntegrityError(f"count for pair ({i}, {j}) must be a non-negative integer")
        if count == 0:
            return
        self._entries[(i, j)] = self._entries.get((i, j), 0) + int(count)

    @property
    def entries(self) -> Mapping[tuple[int, int], int]:
        return MappingProxyType(self._entries)

    def count(self, i: int, j: int) -> int:
        return self._entries.get((int(i), int(j)), 0)

    def trials(self, i: int, j: int) -> int:
        return self.count(i, j) + self.count(j, i)

    def measured_pairs(self) -> Iterator[tuple[int, int, int, int]]:
        """Yield (i, j, c_ij, c_ji) for unordered pairs with any data, i < j,
        in deterministic sorted order."""
        seen = sorted({(min(i, j), max(i, j)) for i, j in self._entries})
        for i, j in seen:
            yield i, j, self.count(i, j), self.count(j, i)

    def pair_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized view of measured pairs: (I, J, C_ij, C_ji)."""
        if self._arrays is None:
            pairs = list(self.measured_pairs())
            if pairs:
                i_arr, j_arr, cij, cji = (np.asarray(col) for col in zip(*pairs))
            else:
                i_arr = j_arr = np.zeros(0, dtype=int)
                cij = cji = np.zeros(0, dtype=int)
            self._arrays = (i_arr, j_arr, cij.astype(float), cji.astype(float))
        return self._arrays

    def with_counts(self, updates: Iterable[tuple[int, int, int]]) -> "ComparisonGraph":
        """Return a new graph with additional counts merged in."""
        merged = ComparisonGraph(self.n, self._entries)
        for i, j, count in updates:
            merged._accumulate(i, j, count)
        return merged

    def total_comparisons(self) -> int:
        return sum(self._entries.values())

    def __eq__(self, other):
        return (
            isinstance(other, ComparisonGraph)
            and self.n == other.n
            and self._entries == other._entries
        )

    def __repr__(self):
        return f"ComparisonGraph(n={self.n}, measured_entries={len(self._entries)})"


@dataclass(frozen=True, slots=True)
class RatingRecord:
    condition: int
    observer: str
    score: float


@dataclass(frozen=True)
class RatingTable:
    """Per-observer rating measurements for one dataset.

    Repeated (condition, observer) rows are kept as separate sessions; the
    implicit session label is the occurrence index.
    """

    records: tuple[RatingRecord, ...]

    @cached_property
    def condition_indices(self) -> np.ndarray:
        return np.asarray([r.condition for r in self.records], dtype=int)

    @cached_property
    def scores(self) -> np.ndarray:
        return np.asarray([r.score for r in self.records], dtype=float)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class DatasetMeta:
    """Per-dataset manifest metadata."""

    name: str
    experiment: str
    display: DisplayModel | None = None
    dynamic_range: str = "sdr"

    def __post_init__(self):
        if self.experiment not in (EXPERIMENT_PWC, EXPERIMENT_RATING):
            raise IntegrityError(
                f"dataset {self.name!r}: experiment must be "
                f"'{EXPERIMENT_PWC}' or '{EXPERIMENT_RATING}', got {self.experiment!r}"
            )


class DatasetCollection:
    """Validated, immutable bundle of conditions, comparisons and ratings."""

    def __init__(
        self,
        conditions: Iterable[ConditionId],
        graph: ComparisonGraph,
        ratings: Mapping[str, RatingTable] | None = None,
        manifest: Mapping[str, DatasetMeta] | None = None,
    ):
        self.conditions: tuple[ConditionId, ...] = tuple(conditions)
        self.graph = graph
        self.ratings: Mapping[str, RatingTable] = MappingProxyType(dict(ratings or {}))
        self.manifest: Mapping[str, DatasetMeta] = MappingProxyType(dict(manifest or {}))
        self._index = {}
        for idx, cond in enumerate(self.conditions):
            if cond.key in self._index:
                raise IntegrityError(f"duplicate condition {cond.key}")
            self._index[cond.key] = idx
        self._validate()

    def _validate(self) -> None:
        if self.graph.n != len(self.conditions):
            raise IntegrityError(
                f"graph is sized for {self.graph.n} conditions, "
                f"collection has {len(self.conditions)}"
            )
        dataset_names = {cond.dataset for cond in self.conditions}
        missing = dataset_names - set(self.manifest)
        if missing:
            raise IntegrityError(f"manifest does not cover datasets: {sorted(missing)}")
        for name, table in self.ratings.items():
            if name not in self.manifest:
                raise IntegrityError(f"ratings reference unknown dataset {name!r}")
            for record in table.records:
                if not 0 <= record.condition < len(self.conditions):
                    raise IntegrityError(
                        f"rating references condition index {record.condition} out of range"
                    )
                cond = self.conditions[record.condition]
                if cond.dataset != name:
                    raise IntegrityError(
                        f"rating for dataset {name!r} references condition {cond.key}"
                    )
                if not np.isfinite(record.score):
                    raise IntegrityError(f"non-finite rating score for {cond.key}")
            if not any(c.is_reference and c.dataset == name for c in self.conditions):
                raise IntegrityError(f"rating dataset {name!r} has no reference condition")

    @property
    def n(self) -> int:
        return len(self.conditions)

    def index_of(self, key: str) -> int:
        try:
            return self._index[key]
        except KeyError:
            raise IntegrityError(f"unknown condition {key!r}") from None

    def dataset_indices(self, name: str) -> list[int]:
        return [i for i, c in enumerate(self.conditions) if c.dataset == name]

    def reference_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.conditions) if c.is_reference]

    def dataset_names(self) -> list[str]:
        return sorted({c.dataset for c in self.conditions})

    def with_graph(self, graph: ComparisonGraph) -> "DatasetCollection":
        return DatasetCollection(self.conditions, graph, self.ratings, self.manifest)


def empirical_probability(graph: ComparisonGraph, i: int, j: int) -> float:
    """Empirical probability that condition i beats condition j."""
    if i == j:
        raise IntegrityError("empirical probability needs two distinct conditions")
    c_ij = graph.count(i, j)
    total = c_ij + graph.count(j, i)
    if total == 0:
        raise UndefinedPairError(f"pair ({i}, {j}) has no recorded comparisons")
    return c_ij / total


def connected_components(collection: DatasetCollection) -> list[list[int]]:
    """Partition condition indices into joint-scaling components.

    Conditions are linked by any measured comparison; rating-bearing
    conditions of the same dataset are also linked, because shared link
    parameters tie them together. Components are returned as sorted index
    lists, ordered by their smallest member.
    """
    parent = list(range(collection.n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x: int, y: int) -> None:
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    for i, j in collection.graph.entries:
        union(i, j)
    for table in collection.ratings.values():
        rated = sorted(set(int(i) for i in table.condition_indices))
        for idx in rated[1:]:
            union(rated[0], idx)

    groups: dict[int, list[int]] = {}
    for idx in range(collection.n):
        groups.setdefault(find(idx), []).append(idx)
    return [sorted(members) for _, members in sorted(groups.items())]


def _read_csv_rows(path: Path, required: list[str]) -> Iterator[dict[str, str]]:
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [col for col in required if col not in header]
        if missing:
            raise ParseError(f"{path} is missing columns {missing} (header {header})")
        for row in reader:
            yield row


def _load_conditions(spec, base: Path, dataset: str) -> list[ConditionId]:
    if isinstance(spec, list):
        texts = [str(item) for item in spec]
    elif isinstance(spec, str):
        texts = [row["condition"] for row in _read_csv_rows(base / spec, ["condition"])]
    else:
        raise ParseError(f"dataset {dataset!r}: 'conditions' must be a path or a list")
    out = []
    for text in texts:
        cond = ConditionId.parse(text)
        if cond.dataset != dataset:
            raise IntegrityError(
                f"condition {cond.key} listed under dataset {dataset!r}"
            )
        out.append(cond)
    return out


def load_collection(manifest_path) -> DatasetCollection:
    """Load and validate a dataset collection from a manifest file.

    Loading is deterministic: identical files produce identical in-memory
    collections regardless of map iteration order.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    try:
        with open(manifest_path) as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ParseError(f"cannot open manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or "datasets" not in raw:
        raise ParseError(f"manifest {manifest_path} must be an object with a 'datasets' list")

    for key in sorted(set(raw) - _KNOWN_MANIFEST_KEYS):
        warnings.warn(f"ignoring unknown manifest field {key!r}", stacklevel=2)

    conditions: list[ConditionId] = []
    metas: dict[str, DatasetMeta] = {}
    rating_paths: dict[str, Path] = {}

    for entry in raw["datasets"]:
        if not isinstance(entry, dict) or "name" not in entry:
            raise ParseError("each dataset entry must be an object with a 'name'")
        name = str(entry["name"])
        if name in metas:
            raise IntegrityError(f"duplicate dataset {name!r} in manifest")
        for key in sorted(set(entry) - _KNOWN_DATASET_KEYS):
            warnings.warn(f"dataset {name!r}: ignoring unknown field {key!r}", stacklevel=2)
        display = None
        if "display" in entry:
            dd = entry["display"]
            for key in sorted(set(dd) - _KNOWN_DISPLAY_KEYS):
                warnings.warn(f"dataset {name!r}: ignoring unknown display field {key!r}",
                              stacklevel=2)
            try:
                display = DisplayModel(
                    l_peak=float(dd["L_peak"]),
                    l_black=float(dd["L_black"]),
                    gamma=float(dd.get("gamma", 2.2)),
                )
            except KeyError as exc:
                raise ParseError(f"dataset {name!r}: display needs L_peak and L_black") from exc
        experiment = str(entry.get("experiment", EXPERIMENT_PWC))
        metas[name] = DatasetMeta(
            name=name,
            experiment=experiment,
            display=display,
            dynamic_range=str(entry.get("dynamic_range", "sdr")),
        )
        if "conditions" not in entry:
            raise ParseError(f"dataset {name!r} has no 'conditions'")
        conditions.extend(_load_conditions(entry["conditions"], base, name))
        if experiment == EXPERIMENT_RATING and "ratings" not in entry:
            raise ParseError(f"rating dataset {name!r} has no 'ratings' file")
        if "ratings" in entry:
            rating_paths[name] = base / str(entry["ratings"])

    index: dict[str, int] = {}
    for idx, cond in enumerate(conditions):
        if cond.key in index:
            raise IntegrityError(f"duplicate condition {cond.key}")
        index[cond.key] = idx

    entries: dict[tuple[int, int], int] = {}
    if "comparisons" in raw and raw["comparisons"] is not None:
        for row in _read_csv_rows(base / str(raw["comparisons"]),
                                  ["cond_a", "cond_b", "count_a_over_b"]):
            key_a, key_b = row["cond_a"].strip(), row["cond_b"].strip()
            for key in (key_a, key_b):
                if key not in index:
                    raise IntegrityError(f"comparison references unknown condition {key!r}")
            try:
                count = int(row["count_a_over_b"])
            except ValueError as exc:
                raise ParseError(f"non-integer count {row['count_a_over_b']!r}") from exc
            if count < 0:
                raise IntegrityError(f"negative count for pair ({key_a}, {key_b})")
            i, j = index[key_a], index[key_b]
            if i == j:
                raise IntegrityError(f"self-comparison for condition {key_a!r}")
            if count:
                entries[(i, j)] = entries.get((i, j), 0) + count

    ratings: dict[str, RatingTable] = {}
    for name, path in sorted(rating_paths.items()):
        records = []
        for row in _read_csv_rows(path, ["condition", "observer", "score"]):
            key = row["condition"].strip()
            if key not in index:
                raise IntegrityError(f"rating references unknown condition {key!r}")
            try:
                score = float(row["score"])
            except ValueError as exc:
                raise ParseError(f"non-numeric score {row['score']!r} in {path}") from exc
            records.append(RatingRecord(index[key], row["observer"].strip(), score))
        ratings[name] = RatingTable(tuple(records))

    graph = ComparisonGraph(len(conditions), entries)
    return DatasetCollection(conditions, graph, ratings, metas)
