"""Cache routing problem instances: region-files, demands, utilities, objectives."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .netgen import NetworkInstance, RegionMap

__all__ = [
    "ConfigurationError",
    "UtilityFamily",
    "UtilitySpec",
    "RegionFile",
    "CrpInstance",
    "RoutingVector",
    "DualVector",
    "build_instance",
    "total_volume",
    "objective",
    "feasibility_residual",
    "augmented_lagrangian",
]

#: region-files with demand below this are dropped at construction time
DEMAND_FLOOR = 1e-12


class ConfigurationError(ValueError):
    """Raised for invalid utility or solver configuration."""


class UtilityFamily(Enum):
    WEIGHTED_LOG = "weighted-log"


@dataclass(frozen=True)
class UtilitySpec:
    """Station utility U(v) = weight * ln(1 + v / soft_limit).

    Strictly increasing and strictly concave with derivative
    weight / (soft_limit + v), which decays towards zero beyond the soft
    limit volume.
    """

    weight: float = 1.0
    soft_limit: float = 1.0
    family: UtilityFamily = UtilityFamily.WEIGHTED_LOG

    def __post_init__(self):
        if self.weight <= 0 or self.soft_limit <= 0:
            raise ConfigurationError("utility weight and soft_limit must be positive")

    def value(self, v: float) -> float:
        return self.weight * math.log1p(v / self.soft_limit)

    def derivative(self, v: float) -> float:
        return self.weight / (self.soft_limit + v)


@dataclass(frozen=True)
class RegionFile:
    """A (region, file) demand unit.

    ``eligible`` lists the stations that both cover the region and cache the
    file; it is a subset of ``region_key`` and is never empty.
    """

    id: int
    region_key: tuple[int, ...]
    file: int
    demand: float
    eligible: tuple[int, ...]
    centroid: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.eligible:
            raise ValueError("region-file must have at least one eligible station")
        if not set(self.eligible) <= set(self.region_key):
            raise ValueError("eligible stations must cover the region")
        if self.demand < 0:
            raise ValueError("demand must be nonnegative")


@dataclass
class RoutingVector:
    """Sparse routing: (station id, region-file id) -> nonnegative volume."""

    entries: dict[tuple[int, int], float] = field(default_factory=dict)

    def get(self, m: int, q: int) -> float:
        return self.entries.get((m, q), 0.0)

    def copy(self) -> "RoutingVector":
        return RoutingVector(dict(self.entries))

    def to_triplets(self) -> list[list]:
        return [[m, q, v] for (m, q), v in sorted(self.entries.items())]

    @classmethod
    def from_triplets(cls, triplets) -> "RoutingVector":
        return cls({(int(m), int(q)): float(v) for m, q, v in triplets})


#: one real price per region-file id, unrestricted sign
DualVector = dict[int, float]


@dataclass
class CrpInstance:
    """The optimization instance: stations with utilities and region-files."""

    station_ids: tuple[int, ...]
    utilities: dict[int, UtilitySpec]
    region_files: list[RegionFile]

    def __post_init__(self):
        sids = set(self.station_ids)
        if len(self.station_ids) != len(sids):
            raise ValueError("station ids must be unique")
        for q in self.region_files:
            if not set(q.eligible) <= sids:
                raise ValueError(f"region-file {q.id} eligible outside station set")
        ids = [q.id for q in self.region_files]
        if len(ids) != len(set(ids)):
            raise ValueError("region-file ids must be unique")
        self._by_id = {q.id: q for q in self.region_files}
        self._q_of = {m: [] for m in self.station_ids}
        for q in self.region_files:
            for m in q.eligible:
                self._q_of[m].append(q.id)
        for m in self._q_of:
            self._q_of[m].sort()
        self._arrays = None  # solver-side compiled form, built lazily

    def region_file(self, qid: int) -> RegionFile:
        return self._by_id[qid]

    def served_by(self, m: int) -> list[int]:
        """Region-file ids the cache of station m can serve, ascending."""
        return list(self._q_of[m])

    def to_json(self) -> str:
        doc = {
            "stations": [
                {
                    "id": m,
                    "weight": self.utilities[m].weight,
                    "soft_limit": self.utilities[m].soft_limit,
                }
                for m in self.station_ids
            ],
            "region_files": [
                {
                    "id": q.id,
                    "region": list(q.region_key),
                    "file": q.file,
                    "demand": q.demand,
                    "eligible": list(q.eligible),
                    **({"centroid": list(q.centroid)} if q.centroid else {}),
                }
                for q in self.region_files
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CrpInstance":
        doc = json.loads(text)
        station_ids = tuple(d["id"] for d in doc["stations"])
        utilities = {
            d["id"]: UtilitySpec(weight=d["weight"], soft_limit=d["soft_limit"])
            for d in doc["stations"]
        }
        region_files = [
            RegionFile(
                id=d["id"],
                region_key=tuple(d["region"]),
                file=d["file"],
                demand=d["demand"],
                eligible=tuple(d["eligible"]),
                centroid=tuple(d["centroid"]) if "centroid" in d else None,
            )
            for d in doc["region_files"]
        ]
        return cls(station_ids=station_ids, utilities=utilities, region_files=region_files)


def build_instance(
    network: NetworkInstance,
    regions: RegionMap,
    user_density: float = 100.0,
    utility_defaults: UtilitySpec | None = None,
) -> CrpInstance:
    """Assemble the routing instance from a network and its region map.

    Demand of a (region, file) pair is area * user_density * popularity; pairs
    with no eligible station are cache-unrelated and dropped, as are demands
    below ``DEMAND_FLOOR``. When ``utility_defaults`` is None each station
    gets a weight-1 log utility with soft limit at the fair-share volume
    (total demand / station count).
    """
    if user_density <= 0:
        raise ValueError("user_density must be positive")
    by_id = {s.id: s for s in network.stations}
    popularity = network.catalog.popularity

    region_files: list[RegionFile] = []
    qid = 0
    total_demand = 0.0
    for key in sorted(regions.entries):
        area = regions.entries[key]
        centroid = regions.centroids[key]
        for f in range(network.catalog.file_count):
            eligible = tuple(m for m in key if f in by_id[m].cached_files)
            if not eligible:
                continue
            demand = area * user_density * popularity[f]
            if demand < DEMAND_FLOOR:
                continue
            region_files.append(
                RegionFile(
                    id=qid,
                    region_key=key,
                    file=f,
                    demand=demand,
                    eligible=eligible,
                    centroid=centroid,
                )
            )
            total_demand += demand
            qid += 1

    station_ids = tuple(sorted(by_id))
    if utility_defaults is None:
        n_st = max(1, len(station_ids))
        soft = total_demand / n_st if total_demand > 0 else 1.0
        utility_defaults = UtilitySpec(weight=1.0, soft_limit=soft)
    utilities = {m: utility_defaults for m in station_ids}
    return CrpInstance(
        station_ids=station_ids, utilities=utilities, region_files=region_files
    )


def total_volume(y: RoutingVector, m: int) -> float:
    """Total traffic volume routed to station m."""
    return sum(v for (mm, _), v in y.entries.items() if mm == m)


def _volumes(instance: CrpInstance, y: RoutingVector) -> dict[int, float]:
    vols = {m: 0.0 for m in instance.station_ids}
    for (m, _), v in y.entries.items():
        vols[m] += v
    return vols


def objective(instance: CrpInstance, y: RoutingVector) -> float:
    """Sum of station utilities at the volumes induced by the routing."""
    vols = _volumes(instance, y)
    return sum(instance.utilities[m].value(vols[m]) for m in instance.station_ids)


def feasibility_residual(instance: CrpInstance, y: RoutingVector) -> float:
    """Largest absolute violation of the full-assignment constraints."""
    worst = 0.0
    for q in instance.region_files:
        served = sum(y.get(m, q.id) for m in q.eligible)
        worst = max(worst, abs(q.demand - served))
    return worst


def augmented_lagrangian(
    instance: CrpInstance, y: RoutingVector, lam: DualVector, rho: float
) -> float:
    """Utility sum minus price and quadratic penalty terms on constraint violations."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    value = objective(instance, y)
    for q in instance.region_files:
        served = sum(y.get(m, q.id) for m in q.eligible)
        gap = q.demand - served
        value -= lam.get(q.id, 0.0) * gap
        value -= 0.5 * rho * gap * gap
    return value
