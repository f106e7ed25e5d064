"""Random cellular topologies: PPP placement, Boolean disc coverage, region extraction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "Window",
    "Tier",
    "Station",
    "Catalog",
    "NetworkInstance",
    "RegionMap",
    "sample_ppp",
    "mean_coverage",
    "radius_for_mean_coverage",
    "extract_regions",
]


@dataclass(frozen=True)
class Window:
    """Rectangular simulation area, lengths in km."""

    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("window dimensions must be positive")

    @property
    def area(self) -> float:
        return self.width * self.height


class Tier(Enum):
    LARGE = "large"
    SMALL = "small"
    SINGLE_TIER = "single"


@dataclass(frozen=True)
class Station:
    """A cached base station: position and disc radius in km, cached file ids."""

    id: int
    x: float
    y: float
    radius: float
    tier: Tier = Tier.SINGLE_TIER
    cached_files: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("station radius must be positive")


@dataclass(frozen=True)
class Catalog:
    """File catalog with a popularity distribution (one probability per file)."""

    popularity: tuple[float, ...]
    zipf_s: float | None = None

    def __post_init__(self):
        p = np.asarray(self.popularity)
        if p.size == 0 or np.any(p <= 0):
            raise ValueError("popularity entries must be positive")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError("popularity must sum to 1")

    @property
    def file_count(self) -> int:
        return len(self.popularity)

    @classmethod
    def zipf(cls, file_count: int, s: float = 1.0) -> "Catalog":
        """Zipf popularity: p(rank) proportional to rank**-s, ranks 1..file_count."""
        ranks = np.arange(1, file_count + 1, dtype=float)
        weights = ranks ** (-s)
        p = weights / weights.sum()
        return cls(popularity=tuple(float(x) for x in p), zipf_s=s)


@dataclass
class NetworkInstance:
    """A concrete network: window, stations with caches, and the file catalog."""

    window: Window
    stations: list[Station]
    catalog: Catalog

    def __post_init__(self):
        ids = [s.id for s in self.stations]
        if len(ids) != len(set(ids)):
            raise ValueError("station ids must be unique")
        nf = self.catalog.file_count
        for s in self.stations:
            if any(f < 0 or f >= nf for f in s.cached_files):
                raise ValueError(f"station {s.id} caches a file outside the catalog")

    def to_json(self) -> str:
        doc = {
            "window": {"width": self.window.width, "height": self.window.height},
            "stations": [
                {
                    "id": s.id,
                    "x": s.x,
                    "y": s.y,
                    "radius": s.radius,
                    "tier": s.tier.value,
                    "cache": sorted(s.cached_files),
                }
                for s in self.stations
            ],
            "catalog": {
                "files": self.catalog.file_count,
                "zipf_s": self.catalog.zipf_s,
                "popularity": list(self.catalog.popularity),
            },
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkInstance":
        doc = json.loads(text)
        window = Window(doc["window"]["width"], doc["window"]["height"])
        stations = [
            Station(
                id=d["id"],
                x=d["x"],
                y=d["y"],
                radius=d["radius"],
                tier=Tier(d["tier"]),
                cached_files=frozenset(d["cache"]),
            )
            for d in doc["stations"]
        ]
        catalog = Catalog(
            popularity=tuple(doc["catalog"]["popularity"]),
            zipf_s=doc["catalog"]["zipf_s"],
        )
        return cls(window=window, stations=stations, catalog=catalog)


@dataclass
class RegionMap:
    """Coverage regions discovered by grid quadrature.

    ``entries`` maps a region key (sorted tuple of station ids covering the
    region) to its area in km^2; ``centroids`` holds the mean position of the
    region's grid cells.
    """

    entries: dict[tuple[int, ...], float]
    centroids: dict[tuple[int, ...], tuple[float, float]]
    resolution: float
    window: Window
    covered_cells: int
    cell_area: float


def sample_ppp(density: float, window: Window, seed: int) -> np.ndarray:
    """Sample a Poisson Point Process in the window.

    Returns an (n, 2) array of positions; n is Poisson(density * area) and
    the draw is reproducible for a fixed seed.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    rng = np.random.default_rng(seed)
    n = rng.poisson(density * window.area)
    xs = rng.uniform(0.0, window.width, n)
    ys = rng.uniform(0.0, window.height, n)
    return np.column_stack([xs, ys])


def mean_coverage(density: float, radius: float) -> float:
    """Mean number of stations covering a covered user under the Boolean model.

    The number of discs covering a point is Poisson with mean mu = density *
    pi * radius**2; conditioning on the point being covered at all gives
    mu / (1 - exp(-mu)).
    """
    if density <= 0 or radius <= 0:
        raise ValueError("density and radius must be positive")
    mu = density * math.pi * radius * radius
    return mu / (-math.expm1(-mu))


def radius_for_mean_coverage(density: float, target: float) -> float:
    """Invert :func:`mean_coverage` in the radius, to 1e-9 in the target value."""
    if density <= 0:
        raise ValueError("density must be positive")
    if target <= 1.0:
        raise ValueError("conditional mean coverage is always > 1")

    def f(r):
        return mean_coverage(density, r) - target

    lo, hi = 1e-9, 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e9:  # pragma: no cover - unreachable for sane targets
            raise ValueError("failed to bracket target coverage")
    r = brentq(f, lo, hi, xtol=1e-15, rtol=8.9e-16)
    assert abs(f(r)) <= 1e-9
    return float(r)


def extract_regions(
    stations: Sequence[Station], window: Window, grid_resolution: float = 400.0
) -> RegionMap:
    """Partition the window into coverage regions by deterministic grid quadrature.

    Each grid cell (``grid_resolution`` cells per km) is attributed to the set
    of stations whose disc contains its center; cells covered by no station
    are discarded. Discs are clipped by the window (no wrap-around).
    """
    if grid_resolution <= 0:
        raise ValueError("grid_resolution must be positive")
    stations = list(stations)
    nx = max(1, int(round(window.width * grid_resolution)))
    ny = max(1, int(round(window.height * grid_resolution)))
    cw = window.width / nx
    ch = window.height / ny
    cell_area = cw * ch

    n_st = len(stations)
    words = max(1, (n_st + 63) // 64)
    bits = np.zeros((ny, nx, words), dtype=np.uint64)
    cx = (np.arange(nx) + 0.5) * cw
    cy = (np.arange(ny) + 0.5) * ch

    for k, st in enumerate(stations):
        ix0 = max(0, int((st.x - st.radius) / cw) - 1)
        ix1 = min(nx, int((st.x + st.radius) / cw) + 2)
        iy0 = max(0, int((st.y - st.radius) / ch) - 1)
        iy1 = min(ny, int((st.y + st.radius) / ch) + 2)
        if ix0 >= ix1 or iy0 >= iy1:
            continue
        dx = cx[ix0:ix1] - st.x
        dy = cy[iy0:iy1] - st.y
        inside = (dy[:, None] ** 2 + dx[None, :] ** 2) <= st.radius**2
        word = np.uint64(1) << np.uint64(k % 64)
        bits[iy0:iy1, ix0:ix1, k // 64] |= np.where(inside, word, np.uint64(0))

    flat = bits.reshape(-1, words)
    covered_mask = flat.any(axis=1)
    covered = np.ascontiguousarray(flat[covered_mask])
    n_cov = int(covered_mask.sum())
    entries: dict[tuple[int, ...], float] = {}
    centroids: dict[tuple[int, ...], tuple[float, float]] = {}
    if n_cov:
        view = covered.view(f"V{8 * words}").ravel()
        _, first_idx, inverse, counts = np.unique(
            view, return_index=True, return_inverse=True, return_counts=True
        )
        gx, gy = np.meshgrid(cx, cy)
        px = gx.ravel()[covered_mask]
        py = gy.ravel()[covered_mask]
        sum_x = np.bincount(inverse, weights=px)
        sum_y = np.bincount(inverse, weights=py)
        for u, (idx, cnt) in enumerate(zip(first_idx, counts)):
            row = covered[idx]
            members = []
            for w in range(words):
                v = int(row[w])
                while v:
                    b = v & -v
                    members.append(stations[w * 64 + b.bit_length() - 1].id)
                    v ^= b
            key = tuple(sorted(members))
            entries[key] = float(cnt) * cell_area
            centroids[key] = (float(sum_x[u] / cnt), float(sum_y[u] / cnt))

    return RegionMap(
        entries=entries,
        centroids=centroids,
        resolution=grid_resolution,
        window=window,
        covered_cells=n_cov,
        cell_area=cell_area,
    )
