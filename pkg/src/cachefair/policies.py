"""Baseline association policies and the fair (optimal) policy wrapper."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .crp import CrpInstance, RoutingVector
from .netgen import NetworkInstance, Window
from .solver import SolveReport, SolverConfig, solve_crp

__all__ = ["PolicyKind", "closest_available", "unsplittable", "fair"]


class PolicyKind(Enum):
    FAIR = "fair"
    CLOSEST_AVAILABLE = "closest"
    UNSPLITTABLE = "unsplittable"


def closest_available(
    instance: CrpInstance,
    network: NetworkInstance,
    granularity: str = "centroid",
    grid_resolution: float | None = None,
) -> RoutingVector:
    """Assign each region-file's demand to the nearest eligible station.

    With ``granularity="centroid"`` (the default) distance is measured from
    the region's area centroid and the whole demand goes to one station, ties
    broken by lowest station id. With ``granularity="cells"`` the region's
    grid cells are assigned individually to their nearest eligible station
    and the demand is split by the resulting area fractions;
    ``grid_resolution`` must then be given (use the resolution the region map
    was built with).
    """
    positions = {s.id: (s.x, s.y) for s in network.stations}
    entries: dict[tuple[int, int], float] = {}
    if granularity == "centroid":
        for q in instance.region_files:
            if q.centroid is None:
                raise ValueError(f"region-file {q.id} has no centroid")
            cx, cy = q.centroid
            best = min(
                q.eligible,
                key=lambda m: ((positions[m][0] - cx) ** 2
                               + (positions[m][1] - cy) ** 2, m),
            )
            entries[(best, q.id)] = entries.get((best, q.id), 0.0) + q.demand
        return RoutingVector(entries)
    if granularity != "cells":
        raise ValueError("granularity must be 'centroid' or 'cells'")
    if grid_resolution is None:
        raise ValueError("grid_resolution is required for cell granularity")

    fractions = _cell_fractions(instance, network, grid_resolution)
    for q in instance.region_files:
        for m, frac in fractions[q.id].items():
            entries[(m, q.id)] = q.demand * frac
    return RoutingVector(entries)


def _cell_fractions(instance, network, resolution):
    """Per region-file, the area fraction nearest to each eligible station."""
    window: Window = network.window
    stations = network.stations
    nx = max(1, int(round(window.width * resolution)))
    ny = max(1, int(round(window.height * resolution)))
    cw, ch = window.width / nx, window.height / ny
    gx, gy = np.meshgrid((np.arange(nx) + 0.5) * cw, (np.arange(ny) + 0.5) * ch)
    gx, gy = gx.ravel(), gy.ravel()

    # recover the cell -> region-key labelling the region map was built from
    covered = np.empty((gx.size, len(stations)), dtype=bool)
    for k, s in enumerate(stations):
        covered[:, k] = ((gx - s.x) ** 2 + (gy - s.y) ** 2) <= s.radius**2

    packed = np.packbits(covered, axis=1)
    rows = packed.view([("", packed.dtype)] * packed.shape[1]).ravel()
    _, inverse = np.unique(rows, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(inverse.max() + 2))
    by_key: dict[tuple[int, ...], np.ndarray] = {}
    for g in range(bounds.size - 1):
        cells = order[bounds[g]:bounds[g + 1]]
        if cells.size == 0:
            continue
        members = np.nonzero(covered[cells[0]])[0]
        if members.size:
            key = tuple(sorted(stations[k].id for k in members))
            by_key[key] = cells

    positions = {s.id: (s.x, s.y) for s in stations}
    out: dict[int, dict[int, float]] = {}
    for q in instance.region_files:
        cells = by_key.get(q.region_key)
        shares: dict[int, float] = {}
        if cells is None or cells.size == 0:
            shares[min(q.eligible)] = 1.0
        else:
            elig = sorted(q.eligible)
            px = np.array([positions[m][0] for m in elig])
            py = np.array([positions[m][1] for m in elig])
            dists = ((gx[cells, None] - px[None, :]) ** 2
                     + (gy[cells, None] - py[None, :]) ** 2)
            nearest = np.argmin(dists, axis=1)  # ties -> first, i.e. lowest id
            counts = np.bincount(nearest, minlength=len(elig))
            for m, c in zip(elig, counts):
                if c:
                    shares[m] = c / cells.size
        out[q.id] = shares
    return out


def unsplittable(instance: CrpInstance, seed: int) -> RoutingVector:
    """Assign each region-file entirely to one uniformly drawn eligible station."""
    rng = np.random.default_rng(seed)
    entries = {}
    for q in sorted(instance.region_files, key=lambda q: q.id):
        elig = sorted(q.eligible)
        pick = elig[rng.integers(len(elig))]
        entries[(pick, q.id)] = q.demand
    return RoutingVector(entries)


def fair(
    instance: CrpInstance, cfg: SolverConfig | None = None
) -> tuple[RoutingVector, SolveReport]:
    """Proportionally fair routing via the full solver.

    The solver's final iterate carries a residual at the stopping-tolerance
    scale; each region-file's allocation is rescaled onto its constraint so
    the returned routing is exactly feasible and conserves total volume
    against the baseline policies.
    """
    report = solve_crp(instance, cfg)
    entries = dict(report.routing.entries)
    for q in instance.region_files:
        served = sum(entries.get((m, q.id), 0.0) for m in sorted(q.eligible))
        if served <= 0.0:
            entries[(min(q.eligible), q.id)] = q.demand
            continue
        scale = q.demand / served
        if scale != 1.0:
            for m in q.eligible:
                key = (m, q.id)
                if key in entries:
                    entries[key] *= scale
    return RoutingVector(entries), report
