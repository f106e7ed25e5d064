"""Monte-Carlo experiment runners, metrics, aggregation and CSV emission."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .crp import CrpInstance, RegionFile, RoutingVector, build_instance
from .netgen import (
    Catalog,
    NetworkInstance,
    Station,
    Tier,
    Window,
    extract_regions,
    mean_coverage,
    sample_ppp,
)
from .policies import closest_available, fair, unsplittable
from .solver import SolverConfig

logger = logging.getLogger(__name__)

__all__ = [
    "ScenarioConfig",
    "MetricRow",
    "load_shares",
    "run_single_tier",
    "run_two_tier",
    "emit_csv",
    "read_csv",
    "auto_alpha",
]

#: total-volume agreement required between policies in every run
CONSERVATION_TOL = 1e-9

SINGLE_TIER_RADII = (0.0625, 0.125, 0.1875, 0.25, 0.3125, 0.375, 0.4375, 0.5)
TWO_TIER_RATIOS = (0.5, 1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "single-tier"  # or "two-tier"
    runs: int = 100
    base_seed: int = 1
    density: float = 8.0  # stations/km^2 (the large tier, for two-tier scenarios)
    window: Window = field(default_factory=lambda: Window(2.5, 2.5))
    file_count: int = 6
    zipf_s: float = 1.0
    cache_size: int = 2  # files per cache in single-tier runs
    radii: tuple[float, ...] = SINGLE_TIER_RADII
    ratios: tuple[float, ...] = TWO_TIER_RATIOS
    large_radius: float = 0.1875
    small_radius: float = 0.0625
    user_density: float = 30.0
    grid_resolution: float = 200.0
    demand_model: str = "auto"  # "poisson", "expected", or per-kind "auto"
    unsplittable_draws: int = 1  # lottery draws averaged per run (variance reduction)
    solver: SolverConfig | None = None  # None: defaults with instance-adapted alpha

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.kind not in ("single-tier", "two-tier"):
            raise ValueError("kind must be 'single-tier' or 'two-tier'")
        if self.demand_model not in ("auto", "poisson", "expected"):
            raise ValueError("demand_model must be 'auto', 'poisson' or 'expected'")
        if self.unsplittable_draws < 1:
            raise ValueError("unsplittable_draws must be >= 1")
        if any(v <= 0 for v in (*self.radii, *self.ratios)):
            raise ValueError("sweep values must be positive")

    def resolved_demand_model(self) -> str:
        """Per-run demand realization.

        Single-tier runs compare policies on a realized finite user
        population (per-region-file Poisson counts), which is where the
        whole-group lottery of the unsplittable policy hurts. Two-tier runs
        evaluate expected offload between the tiers, where per-user sampling
        noise would swamp the small stations' min/max statistics.
        """
        if self.demand_model != "auto":
            return self.demand_model
        return "poisson" if self.kind == "single-tier" else "expected"


@dataclass
class MetricRow:
    sweep: float
    policy: str
    runs: int
    means: dict[str, float]
    stderrs: dict[str, float]


def auto_alpha(instance: CrpInstance) -> float:
    """Jacobi relaxation that keeps the inner loop contractive.

    The penalty couples every pair of stations sharing a region-file, so the
    relaxation must shrink with the largest eligible-set size.
    """
    kmax = max((len(q.eligible) for q in instance.region_files), default=1)
    return min(0.5, 1.75 / kmax)


def _solver_for(instance: CrpInstance, cfg: ScenarioConfig) -> SolverConfig:
    if cfg.solver is not None:
        return cfg.solver
    # Two-tier demands are tiny (small-disc areas), which makes the dual
    # gradient shallow; a larger penalty keeps the price updates effective.
    rho = 10.0 if cfg.kind == "two-tier" else 1.0
    return SolverConfig(rho=rho, alpha=auto_alpha(instance),
                        eps_inner=1e-5, eps_outer=1e-5, max_inner=100)


def load_shares(instance: CrpInstance, y: RoutingVector) -> dict[int, float]:
    """Per-station share of total routed volume; empty on a degenerate routing."""
    vols = {m: 0.0 for m in instance.station_ids}
    for (m, _), v in y.entries.items():
        vols[m] += v
    total = math.fsum(vols.values())
    if total <= 0.0:
        logger.warning("zero total routed traffic; run excluded from aggregation")
        return {}
    return {m: v / total for m, v in vols.items()}


def _run_seed(base_seed: int, run_index: int, stream: int) -> int:
    return int(np.random.SeedSequence((base_seed + run_index, stream)).generate_state(1)[0])


def _realize_demand(instance: CrpInstance, cfg: ScenarioConfig, seed: int):
    """Draw the run's demand: Poisson user counts per region-file, or the means.

    Uniformly distributed users form a Poisson process, so the number
    requesting file f inside a region is Poisson with the region-file's
    expected demand as its mean. Region-files without users drop out; returns
    None when the whole run is empty.
    """
    if cfg.resolved_demand_model() == "expected":
        return instance
    rng = np.random.default_rng(seed)
    realized = []
    for q in instance.region_files:
        n = int(rng.poisson(q.demand))
        if n > 0:
            realized.append(RegionFile(id=q.id, region_key=q.region_key,
                                       file=q.file, demand=float(n),
                                       eligible=q.eligible, centroid=q.centroid))
    if not realized:
        return None
    return CrpInstance(station_ids=instance.station_ids,
                       utilities=instance.utilities, region_files=realized)


def _unsplittable_seed(base_seed: int, run_index: int, draw: int) -> int:
    return int(np.random.SeedSequence(
        (base_seed + run_index, 2, draw)).generate_state(1)[0])


def _policy_routings(instance, network, cfg: ScenarioConfig, unsplit_seeds):
    """All policy routings for one run; unsplittable once per draw seed."""
    solver_cfg = _solver_for(instance, cfg)
    routing_fair, report = fair(instance, solver_cfg)
    if cfg.kind == "single-tier":
        # users are individually routed to their nearest station, so split
        # each region-file by the area fractions closest to each candidate
        routing_closest = closest_available(instance, network,
                                            granularity="cells",
                                            grid_resolution=cfg.grid_resolution)
    else:
        routing_closest = closest_available(instance, network)
    routings = {
        "fair": routing_fair,
        "closest": routing_closest,
        "unsplittable": [unsplittable(instance, s) for s in unsplit_seeds],
    }
    totals = {
        "fair": math.fsum(routing_fair.entries.values()),
        "closest": math.fsum(routing_closest.entries.values()),
        **{f"unsplittable[{i}]": math.fsum(r.entries.values())
           for i, r in enumerate(routings["unsplittable"])},
    }
    spread = max(totals.values()) - min(totals.values())
    if spread > CONSERVATION_TOL:
        raise RuntimeError(f"policy volume conservation violated: {totals}")
    return routings, report


def _policy_metrics(instance, routings, metric_fn):
    """Per-policy metrics; the unsplittable draws are averaged.

    ``metric_fn`` maps a share map to a metric dict; returns None when any
    routing degenerates to zero total volume.
    """
    out = {}
    for name in ("fair", "closest"):
        shares = load_shares(instance, routings[name])
        if not shares:
            return None
        out[name] = metric_fn(shares)
    draws = []
    for routing in routings["unsplittable"]:
        shares = load_shares(instance, routing)
        if not shares:
            return None
        draws.append(metric_fn(shares))
    out["unsplittable"] = {
        k: math.fsum(d[k] for d in draws) / len(draws) for k in draws[0]
    }
    return out


def _single_tier_run(cfg: ScenarioConfig, radius: float, run_index: int):
    """One Monte-Carlo draw: returns {policy: {metric: value}} or None if degenerate."""
    pts = sample_ppp(cfg.density, cfg.window, _run_seed(cfg.base_seed, run_index, 0))
    if pts.shape[0] == 0:
        return None
    cache_rng = np.random.default_rng(_run_seed(cfg.base_seed, run_index, 1))
    catalog = Catalog.zipf(cfg.file_count, cfg.zipf_s)
    stations = [
        Station(
            id=i,
            x=float(x),
            y=float(y),
            radius=radius,
            tier=Tier.SINGLE_TIER,
            cached_files=frozenset(
                int(f) for f in cache_rng.choice(cfg.file_count, size=cfg.cache_size,
                                                 replace=False)
            ),
        )
        for i, (x, y) in enumerate(pts)
    ]
    network = NetworkInstance(window=cfg.window, stations=stations, catalog=catalog)
    regions = extract_regions(stations, cfg.window, cfg.grid_resolution)
    instance = build_instance(network, regions, cfg.user_density)
    if not instance.region_files:
        return None
    instance = _realize_demand(instance, cfg, _run_seed(cfg.base_seed, run_index, 4))
    if instance is None:
        return None
    seeds = [_unsplittable_seed(cfg.base_seed, run_index, d)
             for d in range(cfg.unsplittable_draws)]
    routings, _ = _policy_routings(instance, network, cfg, seeds)

    def metrics(shares):
        vals = list(shares.values())
        return {"max_share": max(vals), "min_share": min(vals)}

    return _policy_metrics(instance, routings, metrics)


def _two_tier_run(cfg: ScenarioConfig, ratio: float, run_index: int):
    large_pts = sample_ppp(cfg.density, cfg.window,
                               _run_seed(cfg.base_seed, run_index, 0))
    small_pts = sample_ppp(cfg.density * ratio, cfg.window,
                               _run_seed(cfg.base_seed, run_index, 3))
    if large_pts.shape[0] == 0 or small_pts.shape[0] == 0:
        return None
    catalog = Catalog.zipf(cfg.file_count, cfg.zipf_s)
    rng = np.random.default_rng(_run_seed(cfg.base_seed, run_index, 1))
    stations = [
        Station(id=i, x=float(x), y=float(y), radius=cfg.large_radius,
                tier=Tier.LARGE, cached_files=frozenset({0, 1}))
        for i, (x, y) in enumerate(large_pts)
    ]
    offset = len(stations)
    stations += [
        Station(id=offset + i, x=float(x), y=float(y), radius=cfg.small_radius,
                tier=Tier.SMALL, cached_files=frozenset({int(rng.integers(2))}))
        for i, (x, y) in enumerate(small_pts)
    ]
    network = NetworkInstance(window=cfg.window, stations=stations, catalog=catalog)
    regions = extract_regions(stations, cfg.window, cfg.grid_resolution)
    instance = build_instance(network, regions, cfg.user_density)
    if not instance.region_files:
        return None
    instance = _realize_demand(instance, cfg, _run_seed(cfg.base_seed, run_index, 4))
    if instance is None:
        return None
    seeds = [_unsplittable_seed(cfg.base_seed, run_index, d)
             for d in range(cfg.unsplittable_draws)]
    routings, _ = _policy_routings(instance, network, cfg, seeds)
    large_ids = sorted(s.id for s in stations if s.tier is Tier.LARGE)
    small_ids = sorted(s.id for s in stations if s.tier is Tier.SMALL)

    def metrics(shares):
        small_vals = [shares[m] for m in small_ids]
        return {
            "large_share": math.fsum(shares[m] for m in large_ids),
            "small_max_share": max(small_vals),
            "small_min_share": min(small_vals),
        }

    return _policy_metrics(instance, routings, metrics)


def _worker_count() -> int:
    env = os.environ.get("CACHEFAIR_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return 1


def _map_runs(fn, payloads):
    workers = _worker_count()
    if workers == 1:
        return [fn(*p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, [(fn, p) for p in payloads]))


def _call(item):
    fn, payload = item
    return fn(*payload)


def _aggregate(sweep_value, per_run_results, metric_names) -> list[MetricRow]:
    rows = []
    valid = [r for r in per_run_results if r is not None]
    skipped = len(per_run_results) - len(valid)
    if skipped:
        logger.info("sweep %.6g: skipped %d degenerate runs", sweep_value, skipped)
    for policy in ("fair", "closest", "unsplittable"):
        means = {}
        stderrs = {}
        for metric in metric_names:
            vals = np.array([r[policy][metric] for r in valid])
            means[metric] = float(vals.mean()) if vals.size else float("nan")
            stderrs[metric] = (
                float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
            )
        rows.append(MetricRow(sweep=sweep_value, policy=policy, runs=len(valid),
                              means=means, stderrs=stderrs))
    return rows


def run_single_tier(cfg: ScenarioConfig) -> list[MetricRow]:
    """Sweep coverage radii; x-values are reported as mean coverage numbers."""
    if cfg.kind != "single-tier":
        raise ValueError("config kind must be 'single-tier'")
    rows = []
    for radius in cfg.radii:
        payloads = [(cfg, radius, i) for i in range(cfg.runs)]
        results = _map_runs(_single_tier_run, payloads)
        sweep = mean_coverage(cfg.density, radius)
        rows.extend(_aggregate(sweep, results, ("max_share", "min_share")))
    return rows


def run_two_tier(cfg: ScenarioConfig) -> list[MetricRow]:
    """Sweep the small:large station-count ratio."""
    if cfg.kind != "two-tier":
        raise ValueError("config kind must be 'two-tier'")
    rows = []
    for ratio in cfg.ratios:
        payloads = [(cfg, ratio, i) for i in range(cfg.runs)]
        results = _map_runs(_two_tier_run, payloads)
        rows.extend(
            _aggregate(ratio, results,
                       ("large_share", "small_max_share", "small_min_share"))
        )
    return rows


def emit_csv(rows: list[MetricRow], path) -> None:
    """Write rows in long format: sweep,policy,metric,mean,stderr,runs."""
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep", "policy", "metric", "mean", "stderr", "runs"])
        for row in rows:
            for metric in sorted(row.means):
                writer.writerow([
                    f"{row.sweep:.12g}",
                    row.policy,
                    metric,
                    f"{row.means[metric]:.12g}",
                    f"{row.stderrs[metric]:.12g}",
                    row.runs,
                ])


def read_csv(path) -> list[MetricRow]:
    """Inverse of :func:`emit_csv` (round-trips the formatted values)."""
    grouped: dict[tuple[float, str], MetricRow] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            key = (float(rec["sweep"]), rec["policy"])
            row = grouped.get(key)
            if row is None:
                row = MetricRow(sweep=key[0], policy=key[1], runs=int(rec["runs"]),
                                means={}, stderrs={})
                grouped[key] = row
            row.means[rec["metric"]] = float(rec["mean"])
            row.stderrs[rec["metric"]] = float(rec["stderr"])
    return list(grouped.values())
