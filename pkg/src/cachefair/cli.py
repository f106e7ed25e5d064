"""Command line interface: network generation, solving, and experiment sweeps."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from .crp import CrpInstance, build_instance
from .experiments import (
    SINGLE_TIER_RADII,
    TWO_TIER_RATIOS,
    ScenarioConfig,
    emit_csv,
    run_single_tier,
    run_two_tier,
)
from .figures import emit_svg
from .netgen import Catalog, NetworkInstance, Station, Tier, Window, extract_regions, sample_ppp
from .policies import closest_available, fair, unsplittable
from .solver import SolverConfig, solve_crp
from .agents import run_distributed


@click.group()
def main():
    """Fair cache-related traffic association for cellular networks."""


def _solver_options(fn):
    fn = click.option("--rho", default=1.0, show_default=True)(fn)
    fn = click.option("--alpha", default=0.5, show_default=True)(fn)
    fn = click.option("--eps-inner", default=1e-6, show_default=True)(fn)
    fn = click.option("--eps-outer", default=1e-6, show_default=True)(fn)
    fn = click.option("--max-inner", default=500, show_default=True)(fn)
    fn = click.option("--max-outer", default=1000, show_default=True)(fn)
    return fn


@main.command()
@click.option("--density", default=8.0, show_default=True, help="stations per km^2")
@click.option("--radius", default=0.25, show_default=True, help="coverage radius (km)")
@click.option("--width", default=2.5, show_default=True)
@click.option("--height", default=2.5, show_default=True)
@click.option("--files", default=6, show_default=True)
@click.option("--zipf-s", default=1.0, show_default=True)
@click.option("--cache-size", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--instance-out", type=click.Path(dir_okay=False), default=None,
              help="also build regions and write the routing instance JSON")
@click.option("--user-density", default=100.0, show_default=True)
@click.option("--grid-resolution", default=400.0, show_default=True)
def gen(density, radius, width, height, files, zipf_s, cache_size, seed, out,
        instance_out, user_density, grid_resolution):
    """Generate a random single-tier network and write it as JSON."""
    window = Window(width, height)
    pts = sample_ppp(density, window, seed)
    rng = np.random.default_rng(seed + 1)
    catalog = Catalog.zipf(files, zipf_s)
    stations = [
        Station(id=i, x=float(x), y=float(y), radius=radius, tier=Tier.SINGLE_TIER,
                cached_files=frozenset(
                    int(f) for f in rng.choice(files, size=cache_size, replace=False)))
        for i, (x, y) in enumerate(pts)
    ]
    network = NetworkInstance(window=window, stations=stations, catalog=catalog)
    Path(out).write_text(network.to_json() + "\n")
    click.echo(f"wrote {out} ({len(stations)} stations)")
    if instance_out:
        regions = extract_regions(stations, window, grid_resolution)
        instance = build_instance(network, regions, user_density)
        Path(instance_out).write_text(instance.to_json() + "\n")
        click.echo(
            f"wrote {instance_out} ({len(instance.region_files)} region-files, "
            f"grid resolution {grid_resolution} cells/km)"
        )


@main.command()
@click.argument("instance_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["centralized", "distributed"]),
              default="centralized", show_default=True)
@click.option("--policy", type=click.Choice(["fair", "closest", "unsplittable"]),
              default="fair", show_default=True)
@click.option("--seed", default=0, show_default=True,
              help="seed for the unsplittable policy")
@click.option("--network", "network_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="network JSON (required for --policy closest)")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--trace", type=click.Path(dir_okay=False), default=None,
              help="JSON-lines message trace (distributed mode)")
@_solver_options
def solve(instance_path, mode, policy, seed, network_path, out, trace,
          rho, alpha, eps_inner, eps_outer, max_inner, max_outer):
    """Solve a routing instance JSON and write the report JSON."""
    instance = CrpInstance.from_json(Path(instance_path).read_text())
    cfg = SolverConfig(rho=rho, alpha=alpha, eps_inner=eps_inner,
                       eps_outer=eps_outer, max_inner=max_inner, max_outer=max_outer)
    import json

    if policy == "fair":
        if mode == "distributed":
            trace_fh = open(trace, "w") if trace else None
            try:
                report, stats = run_distributed(instance, cfg, trace=trace_fh)
            finally:
                if trace_fh:
                    trace_fh.close()
            doc = json.loads(report.to_json())
            doc["messages"] = {"by_kind": stats.by_kind, "rounds": len(stats.per_round)}
            Path(out).write_text(json.dumps(doc, sort_keys=True) + "\n")
        else:
            routing, report = fair(instance, cfg)
            doc = json.loads(report.to_json())
            doc["routing"] = routing.to_triplets()
            Path(out).write_text(json.dumps(doc, sort_keys=True) + "\n")
        click.echo(f"wrote {out}")
        return

    if policy == "closest":
        if network_path is None:
            raise click.UsageError("--policy closest requires --network")
        network = NetworkInstance.from_json(Path(network_path).read_text())
        routing = closest_available(instance, network)
    else:
        routing = unsplittable(instance, seed)
    doc = {"policy": policy, "routing": routing.to_triplets()}
    Path(out).write_text(json.dumps(doc, sort_keys=True) + "\n")
    click.echo(f"wrote {out}")


@main.group()
def experiment():
    """Monte-Carlo experiment sweeps with CSV and SVG output."""


def _experiment_options(fn):
    fn = click.option("--runs", default=100, show_default=True)(fn)
    fn = click.option("--seed", default=1, show_default=True)(fn)
    fn = click.option("--density", default=8.0, show_default=True)(fn)
    fn = click.option("--user-density", default=30.0, show_default=True)(fn)
    fn = click.option("--grid-resolution", default=200.0, show_default=True)(fn)
    fn = click.option("--demand-model",
                      type=click.Choice(["auto", "poisson", "expected"]),
                      default="auto", show_default=True,
                      help="per-run demand: Poisson user counts or their means")(fn)
    fn = click.option("--out-dir", type=click.Path(file_okay=False), default=".",
                      show_default=True)(fn)
    return fn


@experiment.command("single-tier")
@_experiment_options
@click.option("--radii", default=",".join(str(r) for r in SINGLE_TIER_RADII),
              show_default=True, help="comma-separated radius sweep (km)")
@click.option("--cache-size", default=2, show_default=True)
def experiment_single_tier(runs, seed, density, user_density, grid_resolution,
                           demand_model, out_dir, radii, cache_size):
    """Reproduce the single-tier min/max load-share sweep."""
    cfg = ScenarioConfig(
        kind="single-tier",
        runs=runs,
        base_seed=seed,
        density=density,
        user_density=user_density,
        grid_resolution=grid_resolution,
        demand_model=demand_model,
        radii=tuple(float(r) for r in radii.split(",")),
        cache_size=cache_size,
    )
    rows = run_single_tier(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "single_tier.csv"
    emit_csv(rows, csv_path)
    paths = emit_svg(rows, out, "single-tier")
    click.echo(f"wrote {csv_path} and {', '.join(str(p) for p in paths)}")


@experiment.command("two-tier")
@_experiment_options
@click.option("--ratios", default=",".join(str(r) for r in TWO_TIER_RATIOS),
              show_default=True, help="comma-separated small:large ratio sweep")
def experiment_two_tier(runs, seed, density, user_density, grid_resolution,
                        demand_model, out_dir, ratios):
    """Reproduce the two-tier offloading sweep."""
    cfg = ScenarioConfig(
        kind="two-tier",
        runs=runs,
        base_seed=seed,
        density=density,
        user_density=user_density,
        grid_resolution=grid_resolution,
        demand_model=demand_model,
        ratios=tuple(float(r) for r in ratios.split(",")),
    )
    rows = run_two_tier(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "two_tier.csv"
    emit_csv(rows, csv_path)
    paths = emit_svg(rows, out, "two-tier")
    click.echo(f"wrote {csv_path} and {', '.join(str(p) for p in paths)}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
