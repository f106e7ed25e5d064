import math

import numpy as np
import pytest

from cachefair import (
    Catalog,
    CrpInstance,
    NetworkInstance,
    RegionFile,
    SolverConfig,
    Station,
    UtilitySpec,
    Window,
    closest_available,
    fair,
    feasibility_residual,
    objective,
    unsplittable,
)
from cachefair.experiments import auto_alpha


def _geo_instance():
    """Two stations, one shared region-file with a centroid nearer station 1."""
    u = UtilitySpec(1.0, 1.0)
    inst = CrpInstance(
        station_ids=(0, 1),
        utilities={0: u, 1: u},
        region_files=[
            RegionFile(id=0, region_key=(0, 1), file=0, demand=2.0,
                       eligible=(0, 1), centroid=(0.62, 0.5)),
            RegionFile(id=1, region_key=(0,), file=1, demand=1.0,
                       eligible=(0,), centroid=(0.25, 0.5)),
        ],
    )
    net = NetworkInstance(
        window=Window(1.0, 1.0),
        stations=[
            Station(id=0, x=0.3, y=0.5, radius=0.4, cached_files=frozenset({0, 1})),
            Station(id=1, x=0.7, y=0.5, radius=0.4, cached_files=frozenset({0})),
        ],
        catalog=Catalog.zipf(2, 1.0),
    )
    return inst, net


class TestClosestAvailable:
    def test_assigns_to_nearest_eligible(self):
        inst, net = _geo_instance()
        y = closest_available(inst, net)
        assert y.get(1, 0) == 2.0  # centroid 0.62 closer to station at 0.7
        assert y.get(0, 0) == 0.0
        assert y.get(0, 1) == 1.0  # sole eligible
        assert feasibility_residual(inst, y) == 0.0

    def test_tie_breaks_to_lowest_id(self):
        u = UtilitySpec(1.0, 1.0)
        inst = CrpInstance(
            station_ids=(2, 5),
            utilities={2: u, 5: u},
            region_files=[RegionFile(id=0, region_key=(2, 5), file=0, demand=1.0,
                                     eligible=(2, 5), centroid=(0.5, 0.5))],
        )
        net = NetworkInstance(
            window=Window(1.0, 1.0),
            stations=[
                Station(id=2, x=0.25, y=0.5, radius=0.5, cached_files=frozenset({0})),
                Station(id=5, x=0.75, y=0.5, radius=0.5, cached_files=frozenset({0})),
            ],
            catalog=Catalog.zipf(1, 1.0),
        )
        y = closest_available(inst, net)
        assert y.get(2, 0) == 1.0

    def test_missing_centroid_raises(self):
        u = UtilitySpec(1.0, 1.0)
        inst = CrpInstance(
            station_ids=(0,),
            utilities={0: u},
            region_files=[RegionFile(id=0, region_key=(0,), file=0, demand=1.0,
                                     eligible=(0,))],
        )
        _, net = _geo_instance()
        with pytest.raises(ValueError):
            closest_available(inst, net)

    def test_cell_granularity_conserves_demand(self, desk_network, desk_instance):
        y = closest_available(desk_instance, desk_network, granularity="cells",
                              grid_resolution=150.0)
        assert feasibility_residual(desk_instance, y) <= 1e-9
        assert all(v >= 0 for v in y.entries.values())

    def test_cell_granularity_matches_centroid_for_singletons(
            self, desk_network, desk_instance):
        yc = closest_available(desk_instance, desk_network)
        ycell = closest_available(desk_instance, desk_network, granularity="cells",
                                  grid_resolution=150.0)
        for q in desk_instance.region_files:
            if len(q.eligible) == 1:
                m = q.eligible[0]
                assert ycell.get(m, q.id) == pytest.approx(yc.get(m, q.id))

    def test_invalid_granularity(self, desk_network, desk_instance):
        with pytest.raises(ValueError):
            closest_available(desk_instance, desk_network, granularity="bogus")
        with pytest.raises(ValueError):
            closest_available(desk_instance, desk_network, granularity="cells")


class TestUnsplittable:
    def test_whole_demand_to_one_station(self, desk_instance):
        y = unsplittable(desk_instance, seed=9)
        for q in desk_instance.region_files:
            nonzero = [m for m in q.eligible if y.get(m, q.id) > 0]
            assert len(nonzero) == 1
            assert y.get(nonzero[0], q.id) == q.demand

    def test_deterministic_per_seed(self, desk_instance):
        assert unsplittable(desk_instance, 4).entries == \
            unsplittable(desk_instance, 4).entries

    def test_uniform_choice_frequency(self):
        u = UtilitySpec(1.0, 1.0)
        inst = CrpInstance(
            station_ids=(0, 1),
            utilities={0: u, 1: u},
            region_files=[RegionFile(id=0, region_key=(0, 1), file=0, demand=1.0,
                                     eligible=(0, 1))],
        )
        picks = sum(unsplittable(inst, s).get(0, 0) > 0 for s in range(4000))
        assert abs(picks / 4000 - 0.5) < 0.025


class TestFair:
    def test_exactly_feasible(self, desk_instance):
        cfg = SolverConfig(alpha=auto_alpha(desk_instance), eps_inner=1e-7,
                           eps_outer=1e-6)
        y, report = fair(desk_instance, cfg)
        assert feasibility_residual(desk_instance, y) <= 1e-9
        assert report.converged

    def test_beats_baselines(self, desk_network, desk_instance):
        cfg = SolverConfig(alpha=auto_alpha(desk_instance), eps_inner=1e-8,
                           eps_outer=1e-7)
        y_fair, _ = fair(desk_instance, cfg)
        obj_fair = objective(desk_instance, y_fair)
        for other in (closest_available(desk_instance, desk_network),
                      unsplittable(desk_instance, 1)):
            assert obj_fair >= objective(desk_instance, other) - 1e-6

    def test_conserves_total_volume(self, desk_network, desk_instance):
        cfg = SolverConfig(alpha=auto_alpha(desk_instance))
        y_fair, _ = fair(desk_instance, cfg)
        total_fair = math.fsum(y_fair.entries.values())
        total_base = math.fsum(
            closest_available(desk_instance, desk_network).entries.values())
        assert abs(total_fair - total_base) <= 1e-9
