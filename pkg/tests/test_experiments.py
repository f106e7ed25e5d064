import math

import numpy as np
import pytest

from cachefair import (
    CrpInstance,
    RegionFile,
    RoutingVector,
    ScenarioConfig,
    UtilitySpec,
    emit_csv,
    load_shares,
    run_single_tier,
    run_two_tier,
)
from cachefair.experiments import (
    MetricRow,
    _policy_routings,
    _run_seed,
    _single_tier_run,
    _solver_for,
    _worker_count,
    auto_alpha,
    read_csv,
)
from cachefair.netgen import mean_coverage

TINY_SINGLE = ScenarioConfig(kind="single-tier", runs=3, base_seed=1,
                             radii=(0.15,), grid_resolution=80.0)
TINY_TWO = ScenarioConfig(kind="two-tier", runs=2, base_seed=1,
                          ratios=(0.5,), grid_resolution=80.0)


class TestScenarioConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ScenarioConfig(runs=0)
        with pytest.raises(ValueError):
            ScenarioConfig(kind="bogus")
        with pytest.raises(ValueError):
            ScenarioConfig(radii=(0.1, -0.2))

    def test_defaults_match_reported_setup(self):
        cfg = ScenarioConfig()
        assert cfg.density == 8.0
        assert cfg.window.area == pytest.approx(6.25)
        assert cfg.file_count == 6
        assert cfg.zipf_s == 1.0
        assert cfg.large_radius == 0.1875
        assert cfg.small_radius == 0.0625


class TestLoadShares:
    def _inst(self):
        u = UtilitySpec(1.0, 1.0)
        return CrpInstance(
            station_ids=(0, 1),
            utilities={0: u, 1: u},
            region_files=[RegionFile(id=0, region_key=(0, 1), file=0, demand=4.0,
                                     eligible=(0, 1))],
        )

    def test_simple_shares(self):
        shares = load_shares(self._inst(), RoutingVector({(0, 0): 3.0, (1, 0): 1.0}))
        assert shares == pytest.approx({0: 0.75, 1: 0.25})
        assert math.fsum(shares.values()) == pytest.approx(1.0, abs=1e-12)

    def test_zero_traffic_is_degenerate(self, caplog):
        shares = load_shares(self._inst(), RoutingVector())
        assert shares == {}


class TestSeedsAndWorkers:
    def test_run_seed_deterministic_and_distinct(self):
        assert _run_seed(1, 0, 0) == _run_seed(1, 0, 0)
        seeds = {_run_seed(1, run, stream) for run in range(20) for stream in range(5)}
        assert len(seeds) == 100

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.delenv("CACHEFAIR_THREADS", raising=False)
        assert _worker_count() == 1
        monkeypatch.setenv("CACHEFAIR_THREADS", "4")
        assert _worker_count() == 4
        monkeypatch.setenv("CACHEFAIR_THREADS", "0")
        assert _worker_count() == 1


class TestAutoAlpha:
    def test_shrinks_with_eligible_set_size(self):
        u = UtilitySpec(1.0, 1.0)
        inst = CrpInstance(
            station_ids=tuple(range(7)),
            utilities={m: u for m in range(7)},
            region_files=[RegionFile(id=0, region_key=tuple(range(7)), file=0,
                                     demand=1.0, eligible=tuple(range(7)))],
        )
        assert auto_alpha(inst) == pytest.approx(1.75 / 7)

    def test_capped_at_default(self):
        u = UtilitySpec(1.0, 1.0)
        inst = CrpInstance(
            station_ids=(0,),
            utilities={0: u},
            region_files=[RegionFile(id=0, region_key=(0,), file=0, demand=1.0,
                                     eligible=(0,))],
        )
        assert auto_alpha(inst) == 0.5

    def test_solver_for_prefers_explicit_config(self):
        u = UtilitySpec(1.0, 1.0)
        inst = CrpInstance(station_ids=(0,), utilities={0: u}, region_files=[])
        from cachefair import SolverConfig

        custom = SolverConfig(rho=3.0)
        cfg = ScenarioConfig(solver=custom)
        assert _solver_for(inst, cfg) is custom
        assert _solver_for(inst, ScenarioConfig(kind="two-tier")).rho == 10.0
        assert _solver_for(inst, ScenarioConfig(kind="single-tier")).rho == 1.0


class TestSingleTier:
    def test_rows_structure_and_sweep_axis(self):
        rows = run_single_tier(TINY_SINGLE)
        assert len(rows) == 3  # one radius x three policies
        assert {r.policy for r in rows} == {"fair", "closest", "unsplittable"}
        for r in rows:
            assert r.sweep == pytest.approx(mean_coverage(8.0, 0.15))
            assert 0.0 <= r.means["min_share"] <= r.means["max_share"] <= 1.0
            assert r.runs <= TINY_SINGLE.runs

    def test_kind_mismatch(self):
        with pytest.raises(ValueError):
            run_single_tier(TINY_TWO)
        with pytest.raises(ValueError):
            run_two_tier(TINY_SINGLE)

    def test_aggregation_matches_naive_recomputation(self):
        rows = run_single_tier(TINY_SINGLE)
        per_run = [_single_tier_run(TINY_SINGLE, 0.15, i)
                   for i in range(TINY_SINGLE.runs)]
        valid = [r for r in per_run if r is not None]
        for row in rows:
            for metric in ("max_share", "min_share"):
                vals = [r[row.policy][metric] for r in valid]
                assert row.means[metric] == pytest.approx(np.mean(vals))
                expected_se = (np.std(vals, ddof=1) / math.sqrt(len(vals))
                               if len(vals) > 1 else 0.0)
                assert row.stderrs[metric] == pytest.approx(expected_se)

    def test_parallel_equals_serial(self, monkeypatch):
        serial = run_single_tier(TINY_SINGLE)
        monkeypatch.setenv("CACHEFAIR_THREADS", "2")
        parallel = run_single_tier(TINY_SINGLE)
        assert serial == parallel


class TestTwoTier:
    def test_rows_structure(self):
        rows = run_two_tier(TINY_TWO)
        assert len(rows) == 3
        for r in rows:
            assert r.sweep == 0.5
            assert 0.0 <= r.means["large_share"] <= 1.0
            assert r.means["small_min_share"] <= r.means["small_max_share"]


class TestConservationGuard:
    def test_policies_route_equal_totals(self):
        from tests_helpers import build_run_instance

        instance, network = build_run_instance(TINY_SINGLE, 0.2, 0)
        routings, _ = _policy_routings(
            instance, network, TINY_SINGLE, [_run_seed(1, 0, 2), _run_seed(1, 0, 3)])
        flat = [routings["fair"], routings["closest"], *routings["unsplittable"]]
        totals = [math.fsum(r.entries.values()) for r in flat]
        assert max(totals) - min(totals) <= 1e-9


class TestCsv:
    def test_round_trip(self, tmp_path):
        rows = run_single_tier(TINY_SINGLE)
        path = tmp_path / "out.csv"
        emit_csv(rows, path)
        header = path.read_text().splitlines()[0]
        assert header == "sweep,policy,metric,mean,stderr,runs"
        back = read_csv(path)
        key = lambda r: (r.sweep, r.policy)
        for orig, parsed in zip(sorted(rows, key=key), sorted(back, key=key)):
            assert parsed.policy == orig.policy
            for metric in orig.means:
                assert parsed.means[metric] == pytest.approx(orig.means[metric],
                                                             rel=1e-10)

    def test_rejects_empty(self, tmp_path):
        with pytest.raises(ValueError):
            emit_csv([], tmp_path / "out.csv")

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(run_single_tier(TINY_SINGLE), a)
        emit_csv(run_single_tier(TINY_SINGLE), b)
        assert a.read_bytes() == b.read_bytes()
