import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cachefair import (
    Catalog,
    CrpInstance,
    NetworkInstance,
    RegionFile,
    Station,
    Tier,
    UtilitySpec,
    Window,
    build_instance,
    extract_regions,
    sample_ppp,
)


@pytest.fixture
def tiny_instance():
    """Two stations sharing one region-file plus a private one each."""
    return CrpInstance(
        station_ids=(0, 1),
        utilities={0: UtilitySpec(1.0, 1.0), 1: UtilitySpec(1.0, 1.0)},
        region_files=[
            RegionFile(id=0, region_key=(0, 1), file=0, demand=2.0, eligible=(0, 1)),
            RegionFile(id=1, region_key=(0,), file=1, demand=1.0, eligible=(0,)),
            RegionFile(id=2, region_key=(1,), file=1, demand=0.5, eligible=(1,)),
        ],
    )


def small_network(seed=3, density=6.0, radius=0.35, window=Window(1.5, 1.5),
                  files=4, cache=2):
    pts = sample_ppp(density, window, seed)
    rng = np.random.default_rng(seed + 1)
    catalog = Catalog.zipf(files, 1.0)
    stations = [
        Station(id=i, x=float(x), y=float(y), radius=radius, tier=Tier.SINGLE_TIER,
                cached_files=frozenset(
                    int(f) for f in rng.choice(files, size=cache, replace=False)))
        for i, (x, y) in enumerate(pts)
    ]
    return NetworkInstance(window=window, stations=stations, catalog=catalog)


@pytest.fixture
def desk_network():
    net = small_network()
    assert net.stations, "seed must produce a nonempty network"
    return net


@pytest.fixture
def desk_instance(desk_network):
    regions = extract_regions(desk_network.stations, desk_network.window, 150.0)
    inst = build_instance(desk_network, regions, user_density=100.0)
    assert inst.region_files
    return inst
