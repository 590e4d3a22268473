import math

import pytest

from rsrc.geometry import GeometryConfig, build_geometry

KS = (math.pi / 30.0, math.pi, 60.5 * math.pi, 84.5 * math.pi)


@pytest.fixture(scope="session")
def policy_geoms():
    """Default-policy geometries (a=1, tau=6, m=10) with 40 points per arc."""
    cfg = GeometryConfig(1.0, 6.0, 10, 40)
    return [build_geometry(cfg, k) for k in KS]
