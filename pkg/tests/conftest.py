import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from btmpc.battery import BatteryParams, OcvMap, ResistanceMap, large_pack_params

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def flat_maps():
    """Pack with U_oc = 360 V and R = 0.15 ohm everywhere, a_c = -0.5, C = 1e5 J/K."""
    return large_pack_params(
        ocv_map=OcvMap(v0=360.0, slope=0.0),
        resistance_map=ResistanceMap(r0=0.15, soc_coef=0.0, temp_coef=0.0),
    )


@pytest.fixture
def params():
    return BatteryParams()


def smaller_root(p, u, r):
    """Independent route: numpy polynomial roots of R I^2 - U I + P = 0."""
    roots = np.roots([r, -u, p])
    roots = roots[np.isreal(roots)].real
    return float(np.min(roots))
