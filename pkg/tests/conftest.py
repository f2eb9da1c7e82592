import numpy as np
import pytest

from stppwatch.events import Domain
from stppwatch.regions import RegionUnion
from stppwatch.simulate import ChangeScenario, HawkesParams


@pytest.fixture
def unit_domain():
    return Domain(t_end=1.0, s_bounds=(0.0, 0.0, 1.0, 1.0))


@pytest.fixture
def square_omega():
    return RegionUnion(boxes=[[0.4, 0.4, 0.6, 0.6]])


def make_benchmark_scenario(alpha=0.0, mu0=100.0, mu1=1000.0, tau=0.5,
                            omega_boxes=((0.4, 0.4, 0.6, 0.6),), t_end=1.0):
    """The synthetic study configuration: unit box, change at tau inside a
    small region, tenfold base-rate increase."""
    domain = Domain(t_end=t_end, s_bounds=(0.0, 0.0, 1.0, 1.0))
    pre = HawkesParams(mu=mu0, alpha=alpha, beta=0.1, spatial_sigma=0.02)
    post = HawkesParams(mu=mu1, alpha=alpha, beta=0.1, spatial_sigma=0.02)
    return ChangeScenario(pre=pre, post=post, tau=tau,
                          omega=RegionUnion(boxes=list(omega_boxes)), domain=domain)
