import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dtn_lab.fields import Domain, OperatorSpec
from dtn_lab.recipes import build_spec

settings.register_profile("dtn", max_examples=100, deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dtn")


def random_spec(n: int, seed: int, metric_amp=0.3, mag_amp=1.0, el_amp=2.0, gamma0=(0.0, 1.0)):
    rng = np.random.default_rng(seed)
    dom = Domain.unit_square(n, gamma0=gamma0)
    recipe = {"metric": {"kind": "random", "amplitude": metric_amp},
              "magnetic": {"kind": "random", "amplitude": mag_amp},
              "electric": {"kind": "random", "amplitude": el_amp}}
    return build_spec(dom, recipe, rng)


@pytest.fixture
def flat64():
    return OperatorSpec.from_functions(Domain.unit_square(64))
