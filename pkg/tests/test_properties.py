"""Property tests for the structural invariants (hypothesis profile ``dtn``)."""
import json
import math

import numpy as np
from hypothesis import given, strategies as st

from conftest import random_spec
from dtn_lab.fields import Domain, apply_spatial_operator, probe_coefficients
from dtn_lab.gauge import (GaugeElement, bump_diffeo, gauge_transform_operator, pullback_operator)
from dtn_lab.geodesics import influence_sets
from dtn_lab.harness import ScenarioConfig, observed_orders
from dtn_lab.recipes import FourierField

seeds = st.integers(0, 2 ** 31 - 1)
amps = st.floats(0.0, 1.0)


def _phase(dom, seed, amp):
    f = FourierField(np.random.default_rng(seed), amp, 2)
    return GaugeElement.from_phase(dom, f, f.gradient)


def _bump(rng):
    c = rng.uniform(0.4, 0.6, 2)
    ang = rng.uniform(0, 2 * math.pi)
    return bump_diffeo(c, 0.3, rng.uniform(-0.04, 0.04), (math.cos(ang), math.sin(ang)))


@given(seeds, seeds, seeds, amps, amps)
def test_gauge_composition_law(s0, s1, s2, a1, a2):
    spec = random_spec(16, s0 % 1000)
    c1, c2 = _phase(spec.domain, s1, a1), _phase(spec.domain, s2, a2)
    two = gauge_transform_operator(gauge_transform_operator(spec, c1), c2)
    one = gauge_transform_operator(spec, c1 * c2)
    np.testing.assert_allclose(two.magnetic, one.magnetic, atol=1e-12)
    np.testing.assert_array_equal(two.electric, spec.electric)
    np.testing.assert_array_equal(two.metric_inverse, spec.metric_inverse)


@given(seeds, amps)
def test_gauge_inverse_element(s, a):
    spec = random_spec(16, s % 1000)
    c = _phase(spec.domain, s, a)
    cinv = GaugeElement(spec.domain, 1 / c.values, -c.dlog, c.fixed_on_gamma0)
    back = gauge_transform_operator(gauge_transform_operator(spec, c), cinv)
    np.testing.assert_allclose(back.magnetic, spec.magnetic, atol=1e-12)


@given(seeds, seeds)
def test_pullback_functoriality(s_spec, s_phi):
    spec = random_spec(64, s_spec % 1000, metric_amp=0.2)
    rng = np.random.default_rng(s_phi)
    p1, p2 = _bump(rng), _bump(rng)
    nested = pullback_operator(pullback_operator(spec, p1), p2)
    direct = pullback_operator(spec, p1.compose(p2))
    # the nested route interpolates twice; bicubic error on n = 64
    assert _coef_gap(nested, direct) < 1e-2


def _coef_gap(a, b):
    pairs = ((a.metric_inverse, b.metric_inverse), (a.magnetic, b.magnetic), (a.electric, b.electric))
    return max(np.abs(x - y).max() / max(1.0, np.abs(y).max()) for x, y in pairs)


def test_pullback_composition_order_matters():
    spec = random_spec(64, 5, metric_amp=0.2)
    p1 = bump_diffeo((0.45, 0.5), 0.3, 0.04, (1.0, 0.0))
    p2 = bump_diffeo((0.55, 0.5), 0.3, 0.04, (0.0, 1.0))
    nested = pullback_operator(pullback_operator(spec, p1), p2)
    right = _coef_gap(nested, pullback_operator(spec, p1.compose(p2)))
    wrong = _coef_gap(nested, pullback_operator(spec, p2.compose(p1)))
    assert wrong > 5 * right


@given(seeds, st.floats(0.0, 0.3), st.floats(0.0, 1.5), st.floats(0.0, 3.0))
def test_probe_inverts_assembly(seed, m_amp, a_amp, v_amp):
    spec = random_spec(32, seed % 10_000, metric_amp=m_amp, mag_amp=a_amp, el_amp=v_amp)
    h = spec.domain.h
    pr = probe_coefficients(spec)
    m = pr.mask
    assert np.abs(pr.metric_inverse[:, :, m] - spec.metric_inverse[:, :, m]).max() < 10 * h ** 2
    assert np.abs(pr.magnetic[:, m] - spec.magnetic[:, m]).max() < 10 * h ** 2
    assert np.abs(pr.electric[m] - spec.electric[m]).max() < 10 * h ** 2


@given(seeds)
def test_operator_symmetric_in_volume_inner_product(seed):
    spec = random_spec(12, seed % 10_000)
    rng = np.random.default_rng(seed)
    shape = spec.domain.shape
    u = np.zeros(shape, complex)
    w = np.zeros(shape, complex)
    u[1:-1, 1:-1] = rng.normal(size=(shape[0] - 2, shape[1] - 2, 2)) @ [1, 1j]
    w[1:-1, 1:-1] = rng.normal(size=(shape[0] - 2, shape[1] - 2, 2)) @ [1, 1j]
    vol = np.sqrt(spec.volume_factor)
    lhs = np.vdot(w * vol, apply_spatial_operator(spec, u))
    rhs = np.vdot(apply_spatial_operator(spec, w) * vol, u)
    assert abs(lhs - rhs) <= 1e-9 * (abs(lhs) + 1)


@given(seeds, st.floats(0.0, 0.6), st.floats(0.0, 0.4))
def test_influence_sets_monotone_in_T(seed, T, dT):
    spec = random_spec(24, seed % 1000, metric_amp=0.2)
    gm = np.zeros(spec.domain.shape, bool)
    gm[6:18, 0] = True
    a = influence_sets(spec, gm, T)
    b = influence_sets(spec, gm, T + dT)
    assert not (a.delta & ~b.delta).any()
    assert not (a.domain_of_influence & ~b.domain_of_influence).any()
    assert not (a.x20.any(axis=0) & ~a.delta).any()
    # gamma lies inside G, so d(x, G) <= d(x, gamma)
    assert (a.distance_g <= a.distance_gamma + 1e-12).all() or not a.g_set.any()


@given(st.floats(0.5, 4.0), st.floats(1e-3, 10.0), st.integers(2, 5))
def test_observed_order_recovers_power_law(p, C, k):
    hs = [2.0 ** -(j + 3) for j in range(k)]
    rows = observed_orders(hs, [C * h ** p for h in hs])
    assert rows[0]["observed_order"] is None
    for r in rows[1:]:
        assert math.isclose(r["observed_order"], p, rel_tol=1e-9)


@given(st.permutations(["seed", "T0", "cfl", "T"]), seeds)
def test_config_hash_ignores_key_order(keys, seed):
    vals = {"seed": seed % 100, "T0": 2.2, "cfl": 0.4, "T": 0.3}
    raw = {k: vals[k] for k in keys}
    assert ScenarioConfig.from_dict(raw).hash() == ScenarioConfig.from_dict(vals).hash()
    assert json.loads(ScenarioConfig.from_dict(raw).canonical())["seed"] == seed % 100


def test_domain_shapes_hold():
    assert Domain.unit_square(16).shape == (17, 17)
