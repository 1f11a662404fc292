import json
import math

import numpy as np
import pytest

from dtn_lab.harness import (ConfigError, InvariantViolation, ScenarioConfig, included_up_to_cell,
                             inclusion_pairs, max_distance_to_gamma0, observed_orders,
                             run_experiment)
from dtn_lab.fields import Domain, OperatorSpec

SMALL = {"ladder": [1 / 32], "sources": {"count": 2, "width": 0.25},
         "equivalence": {"recipes": 1}}


def cfg(**over):
    raw = json.loads(json.dumps(SMALL))
    raw.update(over)
    return ScenarioConfig.from_dict(raw)


def test_defaults_fill_in():
    c = ScenarioConfig.from_dict({})
    assert c.data["T0"] == 2.1 and c.tol["tol_dtn"] == 1e-2
    assert c.data["ladder"] == [1 / 128, 1 / 256]


@pytest.mark.parametrize("raw, exc", [
    ({"bogus": 1}, ConfigError),
    ({"sources": {"colour": 1}}, ConfigError),
    ({"sources": 3}, ConfigError),
    ({"ladder": [1 / 64, 1 / 32]}, ConfigError),
    ({"ladder": [0.3]}, ConfigError),
    ({"ladder": []}, ConfigError),
    ({"T0": "soon"}, ConfigError),
    ({"tolerances": {"tol_dtn": -1e-3}}, InvariantViolation),
    ({"cfl": 1.5}, InvariantViolation),
    ({"T": 3.0}, InvariantViolation),
    ({"equivalence": {"phi": {"kind": "shear"}}}, InvariantViolation),
    ({"equivalence": {"gauge": {"kind": "boundary_phase"}}}, InvariantViolation),
])
def test_config_rejections(raw, exc):
    with pytest.raises(exc):
        ScenarioConfig.from_dict(raw)


def test_non_object_rejected():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict([1, 2])


def test_shear_allowed_as_negative_control():
    c = ScenarioConfig.from_dict({"equivalence": {"phi": {"kind": "shear"}, "negative_control": True}})
    assert c.data["equivalence"]["negative_control"]


def test_hash_stable_and_sensitive():
    a, b = cfg(), cfg()
    assert a.hash() == b.hash() and len(a.hash()) == 64
    assert a.override(seed=3).hash() != a.hash()
    assert a.override(grid=1 / 16).data["ladder"] == [1 / 16]


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        run_experiment("nope", cfg())


def test_observed_orders():
    rows = observed_orders([0.1, 0.05, 0.025], [4.0, 1.0, 0.25])
    assert rows[0]["observed_order"] is None
    assert rows[1]["observed_order"] == pytest.approx(2.0)
    assert rows[2]["observed_order"] == pytest.approx(2.0)
    # unequal ratios still give the log-ratio order
    rows = observed_orders([0.1, 0.03], [1.0, 0.09])
    assert rows[1]["observed_order"] == pytest.approx(math.log(1 / 0.09) / math.log(0.1 / 0.03))
    assert observed_orders([0.1, 0.05], [0.0, 0.0])[1]["observed_order"] is None


def test_max_distance_flat():
    spec = OperatorSpec.from_functions(Domain.unit_square(32))
    assert max_distance_to_gamma0(spec) == pytest.approx(1.0, abs=2 / 32)


def test_T0_invariant():
    with pytest.raises(InvariantViolation, match="T0"):
        run_experiment("theorem_forward", cfg(T0=1.5))


def test_identity_equivalence_is_exact():
    c = cfg(equivalence={"recipes": 1, "phi": {"kind": "identity"}, "gauge": {"kind": "identity"}})
    rep = run_experiment("theorem_forward", c)
    assert rep.discrepancy == 0.0 and rep.passed


def test_forward_deterministic():
    c = cfg()
    r1 = run_experiment("theorem_forward", c).to_json()
    r2 = run_experiment("theorem_forward", c).to_json()
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)
    assert r1["provenance"] == {"config_hash": c.hash(), "seed": 0}
    assert len(r1["per_source"]) == 2


def test_forward_report_shape():
    rep = run_experiment("theorem_forward", cfg())
    assert 0 < rep.discrepancy < 0.2
    assert set(rep.traces) == {"spec1_src0", "spec2_src0", "spec1_src1", "spec2_src1"}
    assert set(rep.grids) == {"spec1", "spec2"}
    json.dumps(rep.to_json())


def test_source_width_invariant():
    with pytest.raises(InvariantViolation, match="source_width"):
        run_experiment("theorem_forward", cfg(sources={"count": 2, "width": 0.1}))


def test_restriction_identical_exact_and_negative():
    rep = run_experiment("restriction", ScenarioConfig.from_dict({"ladder": [1 / 64]}))
    d = rep.details
    assert d["identical_exact"]
    assert all(v == 0.0 for v in d["identical"].values())
    assert d["delta"] == pytest.approx(d["slab_depth"])
    assert max(d["negative_control"]["restricted"], d["negative_control"]["gamma0"]) > 0.1
    assert rep.passed


def test_restriction_depth_alignment():
    with pytest.raises(InvariantViolation):
        run_experiment("restriction", ScenarioConfig.from_dict(
            {"ladder": [1 / 32], "experiments": {"restriction": {"depth": 0.1}}}))


def test_inclusion_identical_pair_equal():
    rep = run_experiment("influence_inclusion", ScenarioConfig.from_dict({}))
    pairs = rep.details["pairs"]
    assert pairs["identical"]["equal"] and pairs["identical"]["swapped_outside_count"] == 0
    assert all(p["included"] for p in pairs.values())
    assert rep.details["negative_control"] >= 5 and rep.passed


def test_inclusion_T_zero_empty():
    rep = run_experiment("influence_inclusion", ScenarioConfig.from_dict(
        {"T": 0.0, "experiments": {"influence_inclusion": {"n": 32}}}))
    for p in rep.details["pairs"].values():
        assert p["size_spec1"] == 0 and p["size_spec2"] == 0


def test_inclusion_pairs_slow_inside():
    for name, s1, s2 in inclusion_pairs(32, (0.25, 0.75), 0.6):
        assert s1.domain.shape == s2.domain.shape
        if name == "identical":
            assert np.array_equal(s1.metric_inverse, s2.metric_inverse)
        else:
            # spec2 is never faster than spec1 anywhere
            assert (s2.metric_inverse[0, 0] <= s1.metric_inverse[0, 0] + 1e-12).all()


def test_included_up_to_cell():
    outer = np.zeros((8, 8), bool)
    outer[2:5, 2:5] = True
    inner = np.zeros_like(outer)
    inner[5, 3] = True
    assert included_up_to_cell(inner, outer)
    inner[7, 7] = True
    assert not included_up_to_cell(inner, outer)
