"""Acceptance criteria 1-11 at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL ...`` line (visible with
``pytest -s`` or ``-v``) and then asserts.  Run alone with
``pytest tests/test_acceptance.py -s``.
"""
import math

import numpy as np
import pytest

from dtn_lab.charts import build_chart, gauge_normalize, to_normal_form
from dtn_lab.fields import Domain, OperatorSpec
from dtn_lab.geodesics import BoundaryCurve, detect_focal, flow_fan, geodesic_distance, influence_sets
from dtn_lab.harness import ScenarioConfig, run_experiment
from dtn_lab.recipes import Pulse, SpaceBump, metric_recipe
from dtn_lab.wave import BoundarySource, solve_ibvp

import test_properties as props
from conftest import random_spec
from test_geodesics import floyd_warshall, gamma_mask

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


def _fmt(xs):
    return "[" + ", ".join(f"{x:.3g}" for x in xs) + "]"


def test_criterion_01_forward_invariance(verdict):
    fwd = run_experiment("theorem_forward", ScenarioConfig.from_dict({}))
    errs = [r["discrepancy"] for r in fwd.ladder]
    neg = run_experiment("theorem_forward", ScenarioConfig.from_dict(
        {"equivalence": {"recipes": 1, "negative_control": True,
                         "phi": {"kind": "shear", "amplitude": 0.1, "depth": 0.2}}}))
    neg_errs = [r["discrepancy"] for r in neg.ladder]
    ok = (errs[-2] < 1e-2 and errs[-2] / errs[-1] >= 3 and fwd.passed
          and min(neg_errs) > 0.1)
    verdict(1, ok, f"discrepancy 128/256 = {_fmt(errs)}, reduction {errs[-2] / errs[-1]:.2f}, "
                   f"negative control {_fmt(neg_errs)}")


def test_criterion_02_plane_wave(verdict):
    rep = run_experiment("plane_wave", ScenarioConfig.from_dict({"ladder": [1 / 256]}))
    verdict(2, rep.discrepancy < 1e-3, f"relative L2 error {rep.discrepancy:.3g} at h = 1/256")


def _cone_leak(spec, width=0.1, T=0.6):
    dom = spec.domain
    src = BoundarySource.separable(dom, dom.patch("gamma0"), SpaceBump(0.5, width), Pulse(0.05, 0.3))
    u = solve_ibvp(spec, src, T, store_every=4)
    supp = np.zeros(dom.shape, bool)
    a, b = SpaceBump(0.5, width).support
    supp[(dom.xs >= a) & (dom.xs <= b), 0] = True
    d = geodesic_distance(spec, supp)
    peak = np.abs(u.values).max()
    leak = 0.0
    for t, snap in zip(u.times, u.values):
        outside = d > t
        if outside.any():
            leak = max(leak, np.abs(snap[outside]).max() / peak)
    return leak


def test_criterion_03_finite_speed(verdict):
    dom = Domain.unit_square(128)
    specs = {
        "flat": OperatorSpec.from_functions(dom),
        "constant anisotropic": OperatorSpec.from_functions(
            dom, lambda x, y: (1.6 + 0 * x, 0.5 + 0 * x, 0.9 + 0 * x)),
        "random anisotropic": random_spec(128, 4, metric_amp=0.3, mag_amp=1.0, el_amp=1.0),
    }
    leaks = {k: _cone_leak(s) for k, s in specs.items()}
    ok = all(v < 1e-3 for v in leaks.values())
    verdict(3, ok, "max |u| outside cone / max |u|: "
            + ", ".join(f"{k} {v:.2g}" for k, v in leaks.items()))


def test_criterion_04_chart_residuals(verdict):
    res, probes = [], []
    for n in (64, 128, 256):
        spec = random_spec(n, 0)
        ch = build_chart(spec, BoundaryCurve.bottom(), (0.25, 0.75), 0.25, spec.domain.h)
        r = ch.residuals()
        res.append(max(r["eikonal"], r["orthogonality"]))
        pr = to_normal_form(ch.pulled_back_spec(), gauge_normalize(ch.pulled_back_spec())).probe()
        m = pr.mask
        probes.append(max(np.abs(pr.metric_inverse[1, 1][m] - 1).max(),
                          np.abs(pr.metric_inverse[0, 1][m]).max()))
    orders = [math.log2(a / b) for a, b in zip(res, res[1:])]
    ok = max(res) < 1e-3 and max(probes) < 1e-3 and all(1.5 < p < 2.5 for p in orders)
    verdict(4, ok, f"residuals n=64/128/256 {_fmt(res)}, orders {_fmt(orders)}, "
                   f"ghat probes {_fmt(probes)}")


def test_criterion_05_focal_detection(verdict):
    R = 0.8
    dom = Domain.rectangle(-1, 1, -1, 1, 128)
    spec = OperatorSpec.from_functions(dom)
    dt = dom.h / 4
    rays = flow_fan(spec, BoundaryCurve.circle((0, 0), R), np.linspace(0, 2 * np.pi * R, 17)[:-1], 1.0, dt)
    t_err, det_err = 0.0, 0.0
    found = True
    for r in rays:
        f = detect_focal(r)
        found &= len(f) == 1
        if f:
            t_err = max(t_err, abs(f[0] - R))
        m = r.t < R - 5 * dom.h
        det_err = max(det_err, float(np.abs(r.det_jacobian[m] / ((R - r.t[m]) / R) - 1).max()))
    flat = OperatorSpec.from_functions(Domain.unit_square(128))
    half = flow_fan(flat, BoundaryCurve.bottom(), np.linspace(0.05, 0.95, 19), 0.95, 1 / 512)
    spurious = sum(len(detect_focal(r)) for r in half)
    rep = run_experiment("focal_transfer", ScenarioConfig.from_dict({}))
    ok = found and t_err <= 2 * dt and det_err < 1e-2 and spurious == 0 and rep.passed
    verdict(5, ok, f"caustic error {t_err:.2g} (2dt = {2 * dt:.2g}), det J rel err {det_err:.2g}, "
                   f"half-plane focal points {spurious}, transfer experiment "
                   f"{'passed' if rep.passed else 'failed'}")


def test_criterion_06_hamiltonian(verdict):
    drift = 0.0
    nrays = 0
    for seed in (0, 1, 2):
        spec = random_spec(128, seed)
        rays = flow_fan(spec, BoundaryCurve.bottom(), np.linspace(0.05, 0.95, 19), 0.6, spec.domain.h / 4)
        drift = max(drift, max(np.abs(r.hamiltonian - 1).max() for r in rays))
        nrays += len(rays)
    lens = OperatorSpec.from_functions(Domain.unit_square(128),
                                       metric_recipe({"kind": "lens", "beta": 9.0, "x0": 0.5}, None))
    rays = flow_fan(lens, BoundaryCurve.bottom(), np.linspace(0.3, 0.7, 9), 0.8, 1 / 512)
    drift = max(drift, max(np.abs(r.hamiltonian - 1).max() for r in rays))
    nrays += len(rays)
    verdict(6, drift < 1e-6, f"max |H - 1| = {drift:.2g} over {nrays} rays at dt = h/4")


def test_criterion_07_determinant_identity(verdict):
    errs = []
    for seed in (0, 1, 2):
        spec = random_spec(128, seed)
        ch = build_chart(spec, BoundaryCurve.bottom(), (0.25, 0.75), 0.25, spec.domain.h)
        errs.append(ch.residuals()["determinant"])
    verdict(7, max(errs) < 1e-2, f"max pointwise relative error per seed {_fmt(errs)}")


def test_criterion_08_local_agreement(verdict):
    rep = run_experiment("lemma21", ScenarioConfig.from_dict({}))
    d = rep.details
    verdict(8, rep.passed, f"difference {rep.discrepancy:.3g}, bound {rep.tolerance:.3g}, "
                           f"negative control {d.get('negative_control', float('nan')):.3g}")


def test_criterion_09_restriction(verdict):
    rep = run_experiment("restriction", ScenarioConfig.from_dict({}))
    d = rep.details
    eq = d["equivalent"]
    verdict(9, rep.passed, f"identical exact {d['identical_exact']}, interface {eq['interface']:.3g}, "
                           f"restricted {eq['restricted']:.3g}, gamma0 {eq['gamma0']:.3g}")


def test_criterion_10_inclusion(verdict):
    rep = run_experiment("influence_inclusion", ScenarioConfig.from_dict({}))
    spec = random_spec(32, 12, metric_amp=0.4)
    dom = spec.domain
    T = 0.437
    gam = gamma_mask(dom, 0.3, 0.55)
    times = np.linspace(0, T, 9)
    inf = influence_sets(spec, gam, T, times=times)
    D = floyd_warshall(spec)
    col = lambda m: np.flatnonzero(m.ravel())  # noqa: E731
    bottom = np.zeros(dom.shape, bool)
    bottom[:, 0] = True
    d_gamma = D[:, col(gam)].min(1).reshape(dom.shape)
    g_set = bottom & (d_gamma <= T)
    yn = D[:, col(bottom)].min(1).reshape(dom.shape)
    d_g = D[:, col(g_set)].min(1).reshape(dom.shape)
    exact = (np.array_equal(inf.g_set, g_set)
             and all(np.array_equal(inf.x20[k], (d_g <= t) & (t <= T - yn) & (t > 0))
                     for k, t in enumerate(times))
             and np.array_equal(inf.delta, (d_g <= T - yn) & (T - yn > 0)))
    pairs = rep.details["pairs"]
    verdict(10, rep.passed and exact,
            "pairs " + ", ".join(f"{k} {'included' if v['included'] else 'NOT included'}"
                                 for k, v in pairs.items())
            + f"; 32x32 oracle {'exact' if exact else 'differs'}")


def test_criterion_11_laws(verdict):
    laws = {"gauge composition": props.test_gauge_composition_law,
            "pullback composition": props.test_pullback_functoriality,
            "probe o assemble": props.test_probe_inverts_assembly}
    failed = []
    for name, law in laws.items():
        try:
            law()
        except AssertionError:
            failed.append(name)
    verdict(11, not failed, "100 examples each; failing: " + (", ".join(failed) or "none"))
