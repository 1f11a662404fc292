import json

import numpy as np
import pytest

from dtn_lab.fields import (Domain, OperatorSpec, SpecError, apply_spatial_operator, det2,
                            load_spec, probe_coefficients, save_spec)
from dtn_lab.gauge import GaugeElement, gauge_transform_operator

from conftest import random_spec


def core(a):
    return a[1:-1, 1:-1]


def test_laplacian_of_quadratic(flat64):
    X1, X2 = flat64.domain.mesh()
    Lu = apply_spatial_operator(flat64, X1 ** 2 + X2 ** 2)
    # quadratics are differenced exactly
    np.testing.assert_allclose(core(Lu), -4.0, atol=1e-9)
    assert np.all(Lu[0] == 0) and np.all(Lu[:, -1] == 0)


def test_constant_potential_on_constant():
    a = 1.3
    for n in (16, 32, 64):
        dom = Domain.unit_square(n)
        spec = OperatorSpec.from_functions(dom, magnetic=lambda x, y: (a + 0 * x, 0 * x))
        Lu = apply_spatial_operator(spec, np.ones(dom.shape))
        h = dom.h
        # link phases give (2 - 2 cos(ha))/h^2 exactly
        np.testing.assert_allclose(core(Lu), (2 - 2 * np.cos(h * a)) / h ** 2, atol=1e-9)
        assert abs(core(Lu).real.max() - a * a) < 0.1 * h ** 2 * a ** 4 + 1e-9


def _link_matrices(spec):
    """Covariant link differences built node by node."""
    dom = spec.domain
    nx, ny, h = dom.nx, dom.ny, dom.h
    N = nx * ny
    idx = lambda i, j: i * ny + j  # noqa: E731
    A = spec.magnetic
    sqrtg = np.sqrt(spec.volume_factor)
    a = sqrtg * spec.metric_inverse
    rows_x, rows_y = [], []
    wx, wy = [], []
    for i in range(nx - 1):
        for j in range(ny):
            r = np.zeros(N, complex)
            ph = np.exp(1j * h * 0.5 * (A[0, i, j] + A[0, i + 1, j]))
            r[idx(i + 1, j)] = ph / h
            r[idx(i, j)] = -1 / h
            rows_x.append(r)
            wx.append(0.5 * (a[0, 0, i, j] + a[0, 0, i + 1, j]))
    for i in range(nx):
        for j in range(ny - 1):
            r = np.zeros(N, complex)
            ph = np.exp(1j * h * 0.5 * (A[1, i, j] + A[1, i, j + 1]))
            r[idx(i, j + 1)] = ph / h
            r[idx(i, j)] = -1 / h
            rows_y.append(r)
            wy.append(0.5 * (a[1, 1, i, j] + a[1, 1, i, j + 1]))
    C1 = np.zeros((N, N), complex)
    C2 = np.zeros((N, N), complex)
    # centred differences; rows on the boundary keep only the neighbours that exist
    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                C1[idx(i, j), idx(i + 1, j)] = np.exp(1j * h * 0.5 * (A[0, i, j] + A[0, i + 1, j])) / (2 * h)
            if i > 0:
                C1[idx(i, j), idx(i - 1, j)] = -np.exp(-1j * h * 0.5 * (A[0, i, j] + A[0, i - 1, j])) / (2 * h)
            if j + 1 < ny:
                C2[idx(i, j), idx(i, j + 1)] = np.exp(1j * h * 0.5 * (A[1, i, j] + A[1, i, j + 1])) / (2 * h)
            if j > 0:
                C2[idx(i, j), idx(i, j - 1)] = -np.exp(-1j * h * 0.5 * (A[1, i, j] + A[1, i, j - 1])) / (2 * h)
    D1, D2 = np.array(rows_x), np.array(rows_y)
    a12 = np.diag(a[0, 1].ravel())
    K = (D1.conj().T @ np.diag(wx) @ D1 + D2.conj().T @ np.diag(wy) @ D2
         + C1.conj().T @ a12 @ C2 + C2.conj().T @ a12 @ C1)
    K = K / sqrtg.ravel()[:, None] + np.diag(spec.electric.ravel())
    return K


def test_dense_matrix_oracle():
    spec = random_spec(10, seed=3)
    K = _link_matrices(spec)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(spec.domain.shape) + 1j * rng.standard_normal(spec.domain.shape)
    ref = (K @ u.ravel()).reshape(spec.domain.shape)
    got = apply_spatial_operator(spec, u)
    np.testing.assert_allclose(core(got), core(ref), rtol=0, atol=1e-10 * np.abs(ref).max())


def test_discrete_symmetry_with_sqrt_g_weight():
    spec = random_spec(24, seed=5, mag_amp=0.0)
    rng = np.random.default_rng(1)
    u, v = np.zeros((2,) + spec.domain.shape)
    core(u)[:] = rng.standard_normal(core(u).shape)
    core(v)[:] = rng.standard_normal(core(v).shape)
    w = np.sqrt(spec.volume_factor)
    lhs = np.sum(w * apply_spatial_operator(spec, u) * v)
    rhs = np.sum(w * u * apply_spatial_operator(spec, v))
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_hermitian_with_magnetic_field():
    spec = random_spec(20, seed=6)
    rng = np.random.default_rng(2)
    u, v = np.zeros((2,) + spec.domain.shape, complex)
    core(u)[:] = rng.standard_normal(core(u).shape) + 1j * rng.standard_normal(core(u).shape)
    core(v)[:] = rng.standard_normal(core(v).shape)
    w = np.sqrt(spec.volume_factor)
    lhs = np.vdot(v, w * apply_spatial_operator(spec, u))
    rhs = np.vdot(w * apply_spatial_operator(spec, v), u)
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_probe_electric_constant(flat64):
    spec = flat64.replace(electric=np.full(flat64.domain.shape, 5.0))
    pr = probe_coefficients(spec)
    np.testing.assert_allclose(pr.electric[pr.mask], 5.0, atol=1e-8)


def test_probe_recovers_gauge_gradient():
    dom = Domain.unit_square(64)
    spec = OperatorSpec.from_functions(dom)
    theta = lambda x, y: np.sin(2 * x) * np.cos(y)  # noqa: E731
    grad = lambda x, y: (2 * np.cos(2 * x) * np.cos(y), -np.sin(2 * x) * np.sin(y))  # noqa: E731
    c = GaugeElement.from_phase(dom, theta, grad)
    pr = probe_coefficients(gauge_transform_operator(spec, c))
    g1, g2 = grad(*dom.mesh())
    m = pr.mask
    assert np.abs(pr.magnetic[0][m] - g1[m]).max() < 10 * dom.h ** 2
    assert np.abs(pr.magnetic[1][m] - g2[m]).max() < 10 * dom.h ** 2


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_probe_matches_stored_fields(seed):
    spec = random_spec(64, seed)
    h = spec.domain.h
    pr = probe_coefficients(spec)
    m = pr.mask
    assert np.abs(pr.metric_inverse[:, :, m] - spec.metric_inverse[:, :, m]).max() < 10 * h ** 2
    assert np.abs(pr.magnetic[:, m] - spec.magnetic[:, m]).max() < 10 * h ** 2
    assert np.abs(pr.electric[m] - spec.electric[m]).max() < 10 * h ** 2


def test_probe_error_is_second_order():
    errs = []
    for n in (32, 64, 128):
        spec = random_spec(n, 4)
        pr = probe_coefficients(spec)
        errs.append(np.abs(pr.electric[pr.mask] - spec.electric[pr.mask]).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.7), orders


def test_volume_factor_consistency():
    spec = random_spec(32, 9)
    np.testing.assert_allclose(spec.volume_factor * det2(spec.metric_inverse), 1.0, rtol=1e-14)


def test_rejects_indefinite_metric():
    dom = Domain.unit_square(8)
    with pytest.raises(SpecError, match="positive definite"):
        OperatorSpec.from_functions(dom, metric=lambda x, y: (1 + 0 * x, 2 + 0 * x, 1 + 0 * x))


def test_rejects_eigenvalues_outside_bounds():
    dom = Domain.unit_square(8)
    with pytest.raises(SpecError, match="outside"):
        OperatorSpec.from_functions(dom, metric=lambda x, y: (1e4 + 0 * x, 0 * x, 1 + 0 * x))


def test_rejects_shape_mismatch(flat64):
    with pytest.raises(SpecError):
        apply_spatial_operator(flat64, np.zeros((10, 10)))
    with pytest.raises(SpecError):
        flat64.replace(electric=np.zeros((3, 3)))


def test_spec_is_immutable(flat64):
    with pytest.raises(ValueError):
        flat64.electric[0, 0] = 1.0


def test_patches_partition_boundary():
    dom = Domain.unit_square(16, gamma0=(0.25, 0.75))
    count = np.zeros(dom.shape, int)
    for p in dom.patches().values():
        ii, jj = p.nodes(dom)
        count[ii, jj] += 1
    assert np.all(count[dom.boundary_mask()] == 1)
    assert np.all(count[dom.interior_mask()] == 0)
    g0 = dom.patch("gamma0").coordinates(dom)
    assert np.all(np.diff(g0) > 0) and len(g0) == 7


def test_grid_roundtrip(tmp_path):
    spec = random_spec(16, 11, gamma0=(0.2, 0.6))
    save_spec(tmp_path / "s", spec)
    header = json.loads((tmp_path / "s.json").read_text())
    assert header["nx"] == 17 and header["fields"] == ["g11", "g12", "g22", "A1", "A2", "V"]
    back = load_spec(tmp_path / "s")
    np.testing.assert_array_equal(back.metric_inverse, spec.metric_inverse)
    np.testing.assert_array_equal(back.magnetic, spec.magnetic)
    np.testing.assert_array_equal(back.electric, spec.electric)
    assert back.domain.gamma0 == (0.2, 0.6)
