"""Semigeodesic (boundary normal) coordinates, gauge normalization and normal forms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator
from scipy.spatial import cKDTree

from .fields import Domain, OperatorSpec, ProbeResult, SpecError, apply_spatial_operator, \
    probe_operator, save_grids
from .geodesics import BoundaryCurve, FocalPointError, MetricInterpolant, detect_focal, flow_fan
from .wave import WaveField


class ChartError(SpecError):
    pass


def _interp(domain: Domain, f: np.ndarray, X1, X2) -> np.ndarray:
    def one(a):
        return RectBivariateSpline(domain.xs, domain.ys, a, kx=3, ky=3, s=0).ev(X1, X2)
    return one(f.real) + 1j * one(f.imag) if np.iscomplexobj(f) else one(f)


@dataclass(frozen=True, eq=False)
class SemigeodesicChart:
    """Ray table on the ``(y', y_n)`` grid and the inverse map on the x-grid.

    ``x_table`` is ``(2, m, k)`` positions, ``jac_table`` is ``(2, 2, m, k)``
    with ``jac[a, b] = dx_a / dy_b``; ``phi`` is ``(2, nx, ny)`` with NaN
    outside ``mask``.
    """

    spec: OperatorSpec
    curve: BoundaryCurve
    y_domain: Domain
    x_table: np.ndarray
    jac_table: np.ndarray
    ghat: np.ndarray
    phi: np.ndarray
    mask: np.ndarray

    @property
    def depth(self) -> float:
        return float(self.y_domain.ys[-1])

    def det_metric_identity(self) -> float:
        """Max relative error of ``det ghat^{-1} = det g^{-1} (det Dphi)^2`` on the table.

        Holds by construction up to round-off since ``ghat = J^{-1} G J^{-T}``.
        """
        J = self.jac_table
        detJ = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        G = self._metric_at_table()
        dG = G[0, 0] * G[1, 1] - G[0, 1] ** 2
        dH = self.ghat[0, 0] * self.ghat[1, 1] - self.ghat[0, 1] ** 2
        return float(np.abs(dH * detJ ** 2 / dG - 1).max())

    def _metric_at_table(self) -> np.ndarray:
        dom = self.spec.domain
        X1, X2 = self.x_table
        G = self.spec.metric_inverse
        out = np.empty((2, 2) + X1.shape)
        for a, b in ((0, 0), (0, 1), (1, 1)):
            out[a, b] = _interp(dom, G[a, b], X1, X2)
        out[1, 0] = out[0, 1]
        return out

    def residuals(self) -> dict[str, float]:
        """Eikonal, orthogonality and determinant-identity residuals.

        Derivatives of ``phi`` are central differences on the x-grid, taken at
        nodes whose four neighbours are all inside the chart.  The determinant
        residual compares the tabulated ``det ghat`` at ``phi(x)`` with
        ``det g^{-1}(x) (det Dphi)^2``.
        """
        dom = self.spec.domain
        h = dom.h
        ok = self.mask.copy()
        inner = np.zeros_like(ok)
        inner[1:-1, 1:-1] = (ok[1:-1, 1:-1] & ok[2:, 1:-1] & ok[:-2, 1:-1]
                             & ok[1:-1, 2:] & ok[1:-1, :-2])
        if not inner.any():
            return {"eikonal": np.nan, "orthogonality": np.nan, "determinant": np.nan}
        D = np.zeros((2, 2) + dom.shape)
        for a in range(2):
            D[a, 0, 1:-1] = (self.phi[a, 2:] - self.phi[a, :-2]) / (2 * h)
            D[a, 1, :, 1:-1] = (self.phi[a, :, 2:] - self.phi[a, :, :-2]) / (2 * h)
        G = self.spec.metric_inverse
        gy = np.einsum("ajxy,jkxy,bkxy->abxy", D, G, D)
        eik = np.abs(gy[1, 1] - 1)[inner].max()
        orth = np.abs(gy[0, 1])[inner].max()
        D = D[:, :, inner]
        detD = D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
        detG = (G[0, 0] * G[1, 1] - G[0, 1] ** 2)[inner]
        # table metric carried to the x-grid through phi
        yd = self.y_domain
        y1, y2 = self.phi[0][inner], self.phi[1][inner]
        gh = [RectBivariateSpline(yd.xs, yd.ys, self.ghat[a, b], kx=3, ky=3, s=0).ev(y1, y2)
              for a, b in ((0, 0), (0, 1), (1, 1))]
        det_res = np.abs((gh[0] * gh[2] - gh[1] ** 2) / (detG * detD ** 2) - 1).max()
        return {"eikonal": float(eik), "orthogonality": float(orth), "determinant": float(det_res)}

    def pulled_back_spec(self) -> OperatorSpec:
        """The operator in chart coordinates on ``y_domain``: ``(ghat, J^T A(x(y)), V(x(y)))``."""
        dom = self.spec.domain
        X1, X2 = self.x_table
        A = self.spec.magnetic
        Ax = np.array([_interp(dom, A[a], X1, X2) for a in range(2)])
        Ahat = np.einsum("baij,bij->aij", self.jac_table, Ax)
        Vhat = _interp(dom, self.spec.electric, X1, X2)
        return OperatorSpec(self.y_domain, self.ghat, Ahat, Vhat, eig_bounds=self.spec.eig_bounds)

    def export(self, stem) -> None:
        save_grids(str(stem) + "_table", self.y_domain,
                   {"x1": self.x_table[0], "x2": self.x_table[1],
                    "ghat11": self.ghat[0, 0], "ghat12": self.ghat[0, 1], "ghat22": self.ghat[1, 1]},
                   {"curve": self.curve.kind})
        save_grids(str(stem) + "_phi", self.spec.domain,
                   {"y1": self.phi[0], "y2": self.phi[1], "mask": self.mask.astype(float)})


def build_chart(spec: OperatorSpec, curve: BoundaryCurve, interval: tuple[float, float],
                depth: float, dy: float, *, substeps: int = 4, newton_tol: float = 1e-10) -> SemigeodesicChart:
    """Boundary normal coordinates over ``interval x [0, depth]`` with table spacing ``dy``.

    Raises FocalPointError if any ray focalizes before ``depth`` and
    ChartError if a ray leaves the coefficient region.
    """
    s0, s1 = map(float, interval)
    m = int(round((s1 - s0) / dy))
    k = int(round(depth / dy))
    if m < 3 or k < 3 or abs(m * dy - (s1 - s0)) > 1e-9 or abs(k * dy - depth) > 1e-9:
        raise ChartError("interval and depth must be multiples of dy with at least 4 samples")
    ys1 = s0 + dy * np.arange(m + 1)
    ys2 = dy * np.arange(k + 1)
    metric = MetricInterpolant(spec)
    rays = flow_fan(spec, curve, ys1, depth, dy, substeps=substeps, metric=metric)
    for r in rays:
        f = detect_focal(r)
        if f:
            raise FocalPointError(r.y_tangential, f[0])
        if r.exited:
            raise ChartError(f"ray from y'={r.y_tangential:.6g} leaves the coefficient region "
                             f"at depth {r.t[-1]:.6g}")
    X = np.stack([r.x for r in rays], axis=1)            # (k+1, m+1, 2)
    J = np.stack([r.jacobian for r in rays], axis=1)      # (k+1, m+1, 2, 2)
    x_table = np.moveaxis(X, (0, 1, 2), (2, 1, 0))        # (2, m+1, k+1)
    jac = np.moveaxis(J, (0, 1), (-1, -2))                # (2, 2, m+1, k+1)
    detJ = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    Ginv = _metric_table(spec, x_table)
    Jinv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / detJ
    ghat = np.einsum("abij,bcij,dcij->adij", Jinv, Ginv, Jinv)
    ghat[1, 0] = ghat[0, 1]
    ydom = Domain(ys1, ys2, gamma0=(s0, s1))
    phi, mask = _invert(spec.domain, ydom, x_table, newton_tol)
    return SemigeodesicChart(spec, curve, ydom, x_table, jac, ghat, phi, mask)


def _metric_table(spec: OperatorSpec, x_table: np.ndarray) -> np.ndarray:
    G = spec.metric_inverse
    out = np.empty((2, 2) + x_table.shape[1:])
    for a, b in ((0, 0), (0, 1), (1, 1)):
        out[a, b] = _interp(spec.domain, G[a, b], *x_table)
    out[1, 0] = out[0, 1]
    return out


def _invert(xdom: Domain, ydom: Domain, x_table: np.ndarray, tol: float):
    """Newton inversion of the cubic-spline chart map at every x-grid node it covers."""
    sx = [RectBivariateSpline(ydom.xs, ydom.ys, x_table[a], kx=3, ky=3, s=0) for a in range(2)]
    pts = x_table.reshape(2, -1).T
    tree = cKDTree(pts)
    X1, X2 = xdom.mesh()
    lo, hi = pts.min(0), pts.max(0)
    cand = (X1 >= lo[0] - 1e-12) & (X1 <= hi[0] + 1e-12) & (X2 >= lo[1] - 1e-12) & (X2 <= hi[1] + 1e-12)
    targets = np.stack([X1[cand], X2[cand]], axis=1)
    _, nearest = tree.query(targets)
    iy, jy = np.unravel_index(nearest, x_table.shape[1:])
    y = np.stack([ydom.xs[iy], ydom.ys[jy]], axis=1)
    seed = y.copy()
    y1lo, y1hi, y2lo, y2hi = ydom.xs[0], ydom.xs[-1], ydom.ys[0], ydom.ys[-1]
    for _ in range(30):
        a = np.clip(y[:, 0], y1lo, y1hi)
        b = np.clip(y[:, 1], y2lo, y2hi)
        F = np.stack([s.ev(a, b) for s in sx], axis=1) - targets
        D = np.array([[sx[0].ev(a, b, dx=1), sx[0].ev(a, b, dy=1)],
                      [sx[1].ev(a, b, dx=1), sx[1].ev(a, b, dy=1)]])
        det = D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
        step = np.stack([(D[1, 1] * F[:, 0] - D[0, 1] * F[:, 1]) / det,
                         (D[0, 0] * F[:, 1] - D[1, 0] * F[:, 0]) / det], axis=1)
        y = y - step
        if np.abs(step).max(initial=0) < tol * 1e-2:
            break
    a = np.clip(y[:, 0], y1lo, y1hi)
    b = np.clip(y[:, 1], y2lo, y2hi)
    F = np.stack([s.ev(a, b) for s in sx], axis=1) - targets
    eps = 1e-9
    good = ((np.abs(F).max(axis=1) < tol) & (y[:, 0] >= y1lo - eps) & (y[:, 0] <= y1hi + eps)
            & (y[:, 1] >= y2lo - eps) & (y[:, 1] <= y2hi + eps)
            & (np.abs(y - seed).max(axis=1) < 3 * ydom.h))
    phi = np.full((2,) + xdom.shape, np.nan)
    mask = np.zeros(xdom.shape, dtype=bool)
    ci, cj = np.nonzero(cand)
    phi[0, ci[good], cj[good]] = y[good, 0]
    phi[1, ci[good], cj[good]] = y[good, 1]
    mask[ci[good], cj[good]] = True
    return phi, mask


# -- gauge normalization and normal form ----------------------------------------

@dataclass(frozen=True, eq=False)
class GaugeNormalization:
    """``psi`` with ``d psi / d y_n = -Ahat_n`` and ``psi = 0`` on the boundary."""

    y_domain: Domain
    psi: np.ndarray
    magnetic: np.ndarray
    multiplier: np.ndarray


def gauge_normalize(chart_spec: OperatorSpec) -> GaugeNormalization:
    """Remove the normal magnetic component of an operator in chart coordinates.

    ``A^(1) = Ahat + grad psi``; the multiplier ``m = ghat^{1/4} e^{-i psi}``
    (``ghat`` the volume factor) defines the normal form ``m L m^{-1}``.
    """
    dom = chart_spec.domain
    h = dom.h
    An = chart_spec.magnetic[1]
    if np.iscomplexobj(An) and np.abs(An.imag).max() > 0:
        raise SpecError("gauge normalization needs a real magnetic potential")
    An = np.real(An)
    psi = -cumulative_simpson(An, dx=h, axis=1, initial=0.0)
    grad = np.stack(np.gradient(psi, h, edge_order=2))
    A1 = np.real(chart_spec.magnetic) + grad
    m = chart_spec.volume_factor ** 0.25 * np.exp(-1j * psi)
    return GaugeNormalization(dom, psi, A1, m)


@dataclass(frozen=True, eq=False)
class NormalFormOperator:
    """``u -> m Lhat (u / m)``: density-1 normal form in chart coordinates."""

    chart_spec: OperatorSpec
    multiplier: np.ndarray

    @property
    def domain(self) -> Domain:
        return self.chart_spec.domain

    def apply(self, u: np.ndarray) -> np.ndarray:
        m = self.multiplier.reshape(self.multiplier.shape + (1,) * (np.ndim(u) - 2))
        return m * apply_spatial_operator(self.chart_spec, u / m)

    def probe(self) -> ProbeResult:
        return probe_operator(self.apply, self.domain)


def to_normal_form(chart_spec: OperatorSpec, gnorm: GaugeNormalization | None = None) -> NormalFormOperator:
    gnorm = gnorm or gauge_normalize(chart_spec)
    return NormalFormOperator(chart_spec, gnorm.multiplier)


def transform_solution(u: WaveField, chart: SemigeodesicChart,
                       gnorm: GaugeNormalization | None = None) -> WaveField:
    """``u^(1)(y, t) = m(y) u(x(y), t)`` on the chart grid, bilinear in space."""
    dom = u.domain
    X1, X2 = chart.x_table
    tol = 1e-9
    if (X1.min() < dom.xs[0] - tol or X1.max() > dom.xs[-1] + tol
            or X2.min() < dom.ys[0] - tol or X2.max() > dom.ys[-1] + tol):
        raise ChartError("chart table leaves the solution grid")
    pts = np.stack([np.clip(X1, dom.xs[0], dom.xs[-1]), np.clip(X2, dom.ys[0], dom.ys[-1])], -1)
    m = gnorm.multiplier if gnorm is not None else np.ones(chart.y_domain.shape)
    out = np.empty((len(u.times),) + chart.y_domain.shape, dtype=complex)
    for n, snap in enumerate(u.values):
        f = RegularGridInterpolator((dom.xs, dom.ys), snap, method="linear")
        out[n] = m * f(pts)
    return WaveField(chart.y_domain, out, u.times, u.dt)
