"""Gauge group elements, boundary-fixing diffeomorphisms and the induced operator maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .fields import Domain, OperatorSpec, SpecError
from .recipes import bump, bump_d1
from .wave import WaveField


def _closure_mask(domain: Domain) -> np.ndarray:
    """Bottom-side nodes in the closure of gamma0."""
    a, b = domain.gamma0 if domain.gamma0 is not None else (np.inf, -np.inf)
    m = np.zeros(domain.shape, dtype=bool)
    m[:, 0] = (domain.xs >= a - 1e-12) & (domain.xs <= b + 1e-12)
    return m


@dataclass(frozen=True, eq=False)
class GaugeElement:
    """Nowhere-vanishing ``c`` on the grid plus its log-gradient ``c^{-1} grad c``."""

    domain: Domain
    values: np.ndarray
    dlog: np.ndarray
    fixed_on_gamma0: bool

    def __post_init__(self):
        c = np.asarray(self.values, dtype=complex)
        if c.shape != self.domain.shape or self.dlog.shape != (2,) + self.domain.shape:
            raise SpecError("gauge element shape does not match the grid")
        if np.abs(c).min() <= 1e-12 * max(np.abs(c).max(), 1.0):
            raise SpecError("gauge element vanishes somewhere")
        if self.fixed_on_gamma0:
            m = _closure_mask(self.domain)
            if np.abs(c[m] - 1).max(initial=0.0) > 1e-10:
                raise SpecError("gauge element flagged as fixing gamma0 but c != 1 there")
        object.__setattr__(self, "values", c)

    @classmethod
    def identity(cls, domain: Domain) -> "GaugeElement":
        return cls(domain, np.ones(domain.shape, complex), np.zeros((2,) + domain.shape, complex),
                   True)

    @classmethod
    def from_phase(cls, domain: Domain, theta: Callable, grad: Callable | None = None,
                   fixed_on_gamma0: bool | None = None) -> "GaugeElement":
        """``c = exp(i theta)``; ``grad`` gives the analytic gradient of ``theta``."""
        X1, X2 = domain.mesh()
        th = np.asarray(theta(X1, X2), dtype=float) + np.zeros(domain.shape)
        if grad is None:
            g = fd_gradient(th, domain.h)
        else:
            g1, g2 = grad(X1, X2)
            g = np.stack([g1 + 0 * X1, g2 + 0 * X1])
        c = np.exp(1j * th)
        if fixed_on_gamma0 is None:
            fixed_on_gamma0 = bool(np.abs(c[_closure_mask(domain)] - 1).max(initial=0) < 1e-10)
        return cls(domain, c, 1j * g, fixed_on_gamma0)

    @classmethod
    def from_values(cls, domain: Domain, c: np.ndarray,
                    fixed_on_gamma0: bool | None = None) -> "GaugeElement":
        c = np.asarray(c, dtype=complex)
        if np.abs(c).min() == 0:
            raise SpecError("gauge element vanishes somewhere")
        dc = fd_gradient(c, domain.h)
        if fixed_on_gamma0 is None:
            fixed_on_gamma0 = bool(np.abs(c[_closure_mask(domain)] - 1).max(initial=0) < 1e-10)
        return cls(domain, c, dc / c, fixed_on_gamma0)

    @property
    def unimodular(self) -> bool:
        return bool(np.allclose(np.abs(self.values), 1.0, atol=1e-13))

    def __mul__(self, other: "GaugeElement") -> "GaugeElement":
        return GaugeElement(self.domain, self.values * other.values, self.dlog + other.dlog,
                            self.fixed_on_gamma0 and other.fixed_on_gamma0)


def fd_gradient(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central differences, fourth-order one-sided near the edges."""
    out = []
    for axis in (0, 1):
        f_ = np.moveaxis(f, axis, 0)
        d = np.empty_like(f_)
        d[2:-2] = (f_[:-4] - 8 * f_[1:-3] + 8 * f_[3:-1] - f_[4:]) / (12 * h)
        for k, c in ((0, (-25, 48, -36, 16, -3)), (1, (-3, -10, 18, -6, 1))):
            d[k] = sum(cm * f_[m] for m, cm in enumerate(c)) / (12 * h)
            d[-1 - k] = -sum(cm * f_[-1 - m] for m, cm in enumerate(c)) / (12 * h)
        out.append(np.moveaxis(d, 0, axis))
    return np.stack(out)


def gauge_transform_operator(spec: OperatorSpec, c: GaugeElement) -> OperatorSpec:
    """Replace ``A`` by ``A - i c^{-1} grad c``; metric and ``V`` are unchanged."""
    if c.domain.shape != spec.domain.shape:
        raise SpecError("gauge element and operator live on different grids")
    if not c.dlog.any():
        return spec
    A = spec.magnetic - 1j * c.dlog
    if c.unimodular:
        A = A.real
    return spec.replace(magnetic=A)


def gauge_transform_solution(u, c: GaugeElement):
    """``u' = u / c``; accepts a WaveField or an array with leading/trailing extra axes."""
    if isinstance(u, WaveField):
        return WaveField(u.domain, u.values / c.values[None], u.times, u.dt)
    u = np.asarray(u)
    if u.shape[:2] == c.domain.shape:
        return u / c.values.reshape(c.domain.shape + (1,) * (u.ndim - 2))
    if u.shape[-2:] == c.domain.shape:
        return u / c.values
    raise SpecError("solution shape does not match the gauge element")


# -- diffeomorphisms -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Diffeo:
    """Closed-form map ``x = phi(z)`` with Jacobian ``J[a, b] = d phi_a / d z_b``.

    ``inverse`` defaults to Newton iteration on ``forward``.
    """

    forward: Callable
    jacobian: Callable
    identity_on_gamma0: bool
    inverse_fn: Callable | None = None
    name: str = "diffeo"

    @property
    def is_identity(self) -> bool:
        return self.name == "id"

    def inverse(self, x1, x2, tol: float = 1e-14, maxiter: int = 50):
        if self.inverse_fn is not None:
            return self.inverse_fn(x1, x2)
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        z1, z2 = x1.copy(), x2.copy()
        for _ in range(maxiter):
            f1, f2 = self.forward(z1, z2)
            r1, r2 = f1 - x1, f2 - x2
            if max(np.abs(r1).max(initial=0), np.abs(r2).max(initial=0)) < tol:
                break
            J = self.jacobian(z1, z2)
            det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
            z1 = z1 - (J[1, 1] * r1 - J[0, 1] * r2) / det
            z2 = z2 - (J[0, 0] * r2 - J[1, 0] * r1) / det
        return z1, z2

    def check(self, domain: Domain, margin: float = 1e-3) -> None:
        """Certify ``det J > margin``, invertibility and mapping into the rectangle."""
        Z1, Z2 = domain.mesh()
        J = self.jacobian(Z1, Z2)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if det.min() <= margin:
            raise SpecError(f"{self.name}: det Dphi = {det.min():.3g} is not positive")
        X1, X2 = self.forward(Z1, Z2)
        tol = 1e-9
        if (X1.min() < domain.xs[0] - tol or X1.max() > domain.xs[-1] + tol
                or X2.min() < domain.ys[0] - tol or X2.max() > domain.ys[-1] + tol):
            raise SpecError(f"{self.name}: image leaves the domain")
        B1, B2 = self.inverse(X1, X2)
        if max(np.abs(B1 - Z1).max(), np.abs(B2 - Z2).max()) > 1e-9:
            raise SpecError(f"{self.name}: inverse does not round-trip")
        if self.identity_on_gamma0 and domain.gamma0 is not None:
            m = _closure_mask(domain)
            if max(np.abs(X1 - Z1)[m].max(initial=0), np.abs(X2 - Z2)[m].max(initial=0)) > 1e-12:
                raise SpecError(f"{self.name}: flagged identity on gamma0 but moves it")

    def compose(self, other: "Diffeo") -> "Diffeo":
        """``self o other``: first ``other``, then ``self``."""
        def fwd(z1, z2):
            return self.forward(*other.forward(z1, z2))

        def jac(z1, z2):
            w1, w2 = other.forward(z1, z2)
            return np.einsum("ab...,bc...->ac...", self.jacobian(w1, w2), other.jacobian(z1, z2))

        def inv(x1, x2):
            return other.inverse(*self.inverse(x1, x2))

        return Diffeo(fwd, jac, self.identity_on_gamma0 and other.identity_on_gamma0, inv,
                      f"{self.name}o{other.name}")


def identity_diffeo() -> Diffeo:
    return Diffeo(lambda z1, z2: (np.asarray(z1, float), np.asarray(z2, float)),
                  lambda z1, z2: _stackJ(np.ones_like(z1, float), np.zeros_like(z1, float),
                                         np.zeros_like(z1, float), np.ones_like(z1, float)),
                  True, lambda x1, x2: (np.asarray(x1, float), np.asarray(x2, float)), "id")


def _stackJ(a, b, c, d):
    return np.array([[a, b], [c, d]])


def bump_diffeo(center, radius: float, amplitude: float, direction) -> Diffeo:
    """``phi(z) = z + amplitude * bump(|z - center|/radius) * e`` (compact interior support)."""
    cx, cy = map(float, center)
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)

    def fwd(z1, z2):
        z1 = np.asarray(z1, float)
        z2 = np.asarray(z2, float)
        b = amplitude * bump(np.hypot(z1 - cx, z2 - cy) / radius)
        return z1 + b * e[0], z2 + b * e[1]

    def jac(z1, z2):
        z1 = np.asarray(z1, float)
        z2 = np.asarray(z2, float)
        rho = np.hypot(z1 - cx, z2 - cy)
        db = amplitude * bump_d1(rho / radius) / radius
        with np.errstate(invalid="ignore", divide="ignore"):
            g1 = np.where(rho > 0, db * (z1 - cx) / rho, 0.0)
            g2 = np.where(rho > 0, db * (z2 - cy) / rho, 0.0)
        return _stackJ(1 + e[0] * g1, e[0] * g2, e[1] * g1, 1 + e[1] * g2)

    return Diffeo(fwd, jac, True, None, "bump")


def shear_diffeo(amplitude: float, depth: float) -> Diffeo:
    """Tangential slide of the bottom side, ``x1 + a sin(pi x1) exp(-(x2/depth)^2)``.

    Maps the unit square onto itself but moves gamma0: the deliberate
    violation used by the negative controls.
    """
    def w(z2):
        return np.exp(-(np.asarray(z2, float) / depth) ** 2)

    def fwd(z1, z2):
        z1 = np.asarray(z1, float)
        return z1 + amplitude * np.sin(np.pi * z1) * w(z2), np.asarray(z2, float) + 0 * z1

    def jac(z1, z2):
        z1 = np.asarray(z1, float)
        z2 = np.asarray(z2, float)
        ww = w(z2)
        dw = -2 * z2 / depth ** 2 * ww
        return _stackJ(1 + amplitude * np.pi * np.cos(np.pi * z1) * ww,
                       amplitude * np.sin(np.pi * z1) * dw,
                       0 * z1, 1 + 0 * z1)

    return Diffeo(fwd, jac, False, None, "shear")


def rotation_diffeo(center=(0.5, 0.5), quarter_turns: int = 1) -> Diffeo:
    """Rotation by ``quarter_turns * 90`` degrees; maps a centered square onto itself."""
    cx, cy = center
    k = quarter_turns % 4
    R = np.round(np.array([[np.cos(k * np.pi / 2), -np.sin(k * np.pi / 2)],
                           [np.sin(k * np.pi / 2), np.cos(k * np.pi / 2)]]))

    def fwd(z1, z2):
        d1, d2 = np.asarray(z1, float) - cx, np.asarray(z2, float) - cy
        return cx + R[0, 0] * d1 + R[0, 1] * d2, cy + R[1, 0] * d1 + R[1, 1] * d2

    def inv(x1, x2):
        d1, d2 = np.asarray(x1, float) - cx, np.asarray(x2, float) - cy
        return cx + R[0, 0] * d1 + R[1, 0] * d2, cy + R[0, 1] * d1 + R[1, 1] * d2

    def jac(z1, z2):
        o = np.ones_like(np.asarray(z1, float))
        return _stackJ(R[0, 0] * o, R[0, 1] * o, R[1, 0] * o, R[1, 1] * o)

    return Diffeo(fwd, jac, k == 0, inv, f"rot{k}")


def _interp(domain: Domain, field: np.ndarray, X1, X2) -> np.ndarray:
    """Bicubic interpolation of a grid field (complex allowed)."""
    def one(f):
        return RectBivariateSpline(domain.xs, domain.ys, f, kx=3, ky=3, s=0).ev(X1, X2)
    if np.iscomplexobj(field):
        return one(field.real) + 1j * one(field.imag)
    return one(field)


def interpolate_field(domain: Domain, field: np.ndarray, X1, X2) -> np.ndarray:
    return _interp(domain, field, X1, X2)


def pullback_operator(spec: OperatorSpec, phi: Diffeo) -> OperatorSpec:
    """Operator in the coordinates ``z`` with ``x = phi(z)``.

    ``g'(z) = J^{-1} g(phi(z)) J^{-T}``, ``A'(z) = J^T A(phi(z))`` (covector),
    ``V'(z) = V(phi(z))``; then ``L'(u o phi) = (L u) o phi``.
    """
    if phi.is_identity:
        return spec
    dom = spec.domain
    if dom.periodic_x:
        raise SpecError("pullback needs a non-periodic grid")
    Z1, Z2 = dom.mesh()
    J = phi.jacobian(Z1, Z2)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if det.min() <= 0:
        raise SpecError("det Dphi is not positive everywhere")
    X1, X2 = phi.forward(Z1, Z2)
    tol = 1e-9
    if (X1.min() < dom.xs[0] - tol or X1.max() > dom.xs[-1] + tol
            or X2.min() < dom.ys[0] - tol or X2.max() > dom.ys[-1] + tol):
        raise SpecError("phi maps the grid outside the coefficient region")
    X1 = np.clip(X1, dom.xs[0], dom.xs[-1])
    X2 = np.clip(X2, dom.ys[0], dom.ys[-1])
    G = spec.metric_inverse
    Gx = np.array([[_interp(dom, G[a, b], X1, X2) for b in range(2)] for a in range(2)])
    Gx[1, 0] = Gx[0, 1]
    Ax = np.array([_interp(dom, spec.magnetic[a], X1, X2) for a in range(2)])
    Vx = _interp(dom, spec.electric, X1, X2)
    Jinv = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / det
    Gz = np.einsum("ab...,bc...,dc...->ad...", Jinv, Gx, Jinv)
    Gz[1, 0] = Gz[0, 1]
    Az = np.einsum("ba...,b...->a...", J, Ax)
    return OperatorSpec(dom, Gz, Az, Vx, eig_bounds=spec.eig_bounds)


def compose_equivalence(spec: OperatorSpec, phi: Diffeo, c: GaugeElement) -> OperatorSpec:
    """``c o phi o spec``: pull back by ``phi``, then gauge by ``c``.

    Both must fix gamma0, as the uniqueness theorem requires.
    """
    if not phi.identity_on_gamma0 or not c.fixed_on_gamma0:
        raise SpecError("equivalence recipe must fix gamma0 (phi = I and c = 1 there)")
    return gauge_transform_operator(pullback_operator(spec, phi), c)


def pullback_solution(u: np.ndarray, domain: Domain, phi: Diffeo) -> np.ndarray:
    """``u o phi`` on the grid, bicubic in space; leading axes (e.g. time) are kept."""
    Z1, Z2 = domain.mesh()
    X1, X2 = phi.forward(Z1, Z2)
    X1 = np.clip(X1, domain.xs[0], domain.xs[-1])
    X2 = np.clip(X2, domain.ys[0], domain.ys[-1])
    u = np.asarray(u)
    if u.ndim == 2:
        return _interp(domain, u, X1, X2)
    return np.stack([_interp(domain, s, X1, X2) for s in u])
