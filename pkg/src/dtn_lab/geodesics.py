"""Boundary-normal geodesics, Jacobi fields, focal points and travel-time sets.

Rays are integrated in Hamiltonian form ``H(x, p) = sqrt(p^T G(x) p)`` where
``G`` is the inverse metric ``g^{jk}``; unit-speed rays keep ``H = 1``.  The
variational system for ``(dx, dp)`` runs alongside so that the Jacobian of
``(y', y_n) -> x`` is available without differencing neighbouring rays.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import brentq
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .fields import OperatorSpec, SpecError


class FocalPointError(SpecError):
    """A ray reached a focal point before the requested depth."""

    def __init__(self, y_tangential: float, y_normal: float):
        super().__init__(f"focal point on the ray from y'={y_tangential:.6g} "
                         f"at depth y_n={y_normal:.6g}")
        self.y_tangential = y_tangential
        self.y_normal = y_normal


class HamiltonianDrift(RuntimeError):
    pass


class MetricInterpolant:
    """Quintic spline interpolant of ``g^{jk}`` with analytic first and second derivatives."""

    def __init__(self, spec: OperatorSpec):
        dom = spec.domain
        self.bounds = (dom.xs[0], dom.xs[-1], dom.ys[0], dom.ys[-1])
        G = spec.metric_inverse
        k = 5 if min(dom.nx, dom.ny) > 5 else 3
        self._sp = [RectBivariateSpline(dom.xs, dom.ys, G[a, b], kx=k, ky=k, s=0)
                    for a, b in ((0, 0), (0, 1), (1, 1))]

    def inside(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        x0, x1, y0, y1 = self.bounds
        return ((x[:, 0] >= x0 - tol) & (x[:, 0] <= x1 + tol)
                & (x[:, 1] >= y0 - tol) & (x[:, 1] <= y1 + tol))

    def _sym(self, vals):
        g11, g12, g22 = vals
        return np.array([[g11, g12], [g12, g22]])

    def evaluate(self, x: np.ndarray):
        """``G (2,2,N)``, ``dG[m] (2,2,2,N)`` and ``d2G[m,l] (2,2,2,2,N)`` at points ``(N,2)``."""
        x0, x1, y0, y1 = self.bounds
        a = np.clip(x[:, 0], x0, x1)
        b = np.clip(x[:, 1], y0, y1)

        def ev(dx, dy):
            return self._sym([sp.ev(a, b, dx=dx, dy=dy) for sp in self._sp])

        G = ev(0, 0)
        dG = np.stack([ev(1, 0), ev(0, 1)])
        dxy = ev(1, 1)
        d2G = np.stack([np.stack([ev(2, 0), dxy]), np.stack([dxy, ev(0, 2)])])
        return G, dG, d2G


@dataclass(frozen=True)
class BoundaryCurve:
    """Arclength-parametrized boundary piece: a horizontal line or a circle.

    ``normal`` is the inward unit normal in the Euclidean sense; the launch
    covector is rescaled to unit metric length.
    """

    kind: str
    origin: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    @classmethod
    def bottom(cls, y0: float = 0.0) -> "BoundaryCurve":
        return cls("line", (0.0, float(y0)))

    @classmethod
    def circle(cls, center=(0.0, 0.0), radius: float = 1.0) -> "BoundaryCurve":
        return cls("circle", (float(center[0]), float(center[1])), float(radius))

    def point(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "line":
            return np.stack([s + self.origin[0], self.origin[1] + 0 * s], -1)
        th = s / self.radius
        return np.stack([self.origin[0] + self.radius * np.cos(th),
                         self.origin[1] + self.radius * np.sin(th)], -1)

    def tangent(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "line":
            return np.stack([1 + 0 * s, 0 * s], -1)
        th = s / self.radius
        return np.stack([-np.sin(th), np.cos(th)], -1)

    def conormal(self, s):
        """Inward Euclidean covector annihilating the tangent."""
        s = np.asarray(s, dtype=float)
        if self.kind == "line":
            return np.stack([0 * s, 1 + 0 * s], -1)
        th = s / self.radius
        return np.stack([-np.cos(th), -np.sin(th)], -1)

    def conormal_derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "line":
            return np.zeros(s.shape + (2,))
        th = s / self.radius
        return np.stack([np.sin(th), -np.cos(th)], -1) / self.radius


@dataclass
class GeodesicRay:
    """One boundary-normal ray sampled at ``t`` (arclength = depth ``y_n``)."""

    y_tangential: float
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    jacobian: np.ndarray
    hamiltonian: np.ndarray
    exited: bool
    focal_times: list[float] = field(default_factory=list)

    @property
    def det_jacobian(self) -> np.ndarray:
        J = self.jacobian
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]


def _rhs(metric: MetricInterpolant, state: np.ndarray) -> np.ndarray:
    """Geodesic flow plus its linearization; ``state`` is ``(N, 8)`` = x, p, dx, dp."""
    x, p, dx, dp = state[:, 0:2], state[:, 2:4], state[:, 4:6], state[:, 6:8]
    G, dG, d2G = metric.evaluate(x)
    Gp = np.einsum("abn,nb->na", G, p)
    H = np.sqrt(np.einsum("na,na->n", p, Gp))
    pdGp = np.einsum("na,mabn,nb->nm", p, dG, p)              # p . d_m G . p
    dGp = np.einsum("mabn,nb->nam", dG, p)                    # (d_m G p)_a
    xdot = Gp / H[:, None]
    pdot = -pdGp / (2 * H[:, None])
    H3 = H ** 3
    Hpp = np.moveaxis(G, -1, 0) / H[:, None, None] - Gp[:, :, None] * Gp[:, None, :] / H3[:, None, None]
    Hpx = dGp / H[:, None, None] - Gp[:, :, None] * pdGp[:, None, :] / (2 * H3[:, None, None])
    pd2Gp = np.einsum("na,mlabn,nb->nml", p, d2G, p)
    Hxx = pd2Gp / (2 * H[:, None, None]) - pdGp[:, :, None] * pdGp[:, None, :] / (4 * H3[:, None, None])
    ddx = np.einsum("nam,nm->na", Hpx, dx) + np.einsum("nab,nb->na", Hpp, dp)
    ddp = -np.einsum("nml,nl->nm", Hxx, dx) - np.einsum("nam,na->nm", Hpx, dp)
    return np.concatenate([xdot, pdot, ddx, ddp], axis=1)


def _initial_state(metric: MetricInterpolant, curve: BoundaryCurve, s: np.ndarray) -> np.ndarray:
    x0 = curve.point(s)
    nu = curve.conormal(s)
    dnu = curve.conormal_derivative(s)
    G, dG, _ = metric.evaluate(x0)
    Gnu = np.einsum("abn,nb->na", G, nu)
    q = np.einsum("na,na->n", nu, Gnu)
    p0 = nu / np.sqrt(q)[:, None]
    # d/ds of p0 = nu / sqrt(nu.G(x(s)).nu)
    tau = curve.tangent(s)
    dq = (2 * np.einsum("na,na->n", dnu, Gnu)
          + np.einsum("na,mabn,nb,nm->n", nu, dG, nu, tau))
    dp0 = dnu / np.sqrt(q)[:, None] - nu * (0.5 * dq / q ** 1.5)[:, None]
    return np.concatenate([x0, p0, tau, dp0], axis=1)


def flow_fan(spec: OperatorSpec, curve: BoundaryCurve, s: np.ndarray, t_max: float, dt: float,
             *, substeps: int = 1, tol_h: float = 1e-8, max_halvings: int = 3,
             metric: MetricInterpolant | None = None) -> list[GeodesicRay]:
    """RK4 integration of a fan of rays launched from ``curve`` at arclengths ``s``.

    Samples are returned every ``dt`` up to the first multiple of ``dt`` at or
    beyond ``t_max``; each sample interval uses ``substeps``
    RK4 steps, doubled (up to ``max_halvings`` times) while ``|H - 1| > tol_h``.
    Rays stop at the first sample outside the coefficient rectangle.
    """
    metric = metric or MetricInterpolant(spec)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if dt <= 0 or t_max <= 0:
        raise SpecError("t_max and dt must be positive")
    nt = int(np.ceil(t_max / dt - 1e-9))
    for attempt in range(max_halvings + 1):
        k = substeps * 2 ** attempt
        h = dt / k
        state = _initial_state(metric, curve, s)
        out = np.empty((nt + 1,) + state.shape)
        out[0] = state
        alive = np.ones(len(s), dtype=bool)
        last = np.full(len(s), nt)
        for m in range(1, nt + 1):
            st = state[alive]
            for _ in range(k):
                k1 = _rhs(metric, st)
                k2 = _rhs(metric, st + 0.5 * h * k1)
                k3 = _rhs(metric, st + 0.5 * h * k2)
                k4 = _rhs(metric, st + h * k3)
                st = st + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            state[alive] = st
            out[m] = state
            gone = alive & ~metric.inside(state[:, :2], 1e-12)
            last[gone] = m
            alive &= ~gone
            if not alive.any():
                out[m + 1:] = state
                break
        G, _, _ = metric.evaluate(out[..., :2].reshape(-1, 2))
        P = out[..., 2:4].reshape(-1, 2)
        H = np.sqrt(np.einsum("na,abn,nb->n", P, G, P)).reshape(nt + 1, len(s))
        drift = max((np.abs(H[: last[i] + 1, i] - 1).max() for i in range(len(s))), default=0.0)
        if drift <= tol_h:
            break
    else:
        raise HamiltonianDrift(f"|H - 1| = {drift:.3g} exceeds {tol_h:g} after step halving")
    t = dt * np.arange(nt + 1)
    rays = []
    for i, si in enumerate(s):
        n = last[i] + 1
        J = np.stack([out[:n, i, 4:6], _xdot(metric, out[:n, i, :4])], axis=-1)
        rays.append(GeodesicRay(float(si), t[:n], out[:n, i, :2], out[:n, i, 2:4], J,
                                H[:n, i], bool(last[i] < nt)))
    return rays


def _xdot(metric: MetricInterpolant, xp: np.ndarray) -> np.ndarray:
    G, _, _ = metric.evaluate(xp[:, :2])
    Gp = np.einsum("abn,nb->na", G, xp[:, 2:4])
    H = np.sqrt(np.einsum("na,na->n", xp[:, 2:4], Gp))
    return Gp / H[:, None]


def flow_geodesic(spec: OperatorSpec, curve: BoundaryCurve, s: float, t_max: float, dt: float,
                  **kw) -> GeodesicRay:
    return flow_fan(spec, curve, np.array([s]), t_max, dt, **kw)[0]


def detect_focal(ray: GeodesicRay, eps: float | None = None) -> list[float]:
    """Zeros of ``det J`` along the ray.

    Sign changes are refined on a cubic interpolant; touching zeros are caught
    by a ``|det J| < eps * max|det J|`` fallback at local minima.
    """
    det = ray.det_jacobian
    t = ray.t
    if len(t) < 2:
        return []
    if eps is None:
        eps = 1e-6
    spline = CubicSpline(t, det) if len(t) >= 4 else None
    roots = []
    for k in np.nonzero(np.sign(det[:-1]) * np.sign(det[1:]) < 0)[0]:
        f = spline if spline is not None else (lambda tt, k=k: np.interp(tt, t, det))
        a, b = t[k], t[k + 1]
        if np.sign(f(a)) * np.sign(f(b)) < 0:
            roots.append(float(brentq(f, a, b, xtol=1e-14)))
        else:
            roots.append(float(a - det[k] * (b - a) / (det[k + 1] - det[k])))
    scale = np.abs(det).max()
    absd = np.abs(det)
    for k in range(1, len(t) - 1):
        if absd[k] <= absd[k - 1] and absd[k] <= absd[k + 1] and absd[k] < eps * scale:
            if not any(abs(r - t[k]) <= (t[1] - t[0]) for r in roots):
                roots.append(float(t[k]))
    if absd[-1] < eps * scale and not any(abs(r - t[-1]) <= (t[1] - t[0]) for r in roots):
        roots.append(float(t[-1]))
    return sorted(roots)


def export_rays(rays: list[GeodesicRay], path) -> None:
    """CSV with one row per ray sample: ray, y_tangential, t, x1, x2, p1, p2, detJ."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ray", "y_tangential", "t", "x1", "x2", "p1", "p2", "detJ"])
        for i, r in enumerate(rays):
            d = r.det_jacobian
            for k in range(len(r.t)):
                w.writerow([i, repr(r.y_tangential)]
                           + [repr(float(v)) for v in (r.t[k], r.x[k, 0], r.x[k, 1],
                                                       r.p[k, 0], r.p[k, 1], d[k])])


# -- travel-time distance ------------------------------------------------------

_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1))


def graph_edges(spec: OperatorSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """8-neighbour edges ``(a, b, w)`` with trapezoid metric lengths.

    ``w = (|e|_{g(a)} + |e|_{g(b)}) / 2`` where ``|e|_g^2 = e^T g_{jk} e`` and
    ``g_{jk}`` is the inverse of ``g^{jk}``.  Node index is ``i * ny + j``.
    """
    dom = spec.domain
    nx, ny, h = dom.nx, dom.ny, dom.h
    G = spec.metric_inverse
    det = G[0, 0] * G[1, 1] - G[0, 1] ** 2
    M = np.array([[G[1, 1], -G[0, 1]], [-G[0, 1], G[0, 0]]]) / det
    idx = np.arange(nx * ny).reshape(nx, ny)
    A, B, W = [], [], []
    for di, dj in _OFFSETS:
        i0, i1 = 0, nx - di
        j0, j1 = max(0, -dj), ny - max(0, dj)
        sa = (slice(i0, i1), slice(j0, j1))
        sb = (slice(i0 + di, i1 + di), slice(j0 + dj, j1 + dj))
        e = np.array([di * h, dj * h])

        def length(sl):
            q = M[0, 0][sl] * e[0] ** 2 + 2 * M[0, 1][sl] * e[0] * e[1] + M[1, 1][sl] * e[1] ** 2
            return np.sqrt(q)

        A.append(idx[sa].ravel())
        B.append(idx[sb].ravel())
        W.append((0.5 * (length(sa) + length(sb))).ravel())
    return np.concatenate(A), np.concatenate(B), np.concatenate(W)


@numba.njit(cache=True)
def _triangle_update(da, db, v0, v1, w0, w1, m00, m01, m11):
    # min over lam in [0,1] of da + lam (db - da) + |v + lam w|_M
    a = w0 * (m00 * w0 + m01 * w1) + w1 * (m01 * w0 + m11 * w1)
    b = w0 * (m00 * v0 + m01 * v1) + w1 * (m01 * v0 + m11 * v1)
    c = v0 * (m00 * v0 + m01 * v1) + v1 * (m01 * v0 + m11 * v1)
    delta = db - da
    best = min(da + np.sqrt(c), db + np.sqrt(max(a + 2 * b + c, 0.0)))
    if delta * delta < a:
        disc = (a * c - b * b) * delta * delta / (a - delta * delta)
        if disc >= 0:
            lam = (-b - np.sign(delta) * np.sqrt(disc)) / a
            if 0.0 < lam < 1.0:
                q = a * lam * lam + 2 * b * lam + c
                best = min(best, da + lam * delta + np.sqrt(max(q, 0.0)))
    return best


@numba.njit(cache=True)
def _sweep(d, fixed, M, h, max_passes, tol):
    nx, ny = d.shape
    di = np.array([1, 1, 0, -1, -1, -1, 0, 1])
    dj = np.array([0, 1, 1, 1, 0, -1, -1, -1])
    for it in range(max_passes):
        change = 0.0
        for order in range(4):
            for ii in range(nx):
                i = ii if order % 2 == 0 else nx - 1 - ii
                for jj in range(ny):
                    j = jj if order < 2 else ny - 1 - jj
                    if fixed[i, j]:
                        continue
                    best = d[i, j]
                    m00, m01, m11 = M[0, 0, i, j], M[0, 1, i, j], M[1, 1, i, j]
                    for k in range(8):
                        ia, ja = i + di[k], j + dj[k]
                        ib, jb = i + di[(k + 1) % 8], j + dj[(k + 1) % 8]
                        if ia < 0 or ia >= nx or ja < 0 or ja >= ny:
                            continue
                        if ib < 0 or ib >= nx or jb < 0 or jb >= ny:
                            continue
                        v0, v1 = di[k] * h, dj[k] * h
                        w0, w1 = (di[(k + 1) % 8] - di[k]) * h, (dj[(k + 1) % 8] - dj[k]) * h
                        cand = _triangle_update(d[ia, ja], d[ib, jb], v0, v1, w0, w1, m00, m01, m11)
                        if cand < best:
                            best = cand
                    if best < d[i, j]:
                        change = max(change, d[i, j] - best)
                        d[i, j] = best
        if change < tol:
            return it + 1
    return max_passes


def geodesic_distance(spec: OperatorSpec, sources: np.ndarray, *, refine: bool = True,
                      max_passes: int = 50) -> np.ndarray:
    """Travel-time distance from the node set ``sources`` (boolean ``(nx, ny)`` mask).

    Dijkstra on the 8-neighbour graph gives an upper bound that fast-sweeping
    triangle updates then lower to a consistent eikonal solution.
    """
    dom = spec.domain
    sources = np.asarray(sources, dtype=bool)
    if sources.shape != dom.shape or not sources.any():
        raise SpecError("sources must be a non-empty node mask on the grid")
    a, b, w = graph_edges(spec)
    n = dom.nx * dom.ny
    graph = coo_matrix((w, (a, b)), shape=(n, n)).tocsr()
    d = dijkstra(graph, directed=False, indices=np.flatnonzero(sources), min_only=True)
    d = d.reshape(dom.shape)
    if refine:
        G = spec.metric_inverse
        det = G[0, 0] * G[1, 1] - G[0, 1] ** 2
        M = np.array([[G[1, 1], -G[0, 1]], [-G[0, 1], G[0, 0]]]) / det
        d = np.ascontiguousarray(d)
        _sweep(d, sources, np.ascontiguousarray(M), dom.h, max_passes, 1e-13)
    return d


@dataclass(frozen=True)
class InfluenceSets:
    """Boolean masks on the grid, with per-time-level masks on ``times``.

    ``domain_of_influence[k]`` is ``{d(x, gamma) <= t_k}``; ``g_set`` marks
    bottom nodes with ``d(x, gamma) <= T``; ``x20[k]`` is
    ``{d(x, G) <= t_k <= T - y_n}`` and ``delta`` its projection.
    """

    times: np.ndarray
    T: float
    distance_gamma: np.ndarray
    distance_g: np.ndarray
    normal_coordinate: np.ndarray
    domain_of_influence: np.ndarray
    g_set: np.ndarray
    x20: np.ndarray
    delta: np.ndarray
    partial: bool


def influence_sets(spec: OperatorSpec, gamma: np.ndarray, T: float, times: np.ndarray | None = None,
                   *, normal_coordinate: np.ndarray | None = None,
                   chart_mask: np.ndarray | None = None) -> InfluenceSets:
    """Travel-time sets for boundary nodes ``gamma`` (boolean mask) up to time ``T``.

    Distances are graph distances (no sweep refinement) so that the sets are
    reproducible exactly by any shortest-path method on the same graph.  The
    normal coordinate defaults to the distance to the whole bottom side.
    """
    dom = spec.domain
    gamma = np.asarray(gamma, dtype=bool)
    if not (gamma & dom.boundary_mask()).any() or (gamma & ~dom.boundary_mask()).any():
        raise SpecError("gamma must be a non-empty set of boundary nodes")
    if times is None:
        times = np.linspace(0.0, T, 33)
    times = np.asarray(times, dtype=float)
    d_gamma = geodesic_distance(spec, gamma, refine=False)
    bottom = np.zeros(dom.shape, dtype=bool)
    bottom[:, 0] = True
    g_set = bottom & (d_gamma <= T)
    if normal_coordinate is None:
        normal_coordinate = geodesic_distance(spec, bottom, refine=False)
    if g_set.any():
        d_g = geodesic_distance(spec, g_set, refine=False)
    else:
        d_g = np.full(dom.shape, np.inf)
    doi = d_gamma[None] <= times[:, None, None]
    yn = normal_coordinate
    tt = times[:, None, None]
    x20 = (d_g[None] <= tt) & (tt <= (T - yn)[None]) & (tt > 0)
    delta = (d_g <= T - yn) & (T - yn > 0)
    partial = bool(chart_mask is not None and (delta & ~chart_mask).any())
    return InfluenceSets(times, float(T), d_gamma, d_g, yn, doi, g_set, x20, delta, partial)
