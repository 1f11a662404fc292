"""Discretized domains, coefficient fields and the magnetic hyperbolic operator.

The spatial operator is

    L_s u = sum_{j,k} g^{-1/2} (-i d_j + A_j) g^{1/2} g^{jk} (-i d_k + A_k) u + V u

with ``g = 1/det(g^{jk})``.  It is discretized in flux form as
``L_s = g^{-1/2} K + V`` where ``K = sum B~_j a^{jk} B_k`` and ``a = sqrt(g) g^{jk}``.
Diagonal terms use edge (half-node) differences with link phases
``exp(i h A)``; the mixed terms use node-centered covariant central differences.
For real coefficients ``K`` is Hermitian, so ``L_s`` is symmetric in the
``sqrt(g)``-weighted inner product.

Arrays are indexed ``[i, j]`` with ``i`` along ``x1`` and ``j`` along ``x2``.
A trailing batch axis is allowed on every field passed to the operator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

SIDES = ("bottom", "top", "left", "right")
_NORMALS = {
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
}


class SpecError(ValueError):
    """Invalid operator specification or mismatched field shapes."""


@dataclass(frozen=True)
class Patch:
    """Contiguous set of boundary nodes on one side of a rectangular grid.

    ``index`` runs along the side: the ``i`` index for bottom/top and the
    ``j`` index for left/right.
    """

    name: str
    side: str
    index: np.ndarray

    @property
    def normal(self) -> tuple[float, float]:
        return _NORMALS[self.side]

    def __len__(self) -> int:
        return len(self.index)

    def nodes(self, domain: "Domain") -> tuple[np.ndarray, np.ndarray]:
        """Grid indices ``(i, j)`` of the patch nodes."""
        if self.side == "bottom":
            return self.index, np.zeros_like(self.index)
        if self.side == "top":
            return self.index, np.full_like(self.index, domain.ny - 1)
        if self.side == "left":
            return np.zeros_like(self.index), self.index
        return np.full_like(self.index, domain.nx - 1), self.index

    def coordinates(self, domain: "Domain") -> np.ndarray:
        """Coordinate along the side (x1 for bottom/top, x2 for left/right)."""
        axis = domain.xs if self.side in ("bottom", "top") else domain.ys
        return axis[self.index]


@dataclass(frozen=True, eq=False)
class Domain:
    """Uniform tensor grid on a rectangle, optionally periodic in ``x1``.

    ``gamma0`` is the open interval of the bottom side designated as the
    accessible boundary part.  Boundary nodes are split into the patches
    ``gamma0``, ``bottom`` (rest of the bottom side), ``top``, ``left`` and
    ``right``; corners belong to the bottom/top sides.
    """

    xs: np.ndarray
    ys: np.ndarray
    periodic_x: bool = False
    gamma0: tuple[float, float] | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 1 or ys.ndim != 1 or len(xs) < 3 or len(ys) < 3:
            raise SpecError("grid needs at least 3 nodes per direction")
        hx = np.diff(xs)
        hy = np.diff(ys)
        h = hx[0]
        if h <= 0 or not (np.allclose(hx, h, rtol=1e-9) and np.allclose(hy, h, rtol=1e-9)):
            raise SpecError("grid must be uniform with equal positive spacing in x1 and x2")
        xs.flags.writeable = False
        ys.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if self.gamma0 is not None:
            a, b = self.gamma0
            if not a < b:
                raise SpecError("gamma0 must be a nonempty interval")
            if not np.any((xs > a) & (xs < b)):
                raise SpecError("gamma0 contains no grid node")

    @classmethod
    def rectangle(cls, x0: float, x1: float, y0: float, y1: float, n: int,
                  periodic_x: bool = False, gamma0=None) -> "Domain":
        """Grid with spacing ``h = (y1 - y0)/n``; the x-extent must be a multiple of h."""
        h = (y1 - y0) / n
        mx = (x1 - x0) / h
        if abs(mx - round(mx)) > 1e-9:
            raise SpecError("x-extent is not a multiple of the grid spacing")
        mx = int(round(mx))
        if periodic_x:
            xs = x0 + h * np.arange(mx)
        else:
            xs = x0 + h * np.arange(mx + 1)
        ys = y0 + h * np.arange(n + 1)
        return cls(xs, ys, periodic_x=periodic_x, gamma0=gamma0)

    @classmethod
    def unit_square(cls, n: int, periodic_x: bool = False, gamma0=(0.0, 1.0)) -> "Domain":
        return cls.rectangle(0.0, 1.0, 0.0, 1.0, n, periodic_x=periodic_x, gamma0=gamma0)

    @property
    def h(self) -> float:
        return float(self.xs[1] - self.xs[0])

    @property
    def nx(self) -> int:
        return len(self.xs)

    @property
    def ny(self) -> int:
        return len(self.ys)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        if self.periodic_x:
            m[:, 1:-1] = True
        else:
            m[1:-1, 1:-1] = True
        return m

    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask()

    def side(self, side: str) -> Patch:
        if side not in SIDES:
            raise SpecError(f"unknown side {side!r}")
        if side in ("bottom", "top"):
            return Patch(side, side, np.arange(self.nx))
        if self.periodic_x:
            raise SpecError("periodic domain has no left/right sides")
        return Patch(side, side, np.arange(1, self.ny - 1))

    def patch(self, name: str) -> Patch:
        """Named boundary patch; ``gamma0`` and ``bottom`` split the bottom side."""
        if name == "gamma0":
            if self.gamma0 is None:
                raise SpecError("domain has no gamma0")
            a, b = self.gamma0
            idx = np.flatnonzero((self.xs > a) & (self.xs < b))
            return Patch("gamma0", "bottom", idx)
        if name == "bottom" and self.gamma0 is not None:
            a, b = self.gamma0
            idx = np.flatnonzero(~((self.xs > a) & (self.xs < b)))
            return Patch("bottom", "bottom", idx)
        return self.side(name)

    def patches(self) -> dict[str, Patch]:
        names = ["bottom", "top"] if self.periodic_x else ["bottom", "top", "left", "right"]
        if self.gamma0 is not None:
            names.insert(0, "gamma0")
        out = {}
        for n in names:
            p = self.patch(n)
            if len(p):
                out[n] = p
        return out

    def subdomain(self, i0: int, i1: int, j0: int, j1: int, gamma0=None) -> "Domain":
        """Sub-rectangle sharing the parent's node coordinates exactly (inclusive slices)."""
        if self.periodic_x and (i0 != 0 or i1 != self.nx - 1):
            raise SpecError("cannot cut a periodic direction")
        return Domain(self.xs[i0:i1 + 1].copy(), self.ys[j0:j1 + 1].copy(),
                      periodic_x=self.periodic_x, gamma0=gamma0)

    def header(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "h": self.h,
                "x0": float(self.xs[0]), "y0": float(self.ys[0]),
                "periodic_x": self.periodic_x,
                "gamma0": list(self.gamma0) if self.gamma0 is not None else None}


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """Grid-sampled coefficients of the operator.

    ``metric_inverse`` has shape ``(2, 2, nx, ny)`` and holds ``g^{jk}``;
    ``magnetic`` has shape ``(2, nx, ny)``; ``electric`` has shape ``(nx, ny)``.
    The volume factor ``g = 1/det g^{jk}`` is derived, never stored independently.
    """

    domain: Domain
    metric_inverse: np.ndarray
    magnetic: np.ndarray
    electric: np.ndarray
    eig_bounds: tuple[float, float] = (1e-3, 1e3)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        shape = self.domain.shape
        G = np.asarray(self.metric_inverse)
        A = np.asarray(self.magnetic)
        V = np.asarray(self.electric)
        if G.shape != (2, 2) + shape or A.shape != (2,) + shape or V.shape != shape:
            raise SpecError(
                f"coefficient shapes {G.shape}, {A.shape}, {V.shape} do not match grid {shape}")
        if np.iscomplexobj(G):
            if np.abs(G.imag).max() > 0:
                raise SpecError("metric must be real")
            G = G.real
        if not np.allclose(G[0, 1], G[1, 0], rtol=0, atol=1e-13):
            raise SpecError("metric_inverse is not symmetric")
        lo, hi = eigenvalue_range(G)
        lam_min, lam_max = self.eig_bounds
        if not np.all(np.isfinite(G)) or lo <= 0:
            raise SpecError("metric_inverse is not positive definite at every node")
        if lo < lam_min or hi > lam_max:
            raise SpecError(
                f"metric eigenvalues [{lo:.3g}, {hi:.3g}] outside [{lam_min}, {lam_max}]")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(V))):
            raise SpecError("non-finite potential")
        # real dtypes stay real; gauge transforms with |c| != 1 produce complex A
        A = A.real.astype(float) if np.iscomplexobj(A) and not np.abs(A.imag).any() else A
        V = V.real.astype(float) if np.iscomplexobj(V) and not np.abs(V.imag).any() else V
        object.__setattr__(self, "metric_inverse", _frozen(G, float))
        object.__setattr__(self, "magnetic", _frozen(A))
        object.__setattr__(self, "electric", _frozen(V))

    @classmethod
    def from_functions(cls, domain: Domain, metric=None, magnetic=None, electric=None,
                       eig_bounds=(1e-3, 1e3)) -> "OperatorSpec":
        """Sample analytic coefficients on the grid.

        ``metric(x1, x2)`` returns ``(g11, g12, g22)``; ``magnetic`` returns
        ``(A1, A2)``; ``electric`` returns ``V``.  ``None`` means flat/zero.
        """
        X1, X2 = domain.mesh()
        G = np.zeros((2, 2) + domain.shape)
        if metric is None:
            G[0, 0] = G[1, 1] = 1.0
        else:
            g11, g12, g22 = metric(X1, X2)
            G[0, 0] = np.broadcast_to(g11, domain.shape)
            G[0, 1] = G[1, 0] = np.broadcast_to(g12, domain.shape)
            G[1, 1] = np.broadcast_to(g22, domain.shape)
        A = np.zeros((2,) + domain.shape)
        if magnetic is not None:
            a1, a2 = magnetic(X1, X2)
            A = np.stack([np.broadcast_to(a1, domain.shape), np.broadcast_to(a2, domain.shape)])
        V = np.zeros(domain.shape) if electric is None else np.broadcast_to(
            electric(X1, X2), domain.shape)
        return cls(domain, G, A, V, eig_bounds=eig_bounds)

    def replace(self, **kw) -> "OperatorSpec":
        args = dict(domain=self.domain, metric_inverse=self.metric_inverse,
                    magnetic=self.magnetic, electric=self.electric, eig_bounds=self.eig_bounds)
        args.update(kw)
        return OperatorSpec(**args)

    @property
    def volume_factor(self) -> np.ndarray:
        if "g" not in self._cache:
            self._cache["g"] = _frozen(1.0 / det2(self.metric_inverse))
        return self._cache["g"]

    @property
    def selfadjoint(self) -> bool:
        return not (np.iscomplexobj(self.magnetic) or np.iscomplexobj(self.electric))

    @property
    def lambda_max(self) -> float:
        return eigenvalue_range(self.metric_inverse)[1]

    def stencil(self) -> "Stencil":
        if "stencil" not in self._cache:
            self._cache["stencil"] = assemble_stencil(self)
        return self._cache["stencil"]

    def restrict(self, sub: Domain, i0: int, j0: int) -> "OperatorSpec":
        """Coefficients on a sub-grid whose first node is ``(i0, j0)`` of this grid."""
        si = slice(i0, i0 + sub.nx)
        sj = slice(j0, j0 + sub.ny)
        return OperatorSpec(sub, self.metric_inverse[:, :, si, sj], self.magnetic[:, si, sj],
                            self.electric[si, sj], eig_bounds=self.eig_bounds)


def det2(G: np.ndarray) -> np.ndarray:
    return G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]


def eigenvalue_range(G: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric 2x2 field."""
    tr = 0.5 * (G[0, 0] + G[1, 1])
    disc = np.sqrt(np.maximum((0.5 * (G[0, 0] - G[1, 1])) ** 2 + G[0, 1] ** 2, 0.0))
    return float(np.min(tr - disc)), float(np.max(tr + disc))


@dataclass(frozen=True, eq=False)
class Stencil:
    """Nine-point weights of ``L_s`` on the update core.

    ``weights[di + 1, dj + 1]`` multiplies ``u[i + di, j + dj]``.  The core is
    ``i in 1..nx-2`` (all ``i`` when periodic) and ``j in 1..ny-2``.
    """

    weights: np.ndarray
    periodic_x: bool

    def extend(self, u: np.ndarray) -> np.ndarray:
        """Add wrap-around ghost columns when periodic."""
        if not self.periodic_x:
            return u
        return np.concatenate([u[-1:], u, u[:1]], axis=0)

    def apply_core(self, ue: np.ndarray) -> np.ndarray:
        """Apply to an (extended) field; returns values on the core."""
        W = self.weights
        n0 = ue.shape[0]
        n1 = ue.shape[1]
        extra = (None,) * (ue.ndim - 2)
        out = None
        for a in range(3):
            for b in range(3):
                w = W[a, b]
                if not np.any(w):
                    continue
                term = w[(...,) + extra] * ue[a:n0 - 2 + a, b:n1 - 2 + b]
                out = term if out is None else out + term
        return out


def _pad_x(a: np.ndarray, periodic: bool) -> np.ndarray:
    if periodic:
        return np.concatenate([a[..., -1:, :], a, a[..., :1, :]], axis=-2)
    return np.concatenate([a[..., :1, :], a, a[..., -1:, :]], axis=-2)


def _pad_y(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a[..., :, :1], a, a[..., :, -1:]], axis=-1)


def assemble_stencil(spec: OperatorSpec) -> Stencil:
    """Flux-form nine-point weights of ``L_s`` (see module docstring)."""
    dom = spec.domain
    h = dom.h
    per = dom.periodic_x
    G = spec.metric_inverse
    sqrtg = np.sqrt(spec.volume_factor)
    a = sqrtg * G  # (2,2,nx,ny)
    A = spec.magnetic
    # pad by one node so every core node has its neighbours; padded values never
    # reach the core weights except through the periodic wrap
    ap = _pad_y(_pad_x(a, per))
    Ap = _pad_y(_pad_x(A, per))
    P = ap.shape[-2]
    Q = ap.shape[-1]

    def at(arr, di, dj):
        # values at (i+di, j+dj) for core nodes, from the padded array
        i0 = 1 + di + (0 if per else 1)
        j0 = 2 + dj
        ni = P - 2 - (0 if per else 2)
        nj = Q - 4
        return arr[..., i0:i0 + ni, j0:j0 + nj]

    # edge (half-node) averages, indexed by the core node on their left/bottom
    a11p = 0.5 * (at(ap[0, 0], 0, 0) + at(ap[0, 0], 1, 0))
    a11m = 0.5 * (at(ap[0, 0], 0, 0) + at(ap[0, 0], -1, 0))
    a22p = 0.5 * (at(ap[1, 1], 0, 0) + at(ap[1, 1], 0, 1))
    a22m = 0.5 * (at(ap[1, 1], 0, 0) + at(ap[1, 1], 0, -1))

    def phase_x(di, dj, sign):
        # link phase on the x1-edge to the right (+1) or left (-1) of node (i+di, j+dj)
        if sign > 0:
            amid = 0.5 * (at(Ap[0], di, dj) + at(Ap[0], di + 1, dj))
            return np.exp(1j * h * amid)
        amid = 0.5 * (at(Ap[0], di, dj) + at(Ap[0], di - 1, dj))
        return np.exp(-1j * h * amid)

    def phase_y(di, dj, sign):
        if sign > 0:
            amid = 0.5 * (at(Ap[1], di, dj) + at(Ap[1], di, dj + 1))
            return np.exp(1j * h * amid)
        amid = 0.5 * (at(Ap[1], di, dj) + at(Ap[1], di, dj - 1))
        return np.exp(-1j * h * amid)

    h2 = h * h
    shape = a11p.shape
    W = np.zeros((3, 3) + shape, dtype=complex)
    # diagonal x1 and x2 terms
    W[1, 1] += (a11p + a11m + a22p + a22m) / h2
    W[2, 1] -= a11p * phase_x(0, 0, +1) / h2
    W[0, 1] -= a11m * phase_x(0, 0, -1) / h2
    W[1, 2] -= a22p * phase_y(0, 0, +1) / h2
    W[1, 0] -= a22m * phase_y(0, 0, -1) / h2
    # mixed terms C1 a12 C2 + C2 a12 C1
    a12 = ap[0, 1]
    q = 4.0 * h2
    e1p, e1m = phase_x(0, 0, +1), phase_x(0, 0, -1)
    e2p, e2m = phase_y(0, 0, +1), phase_y(0, 0, -1)
    W[2, 2] -= e1p * at(a12, 1, 0) * phase_y(1, 0, +1) / q
    W[2, 0] += e1p * at(a12, 1, 0) * phase_y(1, 0, -1) / q
    W[0, 2] += e1m * at(a12, -1, 0) * phase_y(-1, 0, +1) / q
    W[0, 0] -= e1m * at(a12, -1, 0) * phase_y(-1, 0, -1) / q
    W[2, 2] -= e2p * at(a12, 0, 1) * phase_x(0, 1, +1) / q
    W[0, 2] += e2p * at(a12, 0, 1) * phase_x(0, 1, -1) / q
    W[2, 0] += e2m * at(a12, 0, -1) * phase_x(0, -1, +1) / q
    W[0, 0] -= e2m * at(a12, 0, -1) * phase_x(0, -1, -1) / q

    core = (slice(None), slice(1, -1)) if per else (slice(1, -1), slice(1, -1))
    W /= sqrtg[core]
    W[1, 1] += spec.electric[core]
    W.flags.writeable = False
    return Stencil(W, per)


def _core_slices(domain: Domain):
    if domain.periodic_x:
        return slice(None), slice(1, -1)
    return slice(1, -1), slice(1, -1)


def apply_spatial_operator(spec: OperatorSpec, u: np.ndarray) -> np.ndarray:
    """Spatial part of ``L u`` on interior nodes; boundary entries are zero.

    ``u`` has shape ``(nx, ny)`` or ``(nx, ny, batch)``.
    """
    u = np.asarray(u)
    if u.shape[:2] != spec.domain.shape:
        raise SpecError(f"field shape {u.shape} does not match grid {spec.domain.shape}")
    st = spec.stencil()
    out = np.zeros(u.shape, dtype=complex)
    out[_core_slices(spec.domain)] = st.apply_core(st.extend(u.astype(complex, copy=False)))
    return out


@dataclass(frozen=True)
class ProbeResult:
    metric_inverse: np.ndarray  # (2, 2, nx, ny), NaN off the interior
    magnetic: np.ndarray        # (2, nx, ny)
    electric: np.ndarray        # (nx, ny)
    drift: np.ndarray           # real first-order coefficient b^k
    mask: np.ndarray            # nodes where the probe is defined


def probe_operator(apply: Callable[[np.ndarray], np.ndarray], domain: Domain,
                   mask: np.ndarray | None = None) -> ProbeResult:
    """Recover coefficients of an operator of the form ``sum (-i d + A) a (-i d + A) + ...``.

    Works for any operator whose principal part is ``-a^{jk} d_j d_k`` and whose
    first-order part is ``-(b^k + 2i (aA)^k) d_k`` with real ``a`` and ``b``
    (self-adjoint coefficients).  ``apply`` maps a batch ``(nx, ny, 6)`` to the
    operator values.
    """
    if domain.periodic_x:
        raise SpecError("probing needs non-periodic coordinates")
    X1, X2 = domain.mesh()
    probes = np.stack([np.ones_like(X1), X1, X2, X1 * X1, X1 * X2, X2 * X2], axis=-1)
    L = np.asarray(apply(probes.astype(complex)))
    c0 = L[..., 0]
    l1 = L[..., 1] - X1 * c0
    l2 = L[..., 2] - X2 * c0
    q11 = L[..., 3] - 2 * X1 * l1 - X1 * X1 * c0
    q12 = L[..., 4] - X1 * l2 - X2 * l1 - X1 * X2 * c0
    q22 = L[..., 5] - 2 * X2 * l2 - X2 * X2 * c0
    G = np.empty((2, 2) + domain.shape)
    G[0, 0] = -0.5 * q11.real
    G[0, 1] = G[1, 0] = -0.5 * q12.real
    G[1, 1] = -0.5 * q22.real
    gA = np.stack([-0.5 * l1.imag, -0.5 * l2.imag])
    det = det2(G)
    with np.errstate(divide="ignore", invalid="ignore"):
        A1 = (G[1, 1] * gA[0] - G[0, 1] * gA[1]) / det
        A2 = (G[0, 0] * gA[1] - G[1, 0] * gA[0]) / det
    A = np.stack([A1, A2])
    quad = (G[0, 0] * A1 * A1 + 2 * G[0, 1] * A1 * A2 + G[1, 1] * A2 * A2)
    V = c0.real - quad
    drift = np.stack([-l1.real, -l2.real])
    m = domain.interior_mask() if mask is None else mask & domain.interior_mask()
    for arr in (G, A, V, drift):
        arr[..., ~m] = np.nan
    return ProbeResult(G, A, V, drift, m)


def probe_coefficients(spec: OperatorSpec) -> ProbeResult:
    """Recover ``(g^{jk}, A, V)`` by applying the discrete operator to 1, x_j, x_j x_k."""
    res = probe_operator(lambda u: apply_spatial_operator(spec, u), spec.domain)
    if not np.all(det2(res.metric_inverse)[res.mask] > 0):
        raise AssertionError("degenerate probe system")
    return res


# -- binary grid format ------------------------------------------------------

def save_grids(stem: str | Path, domain: Domain, fields: Mapping[str, np.ndarray],
               extra: Mapping | None = None) -> tuple[Path, Path]:
    """Write fields as one little-endian float64 ``.bin`` plus a JSON sidecar.

    Complex fields are split into ``name.re`` / ``name.im``.  Leading axes
    beyond the grid (e.g. time) are recorded in ``shape``.
    """
    stem = Path(stem)
    names, blocks, shape = [], [], None
    for name, arr in fields.items():
        arr = np.asarray(arr)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise SpecError("all fields in one grid file must share a shape")
        if np.iscomplexobj(arr):
            names += [f"{name}.re", f"{name}.im"]
            blocks += [arr.real, arr.imag]
        else:
            names.append(name)
            blocks.append(arr)
    header = domain.header()
    header.update({"fields": names, "shape": list(shape), "dtype": "<f8"})
    if extra:
        header.update(extra)
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    np.stack(blocks).astype("<f8").tofile(bin_path)
    json_path.write_text(json.dumps(header, indent=1, sort_keys=True))
    return bin_path, json_path


def load_grids(stem: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    shape = tuple(header["shape"])
    data = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").reshape((len(header["fields"]),) + shape)
    out: dict[str, np.ndarray] = {}
    for name, block in zip(header["fields"], data):
        if name.endswith(".im"):
            out[name[:-3]] = out.pop(name[:-3]) + 1j * block
        elif name.endswith(".re"):
            out[name[:-3]] = block.astype(complex)
        else:
            out[name] = block
    return header, out


def spec_fields(spec: OperatorSpec) -> dict[str, np.ndarray]:
    G, A = spec.metric_inverse, spec.magnetic
    return {"g11": G[0, 0], "g12": G[0, 1], "g22": G[1, 1],
            "A1": A[0], "A2": A[1], "V": spec.electric}


def save_spec(stem, spec: OperatorSpec):
    return save_grids(stem, spec.domain, spec_fields(spec))


def load_spec(stem) -> OperatorSpec:
    header, f = load_grids(stem)
    xs = header["x0"] + header["h"] * np.arange(header["nx"])
    ys = header["y0"] + header["h"] * np.arange(header["ny"])
    g0 = header.get("gamma0")
    dom = Domain(xs, ys, periodic_x=header.get("periodic_x", False),
                 gamma0=tuple(g0) if g0 else None)
    G = np.array([[f["g11"], f["g12"]], [f["g12"], f["g22"]]])
    return OperatorSpec(dom, G, np.stack([f["A1"], f["A2"]]), f["V"])
