"""Leapfrog solver for the zero-initial-data boundary value problem and its D-to-N trace."""
from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

from .fields import Domain, OperatorSpec, Patch, SpecError, _core_slices, save_grids


class CFLError(SpecError):
    pass


class SolverDivergence(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"solution diverged at step {step} (max |u| = {value:.3g})")
        self.step = step


@dataclass(frozen=True, eq=False)
class BoundarySource:
    """Dirichlet datum on one boundary patch.

    Either ``profile(s, t)`` (``s`` = coordinate along the side) or pre-sampled
    ``samples[m, k]`` at ``t = m * dt`` is given.  The datum vanishes for
    ``t <= window[0]``.
    """

    patch: Patch
    window: tuple[float, float]
    profile: Callable | None = None
    samples: np.ndarray | None = None
    dt: float | None = None

    def __post_init__(self):
        t0, t1 = self.window
        if t0 < 0 or t1 < t0:
            raise SpecError("source window must satisfy 0 <= t0 <= t1")
        if (self.profile is None) == (self.samples is None):
            raise SpecError("give exactly one of profile or samples")
        if self.samples is not None:
            if self.dt is None:
                raise SpecError("sampled source needs dt")
            if self.samples.shape[1] != len(self.patch):
                raise SpecError("sample width does not match the patch")

    @classmethod
    def separable(cls, domain: Domain, patch: Patch, space, time) -> "BoundarySource":
        """``f(s, t) = space(s) * time(t)``; ``time`` needs a ``window``."""
        return cls(patch, tuple(time.window), profile=lambda s, t: space(s) * time(t))

    def values(self, domain: Domain, step: int, t: float) -> np.ndarray:
        if t <= self.window[0]:
            return np.zeros(len(self.patch), dtype=complex)
        if self.samples is not None:
            if step >= len(self.samples):
                return np.zeros(len(self.patch), dtype=complex)
            return self.samples[step]
        return np.asarray(self.profile(self.patch.coordinates(domain), t), dtype=complex)

    def check_smoothness(self, domain: Domain, dt: float, nsteps: int) -> None:
        """Warn if the sampled datum jumps (not C^2 in time) or starts nonzero."""
        ts = dt * np.arange(nsteps + 1)
        f = np.array([self.values(domain, m, t) for m, t in enumerate(ts)])
        scale = np.abs(f).max()
        if scale == 0:
            return
        if np.abs(f[0]).max() > 1e-12 * scale:
            warnings.warn("source is nonzero at t = 0; incompatible with zero initial data")
        d2 = np.abs(np.diff(f, 2, axis=0)).max()
        width = max(self.window[1] - self.window[0], dt)
        # a C^2 pulse has second differences ~ scale * (dt/width)^2
        if nsteps > 2 and d2 > 0.5 * scale and dt < width / 20:
            warnings.warn("source is not smooth in time; second-order accuracy is lost")


@dataclass(frozen=True, eq=False)
class WaveField:
    """Stored snapshots ``values[k]`` at ``times[k]``; ``dt`` is the solver step."""

    domain: Domain
    values: np.ndarray
    times: np.ndarray
    dt: float

    def __post_init__(self):
        if self.values.shape[1:3] != self.domain.shape:
            raise SpecError("field shape does not match the domain")

    def save(self, stem) -> None:
        save_grids(stem, self.domain, {"u": self.values},
                   extra={"times": self.times.tolist(), "dt": self.dt})


@dataclass(frozen=True, eq=False)
class NeumannTrace:
    patch: Patch
    values: np.ndarray        # (nt, npatch) complex
    times: np.ndarray
    dt: float
    h: float
    arclength: np.ndarray

    def window(self, t0: float, t1: float) -> "NeumannTrace":
        keep = (self.times > t0) & (self.times < t1)
        return NeumannTrace(self.patch, self.values[keep], self.times[keep], self.dt, self.h,
                            self.arclength)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "arclength", "t", "re", "im"])
            for m, t in enumerate(self.times):
                for k, idx in enumerate(self.patch.index):
                    v = self.values[m, k]
                    w.writerow([int(idx), repr(float(self.arclength[k])), repr(float(t)),
                                repr(float(v.real)), repr(float(v.imag))])


def stable_dt(spec: OperatorSpec, cfl: float) -> float:
    if not 0 < cfl < 1:
        raise CFLError(f"cfl must lie in (0, 1), got {cfl}")
    return cfl * spec.domain.h / np.sqrt(spec.lambda_max)


def check_dt(spec: OperatorSpec, dt: float) -> None:
    """Reject steps beyond the Gershgorin bound ``dt^2 * rho(L_s) <= 4``."""
    W = spec.stencil().weights
    rho = np.abs(W).sum(axis=(0, 1)).max()
    if dt <= 0 or dt * dt * rho > 4.0:
        raise CFLError(f"time step {dt:.4g} violates the stability bound "
                       f"{2.0 / np.sqrt(rho):.4g}")


@numba.njit(cache=True, nogil=True)
def _leapfrog(W, u, u_prev, u_next, dt2, periodic):
    """``u_next = 2u - u_prev - dt^2 L u`` on the core; batch is the last axis."""
    nx, ny, nb = u.shape
    i_lo, i_hi = (0, nx) if periodic else (1, nx - 1)
    for i in range(i_lo, i_hi):
        ci = i if periodic else i - 1
        for j in range(1, ny - 1):
            for k in range(nb):
                acc = 0j
                for a in range(3):
                    ii = i + a - 1
                    if periodic:
                        ii = ii % nx
                    for b in range(3):
                        acc += W[a, b, ci, j - 1] * u[ii, j + b - 1, k]
                u_next[i, j, k] = 2.0 * u[i, j, k] - u_prev[i, j, k] - dt2 * acc


def _march(spec: OperatorSpec, sources: Sequence[BoundarySource], T0: float, dt: float,
           on_step: Callable[[int, float, np.ndarray], None]) -> int:
    """Leapfrog in time for a batch of sources; ``on_step(m, t, u)`` sees every level."""
    dom = spec.domain
    W = np.ascontiguousarray(spec.stencil().weights)
    nb = len(sources)
    nsteps = int(np.floor(T0 / dt + 1e-9))
    shape = dom.shape + (nb,)
    u_prev = np.zeros(shape, dtype=complex)
    u = np.zeros(shape, dtype=complex)
    u_next = np.zeros(shape, dtype=complex)
    nodes = [s.patch.nodes(dom) for s in sources]
    dt2 = dt * dt
    # u^0 = 0; u^1 from the Taylor start u^1 = u^0 + dt u_t + dt^2/2 u_tt = boundary data only
    on_step(0, 0.0, u)
    for m in range(1, nsteps + 1):
        t = m * dt
        if m == 1:
            u_next[...] = 0.0
        else:
            _leapfrog(W, u, u_prev, u_next, dt2, dom.periodic_x)
        for b, (src, (ii, jj)) in enumerate(zip(sources, nodes)):
            u_next[ii, jj, b] = src.values(dom, m, t)
        u_prev, u, u_next = u, u_next, u_prev
        on_step(m, t, u)
        if m % 64 == 0 or m == nsteps:
            peak = np.abs(u).max()
            if not np.isfinite(peak) or peak > 1e12:
                raise SolverDivergence(m, float(peak))
    return nsteps


def solve_ibvp(spec: OperatorSpec, source: BoundarySource, T0: float, cfl: float = 0.5, *,
               dt: float | None = None, store_every: int = 1) -> WaveField:
    """Solve ``u_tt + L_s u = 0``, zero initial data, ``u = f`` on the source patch.

    The rest of the boundary carries homogeneous Dirichlet data.  Snapshots
    are kept every ``store_every`` steps.
    """
    if dt is None:
        dt = stable_dt(spec, cfl)
    elif not 0 < cfl < 1:
        raise CFLError(f"cfl must lie in (0, 1), got {cfl}")
    check_dt(spec, dt)
    nsteps = int(np.floor(T0 / dt + 1e-9))
    source.check_smoothness(spec.domain, dt, nsteps)
    snaps, times = [], []

    def keep(m, t, u):
        if m % store_every == 0:
            snaps.append(u[..., 0].copy())
            times.append(t)

    _march(spec, [source], T0, dt, keep)
    return WaveField(spec.domain, np.array(snaps), np.array(times), dt)


def solve_batch(spec: OperatorSpec, sources: Sequence[BoundarySource], T0: float, dt: float,
                on_step: Callable[[int, float, np.ndarray], None]) -> int:
    """Public batched marcher used by the experiments (no field storage)."""
    check_dt(spec, dt)
    return _march(spec, sources, T0, dt, on_step)


# -- traces ------------------------------------------------------------------

def _d_along(vals: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    """Second-order derivative along axis 0 (one-sided at the ends)."""
    d = np.empty_like(vals)
    if periodic:
        return (np.roll(vals, -1, axis=0) - np.roll(vals, 1, axis=0)) / (2 * h)
    d[1:-1] = (vals[2:] - vals[:-2]) / (2 * h)
    d[0] = (-3 * vals[0] + 4 * vals[1] - vals[2]) / (2 * h)
    d[-1] = (3 * vals[-1] - 4 * vals[-2] + vals[-3]) / (2 * h)
    return d


def trace_operator(spec: OperatorSpec, patch: Patch) -> Callable[[np.ndarray], np.ndarray]:
    """Map a field ``(nx, ny, ...)`` to the normalized conormal trace on ``patch``.

    ``sum g^{jk} (d_j u + i A_j u) nu_k / sqrt(g^{pr} nu_p nu_r)`` with the
    Euclidean exterior normal; normal derivatives use one-sided second-order
    differences, tangential ones differentiate the boundary values.
    """
    dom = spec.domain
    h = dom.h
    side = patch.side
    ii, jj = patch.nodes(dom)
    nu = np.array(patch.normal)
    G = spec.metric_inverse[:, :, ii, jj]
    A = spec.magnetic[:, ii, jj]
    gnu = np.einsum("jkn,k->jn", G, nu)              # (2, npatch)
    norm = np.sqrt(np.einsum("jn,j->n", gnu, nu))
    normal_axis = 1 if side in ("bottom", "top") else 0
    sign = -1.0 if side in ("bottom", "left") else 1.0
    per = dom.periodic_x and side in ("bottom", "top")

    def line(u, k):
        # k-th line of nodes counted inward from the side
        if side == "bottom":
            return u[:, k]
        if side == "top":
            return u[:, dom.ny - 1 - k]
        if side == "left":
            return u[k, :]
        return u[dom.nx - 1 - k, :]

    def apply(u: np.ndarray) -> np.ndarray:
        u0, u1, u2 = line(u, 0), line(u, 1), line(u, 2)
        # derivative in the +axis direction at the side
        dn = sign * (3 * u0 - 4 * u1 + u2) / (2 * h)
        dt_full = _d_along(u0, h, per)
        dn, dt_, ub = dn[patch.index], dt_full[patch.index], u0[patch.index]
        extra = (None,) * (ub.ndim - 1)
        grad = [None, None]
        grad[normal_axis] = dn
        grad[1 - normal_axis] = dt_
        out = 0
        for j in range(2):
            cov = grad[j] + 1j * A[j][(...,) + extra] * ub
            out = out + gnu[j][(...,) + extra] * cov
        return out / norm[(...,) + extra]

    return apply


def _patch_of(domain: Domain, patch) -> Patch:
    if isinstance(patch, Patch):
        return patch
    return domain.patch(patch)


def neumann_trace(spec: OperatorSpec, u: WaveField, patch) -> NeumannTrace:
    patch = _patch_of(spec.domain, patch)
    if patch.side not in ("bottom", "top", "left", "right"):
        raise SpecError("patch is not on the boundary")
    side_len = spec.domain.nx if patch.side in ("bottom", "top") else spec.domain.ny
    if len(patch.index) and patch.index.max() >= side_len:
        raise SpecError("patch is not on the boundary of this domain")
    op = trace_operator(spec, patch)
    vals = np.stack([op(s) for s in u.values])
    return NeumannTrace(patch, vals, u.times, u.dt, spec.domain.h, patch.coordinates(spec.domain))


def _check_support(src: BoundarySource, patch_in: Patch, T0: float) -> None:
    if src.patch.side != patch_in.side or not np.isin(src.patch.index, patch_in.index).all():
        raise SpecError("source patch is not contained in the input patch")
    if src.window[0] < 0 or src.window[1] > T0 + 1e-12:
        raise SpecError("source support is not inside (0, T0]")


def thread_limit() -> int:
    try:
        return max(1, int(os.environ.get("DTN_LAB_THREADS", "1")))
    except ValueError:
        return 1


def dtn_map(spec: OperatorSpec, patch_in, patch_out, sources: Sequence[BoundarySource],
            T0: float, cfl: float = 0.5, *, dt: float | None = None,
            threads: int | None = None) -> list[NeumannTrace]:
    """Traces on ``patch_out`` for each source, in input order.

    Sources are marched as independent batch columns; with ``threads > 1`` the
    batch is split into chunks solved concurrently.  Per-column arithmetic does
    not depend on the chunking, so results are identical for any thread count.
    """
    dom = spec.domain
    patch_in = _patch_of(dom, patch_in)
    patch_out = _patch_of(dom, patch_out)
    if not sources:
        return []
    for s in sources:
        _check_support(s, patch_in, T0)
    if dt is None:
        dt = stable_dt(spec, cfl)
    check_dt(spec, dt)
    nsteps = int(np.floor(T0 / dt + 1e-9))
    for s in sources:
        s.check_smoothness(dom, dt, nsteps)
    op = trace_operator(spec, patch_out)
    threads = threads or thread_limit()
    chunks = np.array_split(np.arange(len(sources)), min(threads, len(sources)))

    def run(idx):
        rec = np.zeros((nsteps + 1, len(patch_out), len(idx)), dtype=complex)

        def on_step(m, t, u):
            rec[m] = op(u)
        _march(spec, [sources[i] for i in idx], T0, dt, on_step)
        return rec

    if len(chunks) == 1:
        recs = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as ex:
            recs = list(ex.map(run, chunks))
    times = dt * np.arange(nsteps + 1)
    arc = patch_out.coordinates(dom)
    out = []
    for rec in recs:
        for b in range(rec.shape[-1]):
            out.append(NeumannTrace(patch_out, rec[..., b], times, dt, dom.h, arc))
    return out


def discrete_energy(spec: OperatorSpec, u_next: np.ndarray, u: np.ndarray, dt: float) -> float:
    """Leapfrog-conserved energy between two levels with zero boundary values."""
    st = spec.stencil()
    core = _core_slices(spec.domain)
    w = np.sqrt(spec.volume_factor)[core]
    du = (u_next - u)[core] / dt
    Ku = st.apply_core(st.extend(u_next))
    extra = (None,) * (u.ndim - 2)
    kin = (w[(...,) + extra] * np.abs(du) ** 2).sum()
    pot = (w[(...,) + extra] * np.conj(u[core]) * Ku).sum().real
    return float(kin + pot)


def relative_l2(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / ||b||`` (0 when both vanish)."""
    nb = np.linalg.norm(b)
    na = np.linalg.norm(a - b)
    if nb == 0:
        return 0.0 if na == 0 else np.inf
    return float(na / nb)
