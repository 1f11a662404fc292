"""Analytic coefficient families, boundary pulses and seeded random fields.

Everything here is a closure over plain parameters so that scenario configs can
describe operators, sources and equivalence recipes as JSON.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Domain, OperatorSpec


def bump(r):
    """C-infinity bump ``exp(1 - 1/(1 - r^2))`` on ``|r| < 1``; equals 1 at 0."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = np.abs(r) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - r[m] ** 2))
    return out


def bump_d1(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = np.abs(r) < 1
    q = 1.0 - r[m] ** 2
    out[m] = np.exp(1.0 - 1.0 / q) * (-2.0 * r[m] / q ** 2)
    return out


def bump_d2(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = np.abs(r) < 1
    x = r[m]
    q = 1.0 - x ** 2
    f = np.exp(1.0 - 1.0 / q)
    d = -2.0 * x / q ** 2
    dd = -2.0 / q ** 2 - 8.0 * x ** 2 / q ** 3
    out[m] = f * (d * d + dd)
    return out


@dataclass(frozen=True)
class Pulse:
    """Smooth time pulse supported on ``[t_on, t_on + duration]``."""

    t_on: float
    duration: float

    @property
    def window(self) -> tuple[float, float]:
        return (self.t_on, self.t_on + self.duration)

    def _r(self, t):
        half = 0.5 * self.duration
        return (np.asarray(t, dtype=float) - self.t_on - half) / half

    def __call__(self, t):
        return bump(self._r(t))

    def derivative(self, t):
        return bump_d1(self._r(t)) / (0.5 * self.duration)


@dataclass(frozen=True)
class SpaceBump:
    """Smooth spatial profile of half-width ``radius`` centered at ``center``."""

    center: float
    radius: float

    def __call__(self, s):
        return bump((np.asarray(s, dtype=float) - self.center) / self.radius)

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.radius, self.center + self.radius)


class FourierField:
    """Seeded smooth scalar field ``sum a_kl cos(pi (k x + l y) + phase_kl)``.

    Coefficients decay like ``1/(1 + k^2 + l^2)`` and the sum is normalized so
    that ``max |f| <= amplitude``.
    """

    def __init__(self, rng: np.random.Generator, amplitude: float = 1.0, modes: int = 3,
                 scale: float = 1.0):
        ks, ls = np.meshgrid(np.arange(modes + 1), np.arange(-modes, modes + 1), indexing="ij")
        keep = (ks > 0) | (ls > 0)
        self.k = ks[keep].astype(float) * scale
        self.l = ls[keep].astype(float) * scale
        w = 1.0 / (1.0 + ks[keep] ** 2 + ls[keep] ** 2)
        a = rng.standard_normal(len(w)) * w
        self.a = amplitude * a / np.abs(a).sum()
        self.phase = rng.uniform(0, 2 * np.pi, len(w))

    def _arg(self, x, y):
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        return np.pi * (self.k * x + self.l * y) + self.phase

    def __call__(self, x, y):
        return (self.a * np.cos(self._arg(x, y))).sum(-1)

    def gradient(self, x, y):
        s = -self.a * np.pi * np.sin(self._arg(x, y))
        return (s * self.k).sum(-1), (s * self.l).sum(-1)


# -- coefficient recipes -------------------------------------------------------

def metric_recipe(recipe: dict | None, rng: np.random.Generator):
    """Return ``metric(x1, x2) -> (g11, g12, g22)`` or ``None`` for flat."""
    recipe = recipe or {"kind": "flat"}
    kind = recipe.get("kind", "flat")
    if kind == "flat":
        return None
    if kind == "constant":
        g11, g12, g22 = recipe["g11"], recipe.get("g12", 0.0), recipe["g22"]
        return lambda x, y: (g11 + 0 * x, g12 + 0 * x, g22 + 0 * x)
    if kind == "speed":
        c2 = float(recipe["c"]) ** 2
        return lambda x, y: (c2 + 0 * x, 0 * x, c2 + 0 * x)
    if kind == "lens":
        beta = float(recipe["beta"])
        x0 = float(recipe.get("x0", 0.0))
        return lambda x, y: (1 + beta * (x - x0) ** 2, 0 * x, 1 + beta * (x - x0) ** 2)
    if kind == "conformal":
        f = FourierField(rng, recipe.get("amplitude", 0.3), recipe.get("modes", 2))
        return lambda x, y: (1 + f(x, y), 0 * x, 1 + f(x, y))
    if kind == "product":
        # g^{22} = 1, g^{12} = 0: boundary-normal lines x1 = const are geodesics
        f = FourierField(rng, recipe.get("amplitude", 0.3), recipe.get("modes", 2))
        return lambda x, y: (1 + f(x, y), 0 * x, 1 + 0 * x)
    if kind == "random":
        amp = recipe.get("amplitude", 0.3)
        modes = recipe.get("modes", 2)
        f1 = FourierField(rng, amp, modes)
        f2 = FourierField(rng, amp, modes)
        th = FourierField(rng, recipe.get("rotation", 1.0), modes)

        def metric(x, y):
            l1 = 1 + f1(x, y)
            l2 = 1 + f2(x, y)
            t = th(x, y)
            c, s = np.cos(t), np.sin(t)
            return (l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c)
        return metric
    if kind == "checkerboard":
        c1 = float(recipe.get("c1", 1.0)) ** 2
        c2 = float(recipe.get("c2", 0.5)) ** 2
        cells = int(recipe.get("cells", 4))

        def metric(x, y):
            odd = (np.floor(x * cells) + np.floor(y * cells)) % 2 == 1
            c = np.where(odd, c2, c1)
            return (c, 0 * x, c)
        return metric
    raise ValueError(f"unknown metric kind {kind!r}")


def magnetic_recipe(recipe: dict | None, rng: np.random.Generator):
    recipe = recipe or {"kind": "zero"}
    kind = recipe.get("kind", "zero")
    if kind == "zero":
        return None
    if kind == "constant":
        a1, a2 = recipe.get("A1", 0.0), recipe.get("A2", 0.0)
        return lambda x, y: (a1 + 0 * x, a2 + 0 * x)
    if kind == "random":
        f1 = FourierField(rng, recipe.get("amplitude", 1.0), recipe.get("modes", 2))
        f2 = FourierField(rng, recipe.get("amplitude", 1.0), recipe.get("modes", 2))
        return lambda x, y: (f1(x, y), f2(x, y))
    raise ValueError(f"unknown magnetic kind {kind!r}")


def electric_recipe(recipe: dict | None, rng: np.random.Generator):
    recipe = recipe or {"kind": "zero"}
    kind = recipe.get("kind", "zero")
    if kind == "zero":
        return None
    if kind == "constant":
        v = float(recipe["V"])
        return lambda x, y: v + 0 * x
    if kind == "random":
        f = FourierField(rng, recipe.get("amplitude", 1.0), recipe.get("modes", 2))
        return f
    if kind == "bump":
        cx, cy = recipe["center"]
        r = float(recipe["radius"])
        amp = float(recipe["amplitude"])
        return lambda x, y: amp * bump(np.hypot(x - cx, y - cy) / r)
    raise ValueError(f"unknown electric kind {kind!r}")


def build_spec(domain: Domain, recipe: dict, rng: np.random.Generator) -> OperatorSpec:
    """Operator from a recipe ``{"metric": ..., "magnetic": ..., "electric": ...}``.

    Random draws happen in a fixed order (metric, magnetic, electric).
    """
    metric = metric_recipe(recipe.get("metric"), rng)
    magnetic = magnetic_recipe(recipe.get("magnetic"), rng)
    electric = electric_recipe(recipe.get("electric"), rng)
    return OperatorSpec.from_functions(domain, metric, magnetic, electric)
