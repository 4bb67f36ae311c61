"""Field handles and the analytic field catalog.

A :class:`FieldHandle` wraps a vectorized evaluator ``u(x, t)`` where ``x``
has shape ``(..., n)`` and ``t`` broadcasts against ``x[..., 0]``. A handle
may also carry a closed-form Gaussian mean ``mean(x, t, r)`` (the heat
semigroup with time shift, ``P_r u``); the quadrature engine prefers it over
Gauss-Hermite sampling, which cannot resolve fields that vary on scales much
finer than ``sqrt(r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import TimeSlab
from .kernel import FracParams, eval_kernel
from .quadrature import LagBreak

__all__ = [
    "Growth",
    "FieldHandle",
    "combine",
    "constant",
    "affine",
    "exp_cos",
    "power",
    "gaussian_bump",
    "fundamental",
    "time_lift",
    "spatial_lift",
    "time_linear",
    "spatial_gaussian_growth",
    "SmoothSource",
    "random_source",
]

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Growth:
    """Declared growth class of a field.

    ``kind`` is one of ``bounded``, ``polynomial`` (spatial ``|x|^degree``),
    ``time-polynomial`` (``|t|^degree`` into the past), ``exponential-in-time``
    (``e^{rate t}``), ``gaussian-space`` (``e^{rate |x|^2}``) or ``custom``.
    """

    kind: str = "bounded"
    degree: float = 0.0
    rate: float = 0.0

    KINDS = ("bounded", "polynomial", "time-polynomial", "exponential-in-time", "gaussian-space", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown growth tag {self.kind!r}")


@dataclass
class FieldHandle:
    evaluator: Evaluator
    n: int
    growth: Growth = field(default_factory=Growth)
    mean: Callable | None = None
    lag_breaks: Callable[[np.ndarray, float], Sequence[LagBreak]] | None = None
    support_hint: object | None = None
    fd_step: float | None = None
    name: str = "field"
    thread_safe: bool = True
    domain: object | None = None

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.evaluator(x, np.asarray(t, dtype=float)), dtype=float)

    def value(self, x, t) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self(x[None, :], np.array([float(t)]))[0])

    def breaks(self, x, t) -> list[LagBreak]:
        if self.lag_breaks is None:
            return []
        return list(self.lag_breaks(np.asarray(x, dtype=float), float(t)))

    # linear combinations keep closed-form means when every term has one
    def scaled(self, a: float) -> "FieldHandle":
        ev, mn = self.evaluator, self.mean
        return replace(
            self,
            evaluator=lambda x, t: a * ev(x, t),
            mean=None if mn is None else (lambda x, t, r: a * mn(x, t, r)),
            name=f"{a:g}*{self.name}",
        )

    def __add__(self, other: "FieldHandle") -> "FieldHandle":
        return combine([(1.0, self), (1.0, other)])

    def __sub__(self, other: "FieldHandle") -> "FieldHandle":
        return combine([(1.0, self), (-1.0, other)])

    def shifted(self, dx, dt: float) -> "FieldHandle":
        """``x, t -> u(x - dx, t - dt)``."""
        dx = np.asarray(dx, dtype=float)
        ev, mn, lb = self.evaluator, self.mean, self.lag_breaks
        return replace(
            self,
            evaluator=lambda x, t: ev(np.asarray(x) - dx, np.asarray(t) - dt),
            mean=None if mn is None else (lambda x, t, r: mn(np.asarray(x) - dx, np.asarray(t) - dt, r)),
            lag_breaks=None if lb is None else (lambda x, t: lb(np.asarray(x) - dx, t - dt)),
            name=f"shift({self.name})",
        )


def combine(terms: Sequence[tuple[float, FieldHandle]]) -> FieldHandle:
    """Linear combination ``sum a_i u_i``; the mean is closed form only if all terms are."""
    n = terms[0][1].n
    if any(u.n != n for _, u in terms):
        raise ValueError("dimension mismatch in linear combination")

    def ev(x, t):
        return sum(a * u.evaluator(x, t) for a, u in terms)

    mean = None
    if all(u.mean is not None for _, u in terms):

        def mean(x, t, r):
            return sum(a * u.mean(x, t, r) for a, u in terms)

    def breaks(x, t):
        out = []
        for _, u in terms:
            out.extend(u.breaks(x, t))
        return out

    kinds = [u.growth for _, u in terms]
    growth = kinds[0] if all(g == kinds[0] for g in kinds) else Growth("custom")
    steps = [u.fd_step for _, u in terms if u.fd_step]
    return FieldHandle(
        evaluator=ev,
        n=n,
        growth=growth,
        mean=mean,
        lag_breaks=breaks,
        fd_step=max(steps) if steps else None,
        name=" + ".join(f"{a:g}*{u.name}" for a, u in terms),
        thread_safe=all(u.thread_safe for _, u in terms),
    )


def _shape(x, t):
    return np.broadcast_shapes(np.shape(x)[:-1], np.shape(t))


# -- catalog -------------------------------------------------------------------


def constant(n: int, c: float = 1.0) -> FieldHandle:
    return FieldHandle(
        evaluator=lambda x, t: np.full(_shape(x, t), float(c)),
        n=n,
        mean=lambda x, t, r: np.full(_shape(x, np.broadcast_arrays(t, r)[0]), float(c)),
        name=f"const({c:g})",
    )


def affine(a, b: float = 0.0) -> FieldHandle:
    """Time-constant ``a . x + b``; the Gaussian mean preserves it exactly."""
    a = np.atleast_1d(np.asarray(a, dtype=float))

    def ev(x, t):
        return np.broadcast_to(np.asarray(x) @ a + b, _shape(x, t))

    def mean(x, t, r):
        return np.broadcast_to(np.asarray(x) @ a + b, _shape(x, np.broadcast_arrays(t, r)[0]))

    return FieldHandle(ev, n=a.size, growth=Growth("polynomial", degree=1.0), mean=mean, name="affine")


def exp_cos(k, lam: float = 0.0, amplitude: float = 1.0, phase: float = 0.0) -> FieldHandle:
    """``A e^{lam t} cos(k . x + phase)``; its Gaussian mean is
    ``e^{-(lam + |k|^2) r}`` times the field, which gives the symbol
    ``(lam + |k|^2)^s`` of the operator."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    k2 = float(k @ k)

    def ev(x, t):
        return amplitude * np.exp(lam * np.asarray(t)) * np.cos(np.asarray(x) @ k + phase)

    def mean(x, t, r):
        r = np.asarray(r)
        return ev(x, np.asarray(t) - r) * np.exp(-k2 * r)

    growth = Growth("bounded") if lam == 0 else Growth("exponential-in-time", rate=lam)
    return FieldHandle(ev, n=k.size, growth=growth, mean=mean, name=f"exp_cos(lam={lam:g},|k|={math.sqrt(k2):g})")


def power(n: int, beta: float, axis: int | None = None, amplitude: float = 1.0) -> FieldHandle:
    """``|x|^beta`` (or ``|x_axis|^beta``); Gauss-Hermite means only."""

    def ev(x, t):
        x = np.asarray(x)
        rad = np.abs(x[..., axis]) if axis is not None else np.sqrt(np.sum(x * x, axis=-1))
        return np.broadcast_to(amplitude * rad**beta, _shape(x, t))

    return FieldHandle(ev, n=n, growth=Growth("polynomial", degree=beta), name=f"power({beta:g})")


def gaussian_bump(center, width: float, amplitude: float = 1.0) -> FieldHandle:
    """Time-independent ``A exp(-|x - c|^2 / (4 width))``.

    The heat semigroup maps it to ``A (w/(w+r))^{n/2} exp(-|x-c|^2/(4(w+r)))``.
    """
    c = np.atleast_1d(np.asarray(center, dtype=float))
    n = c.size

    def ev(x, t):
        d = np.asarray(x) - c
        return np.broadcast_to(amplitude * np.exp(-np.sum(d * d, axis=-1) / (4 * width)), _shape(x, t))

    def mean(x, t, r):
        d = np.asarray(x) - c
        wr = width + np.asarray(r)
        out = amplitude * (width / wr) ** (n / 2) * np.exp(-np.sum(d * d, axis=-1) / (4 * wr))
        return np.broadcast_to(out, _shape(x, np.broadcast_arrays(t, r)[0]))

    return FieldHandle(ev, n=n, mean=mean, name="gaussian_bump")


def fundamental(p: FracParams, x0=None, t0: float = 0.0) -> FieldHandle:
    """Snapshot field ``G(x - x0, t - t0)``.

    For ``T = t - t0 > 0`` and ``r < T`` the Gaussian mean is
    ``C (T - r)^{s-1} T^{-n/2} exp(-|x - x0|^2 / (4T))`` and vanishes for
    ``r >= T``; the ``(T - r)^{s-1}`` blow-up is declared as a lag break.
    """
    x0 = np.zeros(p.n) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))

    def ev(x, t):
        return eval_kernel(p, np.asarray(x) - x0, np.asarray(t) - t0)

    def mean(x, t, r):
        x = np.asarray(x)
        T = np.asarray(t) - t0
        r = np.asarray(r)
        d2 = np.sum((x - x0) ** 2, axis=-1)
        alive = (T > 0) & (r < T)
        Ts = np.where(T > 0, T, 1.0)
        rem = np.where(alive, T - r, 1.0)
        val = p.c_ns * rem ** (p.s - 1.0) * Ts ** (-p.n / 2) * np.exp(-d2 / (4 * Ts))
        return np.where(alive, val, 0.0)

    def breaks(x, t):
        T = t - t0
        return [LagBreak(T, p.s - 1.0)] if T > 0 else []

    return FieldHandle(ev, n=p.n, mean=mean, lag_breaks=breaks, name="fundamental")


def time_lift(n: int, g: Callable, growth: Growth | None = None, name: str = "time_lift") -> FieldHandle:
    """x-independent lift ``u(x, t) = g(t)``; the Gaussian mean is ``g(t - r)``."""

    def ev(x, t):
        return np.broadcast_to(g(np.asarray(t, dtype=float)), _shape(x, t))

    def mean(x, t, r):
        tt = np.asarray(t) - np.asarray(r)
        return np.broadcast_to(g(tt), _shape(x, tt))

    return FieldHandle(ev, n=n, growth=growth or Growth("custom"), mean=mean, name=name)


def spatial_lift(n: int, g: Callable, growth: Growth | None = None, name: str = "spatial") -> FieldHandle:
    """Time-independent ``u(x, t) = g(x)`` with Gauss-Hermite means."""

    def ev(x, t):
        return np.broadcast_to(g(np.asarray(x, dtype=float)), _shape(x, t))

    return FieldHandle(ev, n=n, growth=growth or Growth("bounded"), name=name)


def time_linear(n: int, slope: float = 1.0) -> FieldHandle:
    """``u = slope * t``; grows linearly into the past, outside the admissible class."""
    return time_lift(n, lambda t: slope * t, Growth("time-polynomial", degree=1.0), name="time_linear")


def spatial_gaussian_growth(n: int, rate: float = 1.0) -> FieldHandle:
    """``u = exp(rate |x|^2)``."""

    def ev(x, t):
        x = np.asarray(x)
        return np.broadcast_to(np.exp(rate * np.sum(x * x, axis=-1)), _shape(x, t))

    return FieldHandle(ev, n=n, growth=Growth("gaussian-space", rate=rate), name="gauss_growth")


# -- smooth sources -------------------------------------------------------------


def _bump_profile(t, t_lo, t_hi):
    """C-infinity bump equal to 1 in the middle of ``(t_lo, t_hi)``, 0 outside."""
    t = np.asarray(t, dtype=float)
    z = (2 * t - (t_lo + t_hi)) / (t_hi - t_lo)
    inside = np.abs(z) < 1
    zz = np.where(inside, z, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - zz * zz)), 0.0)


@dataclass
class SmoothSource:
    """Sum of Gaussian bumps with smooth time modulation.

    ``f(x, t) = base + sum_i a_i exp(-|x - c_i|^2/(4 w_i)) (1 + b_i sin(om_i t + ph_i))``,
    multiplied by an optional compactly supported bump ``window`` in time.
    The spatial Gaussian mean is closed form, so ``P_r f`` costs one
    evaluation per bump.
    """

    n: int
    centers: np.ndarray
    widths: np.ndarray
    amps: np.ndarray
    mod_amp: np.ndarray
    mod_freq: np.ndarray
    mod_phase: np.ndarray
    base: float = 0.0
    window: tuple[float, float] | None = None

    def _time(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        mod = 1.0 + self.mod_amp * np.sin(self.mod_freq * t + self.mod_phase)
        return mod

    def _window(self, t):
        if self.window is None:
            return 1.0
        return _bump_profile(t, *self.window)

    def evaluate(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        d = x[..., None, :] - self.centers
        sp = np.exp(-np.sum(d * d, axis=-1) / (4 * self.widths))
        val = np.sum(self.amps * sp * self._time(t), axis=-1) + self.base
        return val * self._window(t)

    def gaussian_mean(self, x, t, r):
        x = np.asarray(x, dtype=float)
        r = np.asarray(r, dtype=float)
        tt = np.asarray(t, dtype=float) - r
        wr = self.widths + r[..., None]
        d = x[..., None, :] - self.centers
        sp = (self.widths / wr) ** (self.n / 2) * np.exp(-np.sum(d * d, axis=-1) / (4 * wr))
        val = np.sum(self.amps * sp * self._time(tt), axis=-1) + self.base
        return val * self._window(tt)

    def sup_bound(self) -> float:
        return abs(self.base) + float(np.sum(np.abs(self.amps) * (1 + np.abs(self.mod_amp))))

    def handle(self, name: str = "smooth_source") -> FieldHandle:
        def breaks(x, t):
            if self.window is None:
                return []
            return [LagBreak(t - b) for b in self.window if t - b > 0]

        return FieldHandle(
            evaluator=self.evaluate,
            n=self.n,
            mean=self.gaussian_mean,
            lag_breaks=breaks,
            support_hint=None if self.window is None else TimeSlab(*self.window),
            name=name,
        )


def random_source(
    n: int,
    seed: int,
    n_bumps: int = 4,
    center_box: float = 2.0,
    width_range: tuple[float, float] = (0.3, 1.0),
    base: float = 0.0,
    window: tuple[float, float] | None = None,
    positive: bool = True,
    center_radius: tuple[float, float] | None = None,
) -> SmoothSource:
    """Seeded random :class:`SmoothSource`.

    Centers are uniform in ``[-center_box, center_box]^n`` or, if
    ``center_radius`` is given, at a uniform radius in that range.
    """
    rng = np.random.default_rng(seed)
    if center_radius is None:
        centers = rng.uniform(-center_box, center_box, size=(n_bumps, n))
    else:
        dirs = rng.normal(size=(n_bumps, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        centers = dirs * rng.uniform(*center_radius, size=(n_bumps, 1))
    widths = rng.uniform(*width_range, size=n_bumps)
    amps = rng.uniform(0.5, 1.5, size=n_bumps)
    if not positive:
        amps *= rng.choice([-1.0, 1.0], size=n_bumps)
    mod_amp = rng.uniform(0.0, 0.5, size=n_bumps)
    mod_freq = rng.uniform(0.5, 2.0, size=n_bumps)
    mod_phase = rng.uniform(0.0, 2 * math.pi, size=n_bumps)
    return SmoothSource(n, centers, widths, amps, mod_amp, mod_freq, mod_phase, base, window)
