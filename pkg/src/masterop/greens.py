"""Green convolution, source restriction and the decomposition ``u = v + w``.

In lag form the space-time convolution with the fundamental solution is

.. math::

    w(x,t) = \\kappa \\int_0^\\infty \\rho^{s-1}\\,P_\\rho f(x,t)\\,d\\rho,

with :math:`\\kappa = 1/\\Gamma(s)` for the solution operator of
:math:`(\\partial_t-\\Delta)^s`. The kernel normalization
:math:`C_{n,s}(4\\pi)^{n/2} = 1/|\\Gamma(-s)|` differs from it by the factor
:math:`\\Gamma(1+s)/\\Gamma(1-s)`; ``normalization="kernel"`` selects it.

Gaussian means of ``w`` follow from the semigroup property,
:math:`P_r w = \\kappa\\int_0^\\infty \\rho^{s-1}P_{r+\\rho}f\\,d\\rho`, which only
needs the scalar profile :math:`L\\mapsto P_L f(x,t)`. The profile is tabulated
once per point on log panels and interpolated.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import FieldHandle, Growth, combine
from .geometry import Cylinder, ParabolicCylinder, TimeSlab
from .grid import GridField
from .kernel import FracParams, SpaceTimePoint
from .operator import apply_master
from .quadrature import (
    LagBreak,
    QuadratureSpec,
    _hermite_tensor,
    _legendre,
    gaussian_means,
    origin_rule,
)

__all__ = [
    "DivergenceError",
    "Cylinder",
    "ParabolicCylinder",
    "RestrictedSource",
    "green_constant",
    "ball_heat_mean",
    "LagProfile",
    "GreenField",
    "green_field",
    "convolve_green",
    "solve_w",
    "Decomposition",
    "decompose",
    "RepresentationReport",
    "verify_representation",
    "lemma41_bound",
]


class DivergenceError(ArithmeticError):
    """The convolution integral does not converge as the lag cutoff grows."""


def green_constant(p: FracParams, normalization: str = "solution") -> float:
    """Lag-form constant of the convolution kernel.

    ``solution`` gives ``1/Gamma(s)``, for which the convolution inverts the
    operator; ``kernel`` gives ``C_{n,s} (4 pi)^{n/2} = 1/|Gamma(-s)|``.
    """
    if normalization == "solution":
        return 1.0 / math.gamma(p.s)
    if normalization == "kernel":
        return p.lag_constant
    raise ValueError(f"unknown normalization {normalization!r}")


# -- restricted sources -----------------------------------------------------------


def _ray_directions(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions with weights integrating over the sphere ``S^{n-1}``."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if n == 2:
        phi = 2 * math.pi * np.arange(m) / m
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(m, 2 * math.pi / m)
    if n == 3:
        mu, wmu = _legendre(m // 2)
        phi = 2 * math.pi * np.arange(m) / m
        MU, PHI = np.meshgrid(mu, phi, indexing="ij")
        sn = np.sqrt(1 - MU**2)
        E = np.stack([sn * np.cos(PHI), sn * np.sin(PHI), MU], axis=-1).reshape(-1, 3)
        W = (wmu[:, None] * np.full(m, 2 * math.pi / m)).ravel()
        return E, W
    raise NotImplementedError("ray quadrature is implemented for n <= 3")


def ball_heat_mean(
    f_eval: Callable,
    x: np.ndarray,
    t: float,
    L: np.ndarray,
    ball: Cylinder,
    radial: int = 24,
    angular: int = 32,
    chunk: int = 64,
) -> np.ndarray:
    """``P_L [f 1_Q](x, t)`` for an array of lags ``L``.

    Polar coordinates centred at ``x``: every ray is clipped exactly where it
    leaves the ball and where the heat kernel drops below ``e^{-42}``, so the
    spatial indicator costs nothing in accuracy.
    """
    x = np.asarray(x, dtype=float)
    L = np.atleast_1d(np.asarray(L, dtype=float))
    n = x.size
    E, Wd = _ray_directions(n, angular)
    z, wz = _legendre(radial)
    q = x - ball.center
    eq = E @ q
    disc = eq**2 - (q @ q - ball.radius**2)
    root = np.sqrt(np.maximum(disc, 0.0))
    ray_lo = np.where(disc > 0, np.maximum(0.0, -eq - root), 0.0)
    ray_hi = np.where(disc > 0, np.maximum(0.0, -eq + root), 0.0)
    out = np.zeros(L.size)
    live = (L > 0) & (t - L > ball.t_min) & (t - L < ball.t_max)
    idx = np.flatnonzero(live)
    for a0 in range(0, idx.size, chunk):
        sel = idx[a0 : a0 + chunk]
        Lk = L[sel][:, None]
        W = 13.0 * np.sqrt(Lk)
        a = np.minimum(ray_lo[None, :], W)
        b = np.minimum(ray_hi[None, :], W)
        half = 0.5 * (b - a)
        rho = half[..., None] * (z + 1.0) + a[..., None]
        pts = x + rho[..., None] * E[None, :, None, :]
        tt = (t - L[sel])[:, None, None]
        vals = np.asarray(f_eval(pts, tt), dtype=float)
        kern = (4 * math.pi * Lk[..., None]) ** (-n / 2) * np.exp(-(rho**2) / (4 * Lk[..., None]))
        wts = half[..., None] * wz * rho ** (n - 1) * kern * Wd[None, :, None]
        out[sel] = np.sum(vals * wts, axis=(1, 2))
    return out


@dataclass
class RestrictedSource:
    """``f_Q = f 1_Q`` (``inside``) or ``f_{Q^c} = f (1 - 1_Q)`` (``outside``)."""

    base: FieldHandle
    cylinder: Cylinder
    mode: str = "inside"
    radial: int = 24
    angular: int = 32

    def __post_init__(self):
        if self.mode not in ("inside", "outside"):
            raise ValueError("mode must be 'inside' or 'outside'")
        if self.cylinder.n != self.base.n:
            raise ValueError("cylinder and field dimensions differ")

    @property
    def n(self) -> int:
        return self.base.n

    def evaluate(self, x, t):
        inside = self.cylinder.contains(x, t)
        vals = self.base.evaluator(x, t)
        return np.where(inside if self.mode == "inside" else ~inside, vals, 0.0)

    def _inside_mean_point(self, x, t, L):
        if self.n <= 3:
            return ball_heat_mean(self.base.evaluator, x, t, L, self.cylinder, self.radial, self.angular)
        # degraded fallback: Gauss-Hermite with the indicator inside the integrand
        ind = FieldHandle(
            lambda y, tt: np.where(self.cylinder.contains(y, tt), self.base.evaluator(y, tt), 0.0), n=self.n
        )
        return gaussian_means(ind, x, t, L, 20)

    def inside_mean(self, x, t, r):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], np.shape(t), np.shape(r))
        xb = np.broadcast_to(x, shape + (self.n,)).reshape(-1, self.n)
        tb = np.broadcast_to(np.asarray(t, dtype=float), shape).ravel()
        rb = np.broadcast_to(np.asarray(r, dtype=float), shape).ravel()
        out = np.empty(rb.size)
        keys = np.concatenate([xb, tb[:, None]], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        for j, key in enumerate(uniq):
            sel = inv == j
            out[sel] = self._inside_mean_point(key[:-1], key[-1], rb[sel])
        return out.reshape(shape)

    def mean(self, x, t, r):
        inner = self.inside_mean(x, t, r)
        if self.mode == "inside":
            return inner
        return gaussian_means(self.base, x, t, r) - inner

    def handle(self) -> FieldHandle:
        cyl = self.cylinder

        def breaks(x, t):
            return [LagBreak(t - e) for e in (cyl.t_max, cyl.t_min) if t - e > 0]

        hint = cyl if self.mode == "inside" else None
        return FieldHandle(
            self.evaluate,
            n=self.n,
            growth=self.base.growth,
            mean=self.mean,
            lag_breaks=breaks,
            support_hint=hint,
            name=f"{self.base.name}|{self.mode}",
        )


# -- lag profiles -------------------------------------------------------------------


def _bary_weights(x: np.ndarray) -> np.ndarray:
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    return 1.0 / np.prod(d, axis=1)


class LagProfile:
    """Piecewise polynomial interpolant of ``L -> P_L f(x, t)`` on ``(0, T]``.

    A linear panel covers ``[0, l0]``; log-spaced panels follow, split at the
    given breaks. Values beyond ``T`` are zero (the source has no earlier
    support or the lag integral is truncated there).
    """

    def __init__(self, m: Callable, T: float, breaks: Sequence[float] = (), ppd: int = 4, order: int = 16, l0: float = 1e-8):
        self.T = float(T)
        zeta, _ = _legendre(order)
        self._bw = _bary_weights(zeta)
        self._zeta = zeta
        l0 = min(l0, 0.5 * self.T)
        n_pan = max(1, math.ceil(ppd * math.log10(self.T / l0)))
        edges = list(np.geomspace(l0, self.T, n_pan + 1))
        inner = sorted(b for b in breaks if l0 < b < self.T)
        for b in inner:
            edges = [e for e in edges if e in (l0, self.T) or abs(e - b) > 1e-6 * b]
        self.edges = np.array(sorted(set(edges) | set(inner)))
        lo, hi = self.edges[:-1], self.edges[1:]
        # variable: L on the first panel, log L elsewhere
        self._lin = np.concatenate([[True], np.zeros(lo.size, dtype=bool)])
        a = np.concatenate([[0.0], np.log(lo)])
        b = np.concatenate([[l0], np.log(hi)])
        self._a, self._b = a, b
        var = 0.5 * (b - a)[:, None] * (zeta + 1.0) + a[:, None]
        Lnodes = np.where(self._lin[:, None], var, np.exp(var))
        self._var = var
        self._vals = np.asarray(m(Lnodes.ravel()), dtype=float).reshape(Lnodes.shape)
        self._cuts = np.concatenate([[0.0], self.edges])

    def __call__(self, L) -> np.ndarray:
        L = np.asarray(L, dtype=float)
        flat = L.ravel()
        out = np.zeros(flat.size)
        ok = (flat > 0) & (flat <= self.T)
        Lq = flat[ok]
        k = np.clip(np.searchsorted(self._cuts, Lq, side="right") - 1, 0, self._vals.shape[0] - 1)
        v = np.where(self._lin[k], Lq, np.log(np.maximum(Lq, 1e-300)))
        diff = v[:, None] - self._var[k]
        exact = diff == 0.0
        diff = np.where(exact, 1.0, diff)
        terms = self._bw / diff
        num = np.sum(terms * self._vals[k], axis=1)
        den = np.sum(terms, axis=1)
        res = num / den
        hit = exact.any(axis=1)
        if hit.any():
            res[hit] = np.sum(np.where(exact[hit], self._vals[k[hit]], 0.0), axis=1)
        out[ok] = res
        return out.reshape(L.shape)


# -- Green fields ---------------------------------------------------------------------


def _time_support(f: FieldHandle) -> tuple[float, float]:
    hint = f.support_hint
    if hint is None:
        return -math.inf, math.inf
    return float(getattr(hint, "t_min", -math.inf)), float(getattr(hint, "t_max", math.inf))


def _as_handle(f) -> FieldHandle:
    return f.handle() if isinstance(f, RestrictedSource) else f


@dataclass
class GreenField:
    """Convolution ``w = G * f`` as a lazily evaluated field.

    ``cache`` bounds the number of stored lag profiles (one per point).
    """

    p: FracParams
    f: FieldHandle
    spec: QuadratureSpec = field(default_factory=QuadratureSpec)
    normalization: str = "solution"
    profile_ppd: int = 4
    profile_order: int = 16
    cache: int = 64
    check_divergence: bool = True

    def __post_init__(self):
        self.f = _as_handle(self.f)
        self.kappa = green_constant(self.p, self.normalization)
        self.t_lo, self.t_hi = _time_support(self.f)
        self._profiles: OrderedDict = OrderedDict()

    # lag window for a point
    def _extent(self, t: float) -> float:
        return min(t - self.t_lo, self.spec.r_max)

    def _breaks(self, x, t, T) -> list[float]:
        out = [t - self.t_hi] if 0 < t - self.t_hi < T else []
        out += [b.lag for b in self.f.breaks(x, t) if 0 < b.lag < T]
        return sorted(set(out))

    def _means(self, x, t, L):
        return gaussian_means(self.f, x, t, L, self.spec.gh_order)

    def value_at(self, x, t: float) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        T = self._extent(t)
        if T <= 0:
            return 0.0
        bl = self._breaks(x, t, T)
        rule = origin_rule(T, self.p.s - 1.0, self.spec, [LagBreak(b) for b in bl])
        vals = self._means(x, t, rule.nodes)
        if not np.all(np.isfinite(vals)):
            raise DivergenceError("non-finite Gaussian means of the source")
        if self.check_divergence and not math.isfinite(self.t_lo):
            self._check_decay(rule, vals)
        return self.kappa * rule.apply(vals)

    def _check_decay(self, rule, vals) -> None:
        contrib = np.array([np.sum(pn.weights * vals[i : i + pn.nodes.size]) for i, pn in zip(np.cumsum([0] + [q.nodes.size for q in rule.panels[:-1]]), rule.panels)])
        his = np.array([pn.r_hi for pn in rule.panels])
        dec = np.floor(np.log10(his) - 1e-9).astype(int)
        top = dec.max()
        by_dec = np.array([abs(np.sum(contrib[dec == d])) for d in range(top - 3, top + 1)])
        total = abs(float(np.sum(contrib))) + 1e-300
        if by_dec[-1] <= 1e-9 * total:
            return
        ratios = by_dec[1:] / np.maximum(by_dec[:-1], 1e-300)
        if np.any(ratios >= 0.99):
            raise DivergenceError(
                f"lag integral does not converge: contributions of the last decades up to r={his[-1]:g} "
                f"grow by factors {np.round(ratios, 3).tolist()}"
            )

    def evaluate(self, x, t):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], np.shape(t))
        xb = np.broadcast_to(x, shape + (self.p.n,)).reshape(-1, self.p.n)
        tb = np.broadcast_to(np.asarray(t, dtype=float), shape).ravel()
        out = np.array([self.value_at(xi, ti) for xi, ti in zip(xb, tb)])
        return out.reshape(shape)

    def profile(self, x, t: float) -> LagProfile | None:
        key = (tuple(np.round(np.asarray(x, dtype=float), 15)), float(t))
        if key in self._profiles:
            self._profiles.move_to_end(key)
            return self._profiles[key]
        T = self._extent(t)
        prof = None
        if T > 0:
            xa = np.asarray(x, dtype=float)
            prof = LagProfile(
                lambda L: self._means(xa, t, L),
                T,
                self._breaks(xa, t, T),
                ppd=self.profile_ppd,
                order=self.profile_order,
            )
        self._profiles[key] = prof
        if len(self._profiles) > self.cache:
            self._profiles.popitem(last=False)
        return prof

    def mean_at(self, x, t: float, r: np.ndarray) -> np.ndarray:
        """``P_r w(x, t) = kappa int rho^{s-1} P_{r+rho} f(x, t) drho`` for lags ``r``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        prof = self.profile(x, t)
        out = np.zeros(r.size)
        if prof is None:
            return out
        T = prof.T
        bl = self._breaks(np.asarray(x, dtype=float), t, T)
        for i, ri in enumerate(r):
            if ri >= T:
                continue
            hi = T - ri
            rb = [LagBreak(b - ri) for b in bl if 0 < b - ri < hi]
            rule = origin_rule(hi, self.p.s - 1.0, self.spec, rb)
            out[i] = self.kappa * rule.apply(prof(ri + rule.nodes))
        return out

    def mean(self, x, t, r):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], np.shape(t), np.shape(r))
        xb = np.broadcast_to(x, shape + (self.p.n,)).reshape(-1, self.p.n)
        tb = np.broadcast_to(np.asarray(t, dtype=float), shape).ravel()
        rb = np.broadcast_to(np.asarray(r, dtype=float), shape).ravel()
        keys = np.concatenate([xb, tb[:, None]], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        out = np.empty(rb.size)
        for j, key in enumerate(uniq):
            sel = inv == j
            out[sel] = self.mean_at(key[:-1], key[-1], rb[sel])
        return out.reshape(shape)

    def lag_breaks(self, x, t):
        """``P_r w`` is only Holder continuous where the source support ends."""
        T = self._extent(t)
        out = []
        if 0 < T < self.spec.r_max:
            out.append(LagBreak(T, graded=True))
        if 0 < t - self.t_hi < T:
            out.append(LagBreak(t - self.t_hi, graded=True))
        return out

    def handle(self, fd_step: float = 1e-2, name: str = "w") -> FieldHandle:
        return FieldHandle(
            self.evaluate,
            n=self.p.n,
            growth=Growth("bounded"),
            mean=self.mean,
            lag_breaks=self.lag_breaks,
            fd_step=fd_step,
            name=name,
            thread_safe=False,
        )


def green_field(p: FracParams, f, spec: QuadratureSpec | None = None, **kw) -> FieldHandle:
    """Field handle for ``G * f`` whose Gaussian means use the semigroup identity."""
    return GreenField(p, f, spec or QuadratureSpec(), **kw).handle()


def convolve_green(
    p: FracParams, f, at: SpaceTimePoint, spec: QuadratureSpec | None = None, normalization: str = "solution"
) -> float:
    """``int_{-inf}^t int f(y, tau) G(x - y, t - tau) dy dtau`` at one point.

    Raises :class:`DivergenceError` when the source has no past cutoff and
    the per-decade lag contributions stop decaying (``f = 1`` for instance).
    """
    at.check(p)
    g = GreenField(p, f, spec or QuadratureSpec(), normalization=normalization)
    return g.value_at(at.as_array(), at.t)


def restrict(f: FieldHandle, Q: Cylinder, mode: str = "inside") -> FieldHandle:
    return RestrictedSource(f, Q, mode).handle()


def solve_w(
    p: FracParams,
    f: FieldHandle,
    Q: Cylinder,
    template: GridField,
    spec: QuadratureSpec | None = None,
    normalization: str = "solution",
) -> GridField:
    """``w = G * f_Q`` sampled at every node of ``template``."""
    gf = GreenField(p, RestrictedSource(f, Q), spec or QuadratureSpec(), normalization=normalization)
    out = template.fill(gf.evaluate, chunk=256)
    return out.with_values(out.values, name="w")


# -- decomposition ----------------------------------------------------------------------


@dataclass
class Decomposition:
    v: GridField
    w: GridField
    v_field: FieldHandle | None
    w_field: FieldHandle
    spot_residual: float | None
    warnings: list[str] = field(default_factory=list)


def _interior_points(Q: Cylinder, k: int, seed: int, shrink: float = 0.75) -> list[SpaceTimePoint]:
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < k:
        x = rng.uniform(-1, 1, size=Q.n)
        if x @ x >= 1:
            continue
        x = Q.center + shrink * Q.radius * x
        mid = 0.5 * (Q.t_min + Q.t_max)
        t = mid + shrink * 0.5 * (Q.t_max - Q.t_min) * rng.uniform(-1, 1)
        pts.append(SpaceTimePoint(tuple(x), float(t)))
    return pts


def decompose(
    p: FracParams,
    u: GridField | FieldHandle,
    f: FieldHandle,
    Q: Cylinder,
    spec: QuadratureSpec | None = None,
    template: GridField | None = None,
    spot_points: int = 3,
    spot_tol: float = 1e-2,
    seed: int = 0,
) -> Decomposition:
    """Split ``u`` into ``w = G * f_Q`` and ``v = u - w``.

    When ``u`` is a field handle the claim ``(d_t - Laplacian)^s u = f`` is
    spot-checked at a few interior points; a residual above ``spot_tol``
    times the source scale is reported in ``warnings``.
    """
    spec = spec or QuadratureSpec()
    warnings: list[str] = []
    w_field = green_field(p, RestrictedSource(f, Q), spec)
    if isinstance(u, GridField):
        grid_u = u
        u_field = None
        warnings.append("u given on a grid: operator spot check skipped")
    else:
        if template is None:
            raise ValueError("a grid template is needed when u is a field handle")
        grid_u = template.fill(u).with_values(template.fill(u).values, name="u")
        u_field = u
    w = solve_w(p, f, Q, grid_u, spec)
    v = grid_u - w
    v = v.with_values(v.values, name="v")
    v_field = None if u_field is None else combine([(1.0, u_field), (-1.0, w_field)])
    resid = None
    if u_field is not None and spot_points > 0:
        pts = _interior_points(Q, spot_points, seed)
        res = []
        for pt in pts:
            lu = apply_master(p, u_field, pt, spec, estimate_error=False, check=False).value
            res.append(abs(lu - f.value(pt.x, pt.t)))
        scale = max(1e-300, max(abs(f.value(pt.x, pt.t)) for pt in pts))
        resid = max(res) / scale
        if resid > spot_tol:
            warnings.append(f"spot check failed: relative operator residual {resid:.3g} > {spot_tol:g}")
    return Decomposition(v, w, v_field, w_field, resid, warnings)


@dataclass
class RepresentationReport:
    c_star: float
    residuals: np.ndarray
    max_deviation: float
    scale: float
    tolerance: float
    holds: bool
    warnings: list[str] = field(default_factory=list)


def verify_representation(
    p: FracParams,
    u: FieldHandle,
    f,
    points: Sequence[SpaceTimePoint],
    spec: QuadratureSpec | None = None,
    tol_factor: float = 10.0,
) -> RepresentationReport:
    """Fit ``u = c* + G * f`` on ``points``; ``c*`` is the median residual."""
    spec = spec or QuadratureSpec()
    g = GreenField(p, f, spec)
    uv = np.array([u.value(pt.x, pt.t) for pt in points])
    gv = np.array([g.value_at(np.asarray(pt.x), pt.t) for pt in points])
    fv = np.array([g.f.value(pt.x, pt.t) for pt in points])
    res = uv - gv
    c = float(np.median(res))
    dev = float(np.max(np.abs(res - c)))
    scale = float(max(np.max(np.abs(uv)), 1e-300))
    tol = tol_factor * spec.rel_tol * scale
    warn = []
    if np.any(uv < 0) or np.any(fv < 0):
        warn.append("u or f negative at a sample point: outside the regime where the representation is asserted")
    return RepresentationReport(c, res, dev, scale, tol, dev <= tol, warn)


def lemma41_bound(
    p: FracParams, Q: Cylinder, t: float | None = None, spec: QuadratureSpec | None = None, normalization: str = "solution"
) -> tuple[float, float]:
    """Explicit ``C3`` with ``|w| <= C3 ||f||_{L^inf(Q)}`` up to time ``t``.

    Bounds the spatial integral of the kernel by its full mass, leaving
    ``kappa int_0^{t - t_min} rho^{s-1} drho``. Returns the numerically
    integrated constant and the closed form ``kappa T^s / s``.
    """
    spec = spec or QuadratureSpec()
    T = (Q.t_max if t is None else t) - Q.t_min
    kappa = green_constant(p, normalization)
    rule = origin_rule(T, p.s - 1.0, spec)
    numeric = kappa * rule.apply(np.ones_like(rule.nodes))
    return numeric, kappa * T**p.s / p.s
