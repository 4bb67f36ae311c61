"""Integration engine for the time-lag representation of the master operator.

Substituting ``y = x - 2 sqrt(r) z`` and ``r = t - tau`` turns the space-time
singular integral into

.. math::

    (\\partial_t - \\Delta)^s u(x,t) = \\frac{1}{|\\Gamma(-s)|}
        \\int_0^\\infty r^{-1-s} \\bigl[u(x,t) - (P_r u)(x,t)\\bigr]\\,dr,

with :math:`P_r u(x,t) = \\pi^{-n/2}\\int e^{-|z|^2} u(x - 2\\sqrt{r} z, t-r)\\,dz`.
The constant works out because :math:`\\int e^{-|x-y|^2/(4r)}dy = (4\\pi r)^{n/2}`
and :math:`C_{n,s}(4\\pi)^{n/2} = 1/|\\Gamma(-s)|`.

The lag axis is cut at ``r_cut``: below it a Taylor model of
``u - P_r u`` is integrated in closed form, above it log-spaced Gauss-Legendre
panels run up to ``r_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_hermite, roots_jacobi, roots_legendre

__all__ = [
    "QuadratureSpec",
    "GaussianMeanProbe",
    "LagBreak",
    "LagPanel",
    "LagRule",
    "InnerTerm",
    "gaussian_probe",
    "gaussian_mean",
    "gaussian_means",
    "time_lag_panels",
    "lag_rule",
    "origin_rule",
    "heat_fd",
    "inner_asymptotic",
    "taylor_inner",
]


@dataclass(frozen=True)
class QuadratureSpec:
    r_cut: float = 1e-3
    r_max: float = 1e4
    panels_per_decade: int = 8
    gh_order: int = 20
    rel_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.r_cut < self.r_max:
            raise ValueError(f"need 0 < r_cut < r_max, got {self.r_cut}, {self.r_max}")
        if self.panels_per_decade < 1:
            raise ValueError("panels_per_decade must be positive")
        if self.gh_order < 4:
            raise ValueError("gh_order must be at least 4")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")

    def replace(self, **kw) -> "QuadratureSpec":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return QuadratureSpec(**d)


# -- Gaussian averages --------------------------------------------------------


@lru_cache(maxsize=64)
def _hermite_tensor(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    z, w = roots_hermite(order)
    w = w / math.sqrt(math.pi)
    grids = np.meshgrid(*([z] * n), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wg = np.meshgrid(*([w] * n), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wg], axis=-1), axis=-1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@dataclass(frozen=True)
class GaussianMeanProbe:
    """Weights and spatial offsets realizing ``P_r`` at one lag ``r``."""

    r: float
    weights: np.ndarray
    offsets: np.ndarray

    @property
    def nodes(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.weights.tolist(), self.offsets))


def gaussian_probe(n: int, r: float, order: int = 20) -> GaussianMeanProbe:
    z, w = _hermite_tensor(n, order)
    return GaussianMeanProbe(r=float(r), weights=w, offsets=-2.0 * math.sqrt(r) * z)


def gaussian_means(u, x, t, r, order: int = 20) -> np.ndarray:
    """Vectorized ``P_r u(x, t)``.

    ``x`` has shape ``(..., n)``, ``t`` and ``r`` broadcast against ``x[..., 0]``.
    Uses ``u.mean`` when the field provides a closed form, otherwise a tensor
    Gauss-Hermite rule of ``order`` nodes per dimension.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    mean = getattr(u, "mean", None)
    if mean is not None:
        return np.asarray(mean(x, t, r), dtype=float)
    evaluate = getattr(u, "evaluator", u)
    n = x.shape[-1]
    shape = np.broadcast_shapes(x.shape[:-1], t.shape, r.shape)
    x = np.broadcast_to(x, shape + (n,))
    t = np.broadcast_to(t, shape)
    r = np.broadcast_to(r, shape)
    z, w = _hermite_tensor(n, order)
    pts = x[..., None, :] - 2.0 * np.sqrt(r)[..., None, None] * z
    ts = np.broadcast_to((t - r)[..., None], pts.shape[:-1])
    vals = np.asarray(evaluate(pts, ts), dtype=float)
    return vals @ w


def gaussian_mean(u, x, t, r, spec: QuadratureSpec | None = None) -> float:
    """``(P_r u)(x, t)`` at a single point and lag."""
    if not r > 0:
        raise ValueError("lag r must be positive")
    order = (spec or QuadratureSpec()).gh_order
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(gaussian_means(u, x, t, r, order))


# -- lag panels ---------------------------------------------------------------


@dataclass(frozen=True)
class LagBreak:
    """A lag where the integrand is not smooth.

    ``exponent`` (if given) declares an integrable endpoint singularity
    ``(lag - r)^exponent`` approached from below; it gets a Gauss-Jacobi panel.
    ``graded`` asks for geometric refinement toward the lag from both sides,
    for integrands that are merely Holder continuous there.
    """

    lag: float
    exponent: float | None = None
    graded: bool = False


@dataclass(frozen=True)
class LagPanel:
    r_lo: float
    r_hi: float
    nodes: np.ndarray
    weights: np.ndarray


@dataclass
class LagRule:
    """Quadrature rule ``sum_i weights[i] g(nodes[i])`` for a weighted lag integral."""

    panels: list[LagPanel] = field(default_factory=list)

    @property
    def nodes(self) -> np.ndarray:
        if not self.panels:
            return np.empty(0)
        return np.concatenate([p.nodes for p in self.panels])

    @property
    def weights(self) -> np.ndarray:
        if not self.panels:
            return np.empty(0)
        return np.concatenate([p.weights for p in self.panels])

    @property
    def r_lo(self) -> float:
        return self.panels[0].r_lo

    @property
    def r_hi(self) -> float:
        return self.panels[-1].r_hi

    def apply(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))


_LEG_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _legendre(m: int):
    if m not in _LEG_CACHE:
        _LEG_CACHE[m] = roots_legendre(m)
    return _LEG_CACHE[m]


@lru_cache(maxsize=256)
def _panel_order(width_log: float, exponent: float, rel_tol: float) -> int:
    """Smallest Gauss-Legendre order (in log r) integrating ``r^{exponent} log(r)^k``,
    ``k <= 8``, over a panel of log-width ``width_log`` to ``rel_tol``.

    Panels of equal log-width are similar, so one reference panel decides for all.
    """
    a = exponent + 1.0  # integrand in rho = log r is exp(a rho) rho^k
    ref_x, ref_w = _legendre(40)
    lo, hi = 0.0, width_log
    rho_ref = 0.5 * (hi - lo) * ref_x + 0.5 * (hi + lo)
    wr = 0.5 * (hi - lo) * ref_w
    for m in range(5, 33):
        x, w = _legendre(m)
        rho = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        wm = 0.5 * (hi - lo) * w
        worst = 0.0
        for k in range(9):
            exact = np.sum(wr * np.exp(a * rho_ref) * (rho_ref - 0.5 * hi) ** k)
            approx = np.sum(wm * np.exp(a * rho) * (rho - 0.5 * hi) ** k)
            scale = np.sum(wr * np.exp(a * rho_ref) * np.abs(rho_ref - 0.5 * hi) ** k)
            worst = max(worst, abs(approx - exact) / scale)
        if worst <= rel_tol * 1e-2:
            return m
    return 32


def _log_panel(lo: float, hi: float, exponent: float, m: int) -> LagPanel:
    x, w = _legendre(m)
    a, b = math.log(lo), math.log(hi)
    rho = 0.5 * (b - a) * x + 0.5 * (b + a)
    r = np.exp(rho)
    weights = 0.5 * (b - a) * w * r ** (exponent + 1.0)
    return LagPanel(lo, hi, r, weights)


def _jacobi_left_panel(lo: float, hi: float, exponent: float, gamma: float, m: int) -> LagPanel:
    """Panel on ``[lo, hi]`` for ``r^exponent g(r)`` with ``g ~ (hi - r)^gamma``."""
    # roots_jacobi(m, alpha, beta): weight (1-x)^alpha (1+x)^beta on [-1, 1]
    x, w = roots_jacobi(m, gamma, 0.0)
    half = 0.5 * (hi - lo)
    r = half * x + 0.5 * (hi + lo)
    dist = hi - r
    weights = w * half ** (gamma + 1.0) * dist ** (-gamma) * r**exponent
    return LagPanel(lo, hi, r, weights)


def _jacobi_origin_panel(hi: float, exponent: float, m: int) -> LagPanel:
    """Panel on ``[0, hi]`` for ``r^exponent g(r)`` with ``exponent > -1``."""
    x, w = roots_jacobi(m, 0.0, exponent)
    half = 0.5 * hi
    r = half * (x + 1.0)
    return LagPanel(0.0, hi, r, w * half ** (exponent + 1.0))


def lag_rule(
    lo: float,
    hi: float,
    exponent: float,
    panels_per_decade: int,
    rel_tol: float,
    breaks: Sequence[LagBreak] = (),
    grading: int = 40,
) -> LagRule:
    """Rule for ``int_lo^hi r^exponent g(r) dr`` on log-spaced panels.

    Panel edges are the decade grid ``lo * 10^(k/panels_per_decade)``,
    clipped at ``hi`` and split at every break inside ``(lo, hi)``. A break
    with an exponent is approached by geometrically graded panels that end in
    one Gauss-Jacobi panel carrying the declared singular factor.
    """
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    width = math.log(10.0) / panels_per_decade
    m = _panel_order(round(width, 12), round(exponent, 12), rel_tol)
    n_pan = max(1, math.ceil(math.log(hi / lo) / width - 1e-9))
    grid = list(lo * np.exp(width * np.arange(n_pan + 1)))
    grid[-1] = hi
    inner = sorted({b.lag for b in breaks if lo < b.lag < hi})
    # drop decade edges near a break so no plain panel ends next to a singularity
    for b in inner:
        grid = [e for e in grid if e in (lo, hi) or abs(math.log(e / b)) > 0.5 * width]
    edges = sorted(set(grid) | set(inner))
    singular = {b.lag: b.exponent for b in breaks if b.exponent is not None and lo < b.lag <= hi}
    graded = {b.lag for b in breaks if b.graded and b.exponent is None and lo <= b.lag <= hi}

    panels: list[LagPanel] = []
    for a, b in zip(edges[:-1], edges[1:]):
        gam = singular.get(b)
        if gam is None:
            ga, gb = a in graded, b in graded
            if ga and gb:
                mid = 0.5 * (a + b)
                panels.extend(_graded(a, mid, a, exponent, m, grading // 2))
                panels.extend(_graded(mid, b, b, exponent, m, grading // 2))
            elif ga or gb:
                panels.extend(_graded(a, b, a if ga else b, exponent, m, grading // 2))
            else:
                panels.append(_log_panel(a, b, exponent, m))
            continue
        # geometric grading toward b, width halving each level
        left = a
        level_w = (b - a) / 2.0
        for _ in range(grading):
            right = b - level_w
            if right <= left:
                break
            panels.append(_legendre_panel(left, right, exponent, m))
            left = right
            level_w /= 2.0
        panels.append(_jacobi_left_panel(left, b, exponent, gam, m))
    return LagRule(panels)


def _graded(a: float, b: float, target: float, exponent: float, m: int, levels: int) -> list[LagPanel]:
    """Legendre panels on ``[a, b]`` halving in width toward ``target`` (an endpoint)."""
    cuts = [target]
    w = b - a
    for _ in range(levels):
        w /= 2.0
        cuts.append(target + w if target == a else target - w)
    cuts.append(b if target == a else a)
    cuts = sorted(cuts)
    return [_legendre_panel(lo, hi, exponent, m) for lo, hi in zip(cuts[:-1], cuts[1:])]


def _legendre_panel(lo: float, hi: float, exponent: float, m: int) -> LagPanel:
    x, w = _legendre(m)
    half = 0.5 * (hi - lo)
    r = half * x + 0.5 * (hi + lo)
    return LagPanel(lo, hi, r, half * w * r**exponent)


def origin_rule(
    hi: float,
    exponent: float,
    spec: QuadratureSpec,
    breaks: Sequence[LagBreak] = (),
    jacobi_order: int = 12,
) -> LagRule:
    """Rule for ``int_0^hi r^exponent g(r) dr`` with ``exponent > -1``.

    A Gauss-Jacobi panel carries ``[0, min(r_cut, hi)]``; log panels follow.
    """
    if exponent <= -1:
        raise ValueError("origin_rule needs an integrable weight (exponent > -1)")
    first = min(spec.r_cut, hi)
    inner_breaks = [b for b in breaks if 0 < b.lag < first]
    if inner_breaks:
        first = min(b.lag for b in inner_breaks)
    rule = LagRule([_jacobi_origin_panel(first, exponent, jacobi_order)])
    if hi > first * (1 + 1e-12):
        rule.panels.extend(
            lag_rule(first, hi, exponent, spec.panels_per_decade, spec.rel_tol, breaks).panels
        )
    return rule


def time_lag_panels(
    spec: QuadratureSpec, s: float, breaks: Sequence[LagBreak] = ()
) -> list[tuple[float, float, np.ndarray, np.ndarray]]:
    """Panels covering ``[r_cut, r_max]`` against the weight ``r^{-1-s}``.

    Returns ``(r_lo, r_hi, nodes, weights)`` per panel.
    """
    rule = lag_rule(spec.r_cut, spec.r_max, -1.0 - s, spec.panels_per_decade, spec.rel_tol, breaks)
    return [(p.r_lo, p.r_hi, p.nodes, p.weights) for p in rule.panels]


# -- inner panel --------------------------------------------------------------


def heat_fd(u, x, t, h: float, ht: float | None = None) -> float:
    """``(d/dt - Laplacian) u`` at ``(x, t)`` by finite differences.

    Fourth-order centered in each spatial axis, second-order backward in time.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]
    ht = h if ht is None else ht
    evaluate = getattr(u, "evaluator", u)
    coef = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
    steps = np.array([-2, -1, 0, 1, 2], dtype=float)
    pts = np.repeat(x[None, :], 5 * n + 2, axis=0)
    for i in range(n):
        pts[5 * i : 5 * i + 5, i] += steps * h
    ts = np.full(5 * n + 2, float(t))
    ts[-2] -= ht
    ts[-1] -= 2.0 * ht
    vals = np.asarray(evaluate(pts, ts), dtype=float)
    lap = sum(coef @ vals[5 * i : 5 * i + 5] for i in range(n)) / h**2
    u0 = vals[2]
    dt = (3.0 * u0 - 4.0 * vals[-2] + vals[-1]) / (2.0 * ht)
    return float(dt - lap)


@dataclass(frozen=True)
class InnerTerm:
    value: float
    error: float
    heat: float


def taylor_inner(heat: float, heat_coarse: float, g_cut: float, r_cut: float, s: float) -> InnerTerm:
    """Closed-form ``int_0^r_cut r^{-1-s} g(r) dr`` for ``g(r) = a1 r + a2 r^2``.

    ``a1`` is the local heat operator; ``a2`` is matched so that the model
    reproduces the computed ``g(r_cut)``. The reported error combines the size
    of the quadratic correction with the finite-difference step sensitivity.
    """
    lead = heat * r_cut ** (1.0 - s) / (1.0 - s)
    a2 = (g_cut - heat * r_cut) / r_cut**2
    corr = a2 * r_cut ** (2.0 - s) / (2.0 - s)
    fd_err = abs(heat - heat_coarse) * r_cut ** (1.0 - s) / (1.0 - s)
    return InnerTerm(lead + corr, abs(corr) * r_cut + fd_err, heat)


def fd_step(u, x) -> float:
    step = getattr(u, "fd_step", None)
    if step:
        return float(step)
    scale = max(1.0, float(np.max(np.abs(x))) if np.size(x) else 1.0)
    return max(1e-4, math.sqrt(np.finfo(float).eps) * scale)


def inner_asymptotic(u, x, t, spec: QuadratureSpec, p, coarse: bool = True) -> InnerTerm:
    """``int_0^r_cut r^{-1-s} [u(x,t) - P_r u(x,t)] dr`` via the local Taylor model.

    ``coarse=False`` skips the doubled-step stencil, dropping the
    finite-difference part of the error estimate.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = fd_step(u, x)
    heat = heat_fd(u, x, t, h)
    heat2 = heat_fd(u, x, t, 2.0 * h) if coarse else heat
    evaluate = getattr(u, "evaluator", u)
    u0 = float(np.asarray(evaluate(x[None, :], np.array([float(t)])))[0])
    g_cut = u0 - float(gaussian_means(u, x, t, spec.r_cut, spec.gh_order))
    return taylor_inner(heat, heat2, g_cut, spec.r_cut, p.s)
