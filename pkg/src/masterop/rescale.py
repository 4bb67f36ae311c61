"""Blow-up point selection and parabolic rescaling.

Given a nonnegative sampled field ``u`` and a point ``X_k`` where it is large,
the selection maximizes

.. math:: S_k(X) = u(X) (R_k - |X - X_k|)^{2s/(p-1)}

over the Euclidean space-time ball ``B_{R_k}(X_k)`` (or the gradient-augmented
quantity ``M_k``), rescales around the maximizer ``A_k`` with
``lambda_k = u(A_k)^{-(p-1)/(2s)}`` and checks the algebra that guarantees
``v_k(0, 0) = 1`` and a uniform ceiling on ``Q_{R/sqrt(n+1)}(0, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fields import FieldHandle, Growth, time_lift
from .geometry import ParabolicCylinder
from .grid import Axis, GridField
from .kernel import FracParams, SpaceTimePoint
from .operator import apply_master
from .quadrature import LagBreak, QuadratureSpec
from .regularity import fd_derivative

__all__ = [
    "BlowupProblem",
    "RescaleResult",
    "RescaleError",
    "select_blowup_point",
    "rescale_field",
    "rescale",
    "scaling_exponent_table",
    "rescaled_handle",
    "check_rescaled_equation",
    "self_similar_solution",
    "synthetic_blowup_grid",
]

VARIANTS = ("height", "height-plus-gradient")
BOUND_TOL = 1e-3


class RescaleError(RuntimeError):
    """A guaranteed inequality failed beyond tolerance (points at a selection bug)."""


def _one(x) -> float:
    return 1.0


@dataclass(frozen=True)
class BlowupProblem:
    """Data of the semilinear problem ``(d_t - Laplacian)^s u = b |grad u|^q + f(x, u)``."""

    p: float
    s: float
    q: float = 0.0
    b: Callable = _one
    K: Callable = _one
    C0: float = 1.0
    Kbar: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not 0 < self.s < 1:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.q < 0:
            raise ValueError(f"q must be nonnegative, got {self.q}")
        if not (self.C0 > 0 and self.Kbar > 0):
            raise ValueError("C0 and Kbar must be positive")

    @property
    def gamma(self) -> float:
        """Height exponent ``2s/(p-1)``."""
        return 2.0 * self.s / (self.p - 1.0)

    def p_upper(self, n: int) -> float:
        """Upper end ``(n+2)/(n+2-2s)`` of the admissible nonlinearity range."""
        return (n + 2.0) / (n + 2.0 - 2.0 * self.s)

    def q_critical(self) -> float:
        return 2.0 * self.s * self.p / (2.0 * self.s + self.p - 1.0)

    def validate(self, n: int, variant: str = "height") -> None:
        """Raise ``ValueError`` naming the violated hypothesis."""
        if variant == "height":
            if not self.p < self.p_upper(n):
                raise ValueError(
                    f"p = {self.p} violates 1 < p < (n+2)/(n+2-2s) = {self.p_upper(n):.6g} for n = {n}, s = {self.s}"
                )
        elif variant == "height-plus-gradient":
            if not self.s > 0.5:
                raise ValueError(f"the gradient regime needs s > 1/2, got s = {self.s}")
            if not 0 < self.q < self.q_critical():
                raise ValueError(f"the gradient regime needs 0 < q < 2sp/(2s+p-1) = {self.q_critical():.6g}, got {self.q}")
        else:
            raise ValueError(f"unknown variant {variant!r}")


@dataclass
class RescaleResult:
    variant: str
    X_k: SpaceTimePoint
    R: float
    R_k: float
    A_k: SpaceTimePoint
    lambda_k: float
    m_k: float
    bound: float
    S_max: float
    refined: bool
    checks: dict = field(default_factory=dict)
    v_k: GridField | None = None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "X_k": {"x": list(self.X_k.x), "t": self.X_k.t},
            "R": self.R,
            "R_k": self.R_k,
            "A_k": {"x": list(self.A_k.x), "t": self.A_k.t},
            "lambda_k": self.lambda_k,
            "m_k": self.m_k,
            "bound": self.bound,
            "S_max": self.S_max,
            "refined": self.refined,
            "checks": dict(self.checks),
        }


# -- sampled quantities ----------------------------------------------------------------


class _Sampled:
    """Interpolants of ``u`` and, for the gradient variant, ``|grad_x u|``."""

    def __init__(self, u: GridField, prob: BlowupProblem, variant: str):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if np.any(u.values < 0):
            raise ValueError("blow-up selection needs a nonnegative field")
        self.u, self.prob, self.variant = u, prob, variant
        self.grid = [a.nodes for a in u.axes] + [u.time_axis.nodes]
        self._u = RegularGridInterpolator(self.grid, u.values, bounds_error=True)
        self.grad = None
        if variant == "height-plus-gradient":
            g = np.stack([fd_derivative(u.values, a.spacing, i) for i, a in enumerate(u.axes)], axis=-1)
            self.grad_nodes = g
            self.grad = RegularGridInterpolator(self.grid, g, bounds_error=True)
        self.a = (prob.p - 1.0) / (2.0 * prob.s)
        self.b = (prob.p - 1.0) / (2.0 * prob.s + prob.p - 1.0)

    def height(self, P: np.ndarray) -> np.ndarray:
        return self._u(P)

    def grad_norm(self, P: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.grad(P), axis=-1)

    def M(self, P: np.ndarray) -> np.ndarray:
        """``u^{(p-1)/(2s)} + |grad u|^{(p-1)/(2s+p-1)}`` (or ``u^{(p-1)/(2s)}`` alone)."""
        m = self.height(P) ** self.a
        if self.grad is not None:
            m = m + self.grad_norm(P) ** self.b
        return m

    def S(self, P: np.ndarray, X: np.ndarray, R_k: float) -> np.ndarray:
        d = np.maximum(R_k - np.linalg.norm(P - X, axis=-1), 0.0)
        if self.grad is None:
            return self.height(P) * d**self.prob.gamma
        return (self.M(P) * d) ** self.prob.gamma


def _nodes(u: GridField) -> np.ndarray:
    X, T = u.nodes()
    return np.concatenate([X, T[:, None]], axis=1)


def _point(P: np.ndarray) -> SpaceTimePoint:
    return SpaceTimePoint(tuple(P[:-1]), P[-1])


def _covers(u: GridField, X: np.ndarray, r: float) -> bool:
    lo = np.array([a.min for a in u.axes] + [u.time_axis.min])
    hi = np.array([a.max for a in u.axes] + [u.time_axis.max])
    return bool(np.all(X - r >= lo - 1e-12) and np.all(X + r <= hi + 1e-12))


def _refine(smp: _Sampled, u: GridField, idx: int, X: np.ndarray, R_k: float) -> np.ndarray | None:
    """One separable quadratic step from node ``idx``; ``None`` if it does not improve ``S``."""
    shape = u.shape
    multi = np.unravel_index(idx, shape, order="F")
    steps = [a.spacing for a in u.axes] + [u.time_axis.spacing]
    P0 = np.array([smp.grid[d][multi[d]] for d in range(len(shape))])
    S0 = float(smp.S(P0[None, :], X, R_k)[0])
    delta = np.zeros(len(shape))
    for d, h in enumerate(steps):
        if not 0 < multi[d] < shape[d] - 1:
            continue
        e = np.zeros(len(shape))
        e[d] = h
        Sm, Sp = smp.S(np.stack([P0 - e, P0 + e]), X, R_k)
        curv = Sm - 2.0 * S0 + Sp
        if curv < 0:
            delta[d] = float(np.clip(0.5 * h * (Sm - Sp) / curv, -0.5 * h, 0.5 * h))
    if not np.any(delta):
        return None
    P = P0 + delta
    if np.linalg.norm(P - X) >= R_k:
        return None
    return P if float(smp.S(P[None, :], X, R_k)[0]) > S0 else None


def select_blowup_point(
    u: GridField,
    X_k: SpaceTimePoint,
    R: float,
    prob: BlowupProblem,
    variant: str = "height",
    refine: bool = True,
) -> RescaleResult:
    """Maximize ``S_k`` over ``B_{R_k}(X_k)`` and set ``lambda_k``.

    Exhaustive scan over grid nodes (lowest file-order index wins ties) plus
    ``X_k`` itself, then one local quadratic refinement. Verifies
    ``2 R lambda_k <= R_k - |A_k - X_k|`` and reports the defect.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    smp = _Sampled(u, prob, variant)
    X = np.append(X_k.as_array(), X_k.t)
    if X.size != u.n + 1:
        raise ValueError("blow-up point dimension does not match the grid")
    if not _covers(u, X, 0.0):
        raise ValueError("blow-up point lies outside the sampled box")
    MX = float(smp.M(X[None, :])[0])
    if not MX > 0:
        raise ValueError("the normalizing quantity vanishes at the blow-up point")
    R_k = 2.0 * R / MX
    if not _covers(u, X, R_k):
        raise ValueError(f"the sampled box does not cover the ball B_{{R_k}}(X_k) with R_k = {R_k:.6g}")

    P = _nodes(u)
    inside = np.linalg.norm(P - X, axis=1) < R_k
    S = np.where(inside, smp.S(P, X, R_k), -np.inf)
    idx = int(np.argmax(S))
    S_node = float(S[idx])
    S_X = float(smp.S(X[None, :], X, R_k)[0])
    A = P[idx].copy()
    S_best = S_node
    refined = False
    if S_X > S_node:
        A, S_best = X.copy(), S_X
    elif refine:
        Pr = _refine(smp, u, idx, X, R_k)
        if Pr is not None:
            A, S_best, refined = Pr, float(smp.S(Pr[None, :], X, R_k)[0]), True

    MA = float(smp.M(A[None, :])[0])
    lam = 1.0 / MA
    m_k = float(smp.height(A[None, :])[0]) if variant == "height" else MA**prob.gamma
    gap = R_k - float(np.linalg.norm(A - X))
    checks = {
        "eq56_lhs": 2.0 * R * lam,
        "eq56_rhs": gap,
        "eq56_defect": max(0.0, 2.0 * R * lam - gap),
    }

    # pointwise chain on nodes of B_{R lambda}(A)
    ball = np.linalg.norm(P - A, axis=1) <= R * lam
    if np.any(ball):
        rest = R_k - np.linalg.norm(P[ball] - X, axis=1)
        chain = gap - 2.0 * rest
        checks["chain_defect"] = float(max(0.0, np.max(chain)))
        ratio = smp.M(P[ball]) / MA
        checks["local_ratio_max"] = float(np.max(ratio))
        checks["local_ratio_defect"] = float(max(0.0, np.max(ratio) - 2.0))
    else:
        checks["chain_defect"] = 0.0
        checks["local_ratio_max"] = 1.0
        checks["local_ratio_defect"] = 0.0
    checks["nodes_in_ball"] = int(np.count_nonzero(ball))

    bound = 2.0**prob.gamma if variant == "height" else 2.0
    return RescaleResult(variant, X_k, float(R), R_k, _point(A), lam, m_k, bound, S_best, refined, checks)


def _rescaled_axes(n: int, R_bar: float, steps: int, time_steps: int) -> tuple[tuple, Axis]:
    if steps % 2 == 0 or time_steps % 2 == 0:
        raise ValueError("rescaled grids need odd step counts so that (0, 0) is a node")
    return tuple(Axis(-R_bar, R_bar, steps) for _ in range(n)), Axis(-R_bar * R_bar, R_bar * R_bar, time_steps)


def rescale_field(
    u: GridField,
    res: RescaleResult,
    R: float,
    prob: BlowupProblem,
    steps: int = 41,
    time_steps: int = 41,
) -> GridField:
    """Sample ``v_k(x, t) = u(lambda x + xbar, lambda^2 t + tbar) / m_k`` on ``Q_{Rbar}(0, 0)``.

    For the height variant the stored values are ``v_k``; for the gradient
    variant they are the combined quantity
    ``v^{(p-1)/(2s)} + |grad v|^{(p-1)/(2s+p-1)}``. The centre node is
    mapped exactly onto ``A_k`` so the normalization is exact. Raises
    :class:`RescaleError` if the ceiling fails by more than ``1e-3``.
    """
    smp = _Sampled(u, prob, res.variant)
    n = u.n
    R_bar = R / math.sqrt(n + 1.0)
    lam = res.lambda_k
    if R_bar * lam > 1.0:
        raise ValueError("R_bar * lambda_k > 1: the parabolic cylinder is not inside B_{R lambda_k}(A_k)")
    axes, t_axis = _rescaled_axes(n, R_bar, steps, time_steps)
    A = np.append(res.A_k.as_array(), res.A_k.t)
    template = GridField("v_k", axes, t_axis, np.zeros(tuple(a.steps for a in axes) + (time_steps,)))
    Xr, Tr = template.nodes()
    phys = np.concatenate([lam * Xr, (lam * lam * Tr)[:, None]], axis=1) + A
    centre = np.ravel_multi_index(tuple(a.steps // 2 for a in axes) + (time_steps // 2,), template.shape, order="F")
    phys[centre] = A
    if not (_covers(u, phys.min(axis=0), 0.0) and _covers(u, phys.max(axis=0), 0.0)):
        raise ValueError("the rescaled cylinder leaves the sampled box")

    if res.variant == "height":
        vals = smp.height(phys) / res.m_k
        if vals[centre] != 1.0:
            raise RescaleError(f"normalization failed: v_k(0,0) = {vals[centre]!r}")
    else:
        MA = float(smp.M(A[None, :])[0])
        vals = smp.M(phys) / MA
        if vals[centre] != 1.0:
            raise RescaleError(f"normalization failed: combined quantity at (0,0) = {vals[centre]!r}")
    cyl = ParabolicCylinder((0.0,) * n, 0.0, R_bar)
    v = GridField("v_k", axes, t_axis, vals.reshape(template.shape, order="F"), cyl)
    peak = float(np.max(vals))
    res.checks["v_max"] = peak
    res.checks["ceiling_defect"] = max(0.0, peak - res.bound)
    if peak > res.bound + BOUND_TOL:
        raise RescaleError(f"ceiling violated: max {peak:.6g} > {res.bound:.6g} + {BOUND_TOL}")
    return v


def rescale(
    u: GridField,
    X_k: SpaceTimePoint,
    R: float,
    prob: BlowupProblem,
    variant: str = "height",
    steps: int = 41,
    time_steps: int = 41,
) -> RescaleResult:
    """Selection followed by rescaling; the result carries ``v_k``."""
    res = select_blowup_point(u, X_k, R, prob, variant)
    v = rescale_field(u, res, R, prob, steps, time_steps)
    return replace(res, v_k=v)


def scaling_exponent_table(prob: BlowupProblem, n: int | None = None, tol: float = 1e-12) -> dict:
    """Exponents of the rescaled equation and the regime flags."""
    p, s, q = prob.p, prob.s, prob.q
    grad_exp = (2 * s * p - (2 * s + p - 1) * q) / (p - 1)
    out = {
        "height_exponent": 2 * s / (p - 1),
        "scale_exponent": (p - 1) / (2 * s),
        "source_exponent": 2 * s * p / (p - 1),
        "gradient_term_exponent": grad_exp,
        "gradient_bound_exponent": 2 * s / (2 * s + p - 1),
        "q_critical": prob.q_critical(),
        "gradient_term_vanishes": bool(grad_exp > tol),
        "critical_q": bool(abs(q - prob.q_critical()) <= tol),
    }
    if n is not None:
        out["p_upper"] = prob.p_upper(n)
        out["p_in_range"] = bool(1 < p < prob.p_upper(n))
    return out


# -- analytic checks ---------------------------------------------------------------------


def rescaled_handle(u: FieldHandle, res: RescaleResult) -> FieldHandle:
    """``v(x, t) = u(lambda x + xbar, lambda^2 t + tbar) / m_k`` as a field handle.

    Gaussian means follow from parabolic scaling:
    ``P_r v(x, t) = P_{lambda^2 r} u(lambda x + xbar, lambda^2 t + tbar) / m_k``.
    """
    lam, m = res.lambda_k, res.m_k
    xb, tb = res.A_k.as_array(), res.A_k.t
    ev, mn, lb = u.evaluator, u.mean, u.lag_breaks

    def ev_v(x, t):
        return ev(lam * np.asarray(x) + xb, lam * lam * np.asarray(t) + tb) / m

    mean = None
    if mn is not None:

        def mean(x, t, r):
            return mn(lam * np.asarray(x) + xb, lam * lam * np.asarray(t) + tb, lam * lam * np.asarray(r)) / m

    breaks = None
    if lb is not None:

        def breaks(x, t):
            out = lb(lam * np.asarray(x) + xb, lam * lam * t + tb)
            return [LagBreak(b.lag / (lam * lam), b.exponent, b.graded) for b in out]

    return FieldHandle(
        ev_v,
        n=u.n,
        growth=u.growth,
        mean=mean,
        lag_breaks=breaks,
        fd_step=None if u.fd_step is None else u.fd_step / lam,
        name=f"rescaled({u.name})",
        thread_safe=u.thread_safe,
    )


def check_rescaled_equation(
    prob: BlowupProblem,
    u: FieldHandle,
    res: RescaleResult,
    f: Callable | None = None,
    spec: QuadratureSpec | None = None,
) -> dict:
    """Compare the master operator of ``v_k`` at the origin with the rescaled source.

    ``u`` must solve ``(d_t - Laplacian)^s u = f(x, u)``; the expected value is
    ``lambda^{2sp/(p-1)} f(xbar, lambda^{-2s/(p-1)} v(0, 0))``. Default
    ``f(x, u) = u^p``.
    """
    f = f or (lambda x, w: w**prob.p)
    v = rescaled_handle(u, res)
    pp = FracParams(u.n, prob.s)
    out = apply_master(pp, v, SpaceTimePoint((0.0,) * u.n, 0.0), spec)
    v0 = v.value(np.zeros(u.n), 0.0)
    lam = res.lambda_k
    expected = lam ** (2 * prob.s * prob.p / (prob.p - 1)) * f(res.A_k.as_array(), lam ** (-prob.gamma) * v0)
    return {
        "value": out.value,
        "error_estimate": out.error,
        "expected": float(expected),
        "rel_error": abs(out.value - expected) / abs(expected),
        "v00": v0,
    }


def self_similar_solution(n: int, s: float, p: float, T: float = 0.0) -> FieldHandle:
    """Exact blow-up solution of ``(d_t - Laplacian)^s u = u^p`` for ``t < T``.

    ``u = c (T - t)^{-beta}`` with ``beta = s/(p-1)`` and
    ``c^{p-1} = Gamma(beta+s)/Gamma(beta)``, from the fractional derivative
    of a power, ``D^s tau^{-beta} = Gamma(beta+s)/Gamma(beta) tau^{-beta-s}``.
    """
    beta = s / (p - 1.0)
    c = (math.gamma(beta + s) / math.gamma(beta)) ** (1.0 / (p - 1.0))

    def g(t):
        tau = T - np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tau > 0, c * np.abs(tau) ** (-beta), np.inf)

    return time_lift(n, g, Growth("bounded"), name="self_similar")


def synthetic_blowup_grid(
    height: float,
    prob: BlowupProblem,
    n: int = 1,
    steps: int = 401,
    time_steps: int = 401,
    box: float = 1.0,
    spike: float = 8.0,
    spike_offset: float = 0.2,
    spike_width: float = 0.15,
) -> GridField:
    """Member of a concentrating family ``h * phi(mu X)`` with ``mu = h^{(p-1)/(2s)}``.

    ``phi`` is a unit Gaussian at the origin plus a narrower spike of
    height ``spike`` at ``spike_offset`` along ``x1``. All members share one
    physical grid on ``[-box, box]^{n+1}``, so finer members are resolved by
    fewer nodes.
    """
    mu = height ** ((prob.p - 1.0) / (2.0 * prob.s))
    axes = tuple(Axis(-box, box, steps) for _ in range(n))
    t_axis = Axis(-box, box, time_steps)
    off = np.zeros(n + 1)
    off[0] = spike_offset

    def phi(Y):
        main = np.exp(-np.sum(Y * Y, axis=-1))
        d = Y - off
        return main + spike * np.exp(-np.sum(d * d, axis=-1) / spike_width**2)

    def ev(x, t):
        Y = np.concatenate([np.asarray(x), np.asarray(t)[..., None]], axis=-1) * mu
        return height * phi(Y)

    return GridField.sample(ev, axes, t_axis, name=f"blowup_h{height:g}")
