"""Fractional heat kernel, its derivatives, and the directional-perturbation bounds.

The kernel of :math:`(\\partial_t - \\Delta)^s` is

.. math::

    G(x, t) = C_{n,s}\\, t^{-(n/2 + 1 - s)} e^{-|x|^2 / (4t)}, \\qquad t > 0,

and vanishes for :math:`t \\le 0`. All evaluators accept batched input:
``dx`` has shape ``(..., n)`` and ``dt`` broadcasts against ``dx[..., 0]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainError",
    "FracParams",
    "SpaceTimePoint",
    "DirectionalFrame",
    "KeyInequalityCheck",
    "gamma_abs_neg_s",
    "eval_kernel",
    "eval_kernel_grad_x",
    "eval_kernel_hess_x",
    "eval_kernel_dt",
    "log_kernel",
    "spatial_mass",
    "make_frame",
    "orthant_index",
    "cosine_gap",
    "power_constant",
    "derivative_constants",
    "check_key_inequality",
]


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


def gamma_abs_neg_s(s: float) -> float:
    """Return :math:`|\\Gamma(-s)|` for ``0 < s < 1``.

    Uses :math:`\\Gamma(-s) = \\Gamma(1-s)/(-s)`, which keeps the argument of
    the gamma function in ``(0, 1)`` where it is positive and well conditioned.
    """
    s = float(s)
    if not 0.0 < s < 1.0:
        raise DomainError(f"s must lie in the open interval (0, 1), got {s!r}")
    return math.gamma(1.0 - s) / s


@dataclass(frozen=True)
class FracParams:
    """Dimension ``n``, order ``s`` and the kernel normalization ``c_ns``."""

    n: int
    s: float
    c_ns: float = field(init=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "s", float(self.s))
        c = 1.0 / ((4.0 * math.pi) ** (self.n / 2.0) * gamma_abs_neg_s(self.s))
        object.__setattr__(self, "c_ns", c)

    @property
    def time_power(self) -> float:
        """Exponent ``n/2 + 1 - s`` of the time factor of G."""
        return self.n / 2.0 + 1.0 - self.s

    @property
    def lag_constant(self) -> float:
        """``c_ns (4 pi)^{n/2}``, equal to ``1/|Gamma(-s)|``."""
        return self.c_ns * (4.0 * math.pi) ** (self.n / 2.0)


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple[float, ...]
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.x)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    def check(self, p: FracParams) -> "SpaceTimePoint":
        if self.n != p.n:
            raise DomainError(f"point has {self.n} spatial components, expected {p.n}")
        return self


def _prep(p: FracParams, dx, dt):
    dx = np.asarray(dx, dtype=float)
    if dx.ndim == 0:
        dx = dx[None]
    if dx.shape[-1] != p.n:
        raise DomainError(f"dx has trailing dimension {dx.shape[-1]}, expected {p.n}")
    dt = np.asarray(dt, dtype=float)
    r2 = np.einsum("...i,...i->...", dx, dx)
    return dx, dt, r2


def log_kernel(p: FracParams, dx, dt) -> np.ndarray:
    """``log G(dx, dt)``; ``-inf`` where ``dt <= 0``."""
    dx, dt, r2 = _prep(p, dx, dt)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = math.log(p.c_ns) - p.time_power * np.log(dt) - r2 / (4.0 * dt)
    return np.where(dt > 0, out, -np.inf)


def eval_kernel(p: FracParams, dx, dt):
    """Evaluate G; exactly zero for ``dt <= 0`` and on underflow."""
    dx, dt, r2 = _prep(p, dx, dt)
    pos = dt > 0
    safe = np.where(pos, dt, 1.0)
    with np.errstate(under="ignore"):
        val = p.c_ns * safe ** (-p.time_power) * np.exp(-r2 / (4.0 * safe))
    out = np.where(pos, val, 0.0)
    return float(out) if out.ndim == 0 else out


def eval_kernel_grad_x(p: FracParams, dx, dt):
    """Gradient of G with respect to its spatial argument (requires ``dt > 0``).

    This is :math:`-G \\cdot dx / (2\\,dt)`. Displays of the form
    :math:`\\partial_{x_i} G = G\\, x_i/(2t)` omit the minus sign; only
    magnitudes enter the bounds, so the sign convention here is the exact one.
    """
    dx, dt, _ = _prep(p, dx, dt)
    g = np.asarray(eval_kernel(p, dx, dt))
    return -(g / (2.0 * dt))[..., None] * dx


def eval_kernel_hess_x(p: FracParams, dx, dt):
    """Spatial Hessian of G, shape ``(..., n, n)``."""
    dx, dt, _ = _prep(p, dx, dt)
    g = np.asarray(eval_kernel(p, dx, dt))[..., None, None]
    dt_ = dt[..., None, None]
    eye = np.eye(p.n)
    outer = dx[..., :, None] * dx[..., None, :]
    return g * (-eye / (2.0 * dt_) + outer / (4.0 * dt_**2))


def eval_kernel_dt(p: FracParams, dx, dt):
    """Time derivative of G (requires ``dt > 0``)."""
    dx, dt, r2 = _prep(p, dx, dt)
    g = np.asarray(eval_kernel(p, dx, dt))
    out = g * (r2 / (4.0 * dt**2) - p.time_power / dt)
    return float(out) if out.ndim == 0 else out


def spatial_mass(p: FracParams, tau: float) -> float:
    """Closed form of :math:`\\int_{\\mathbb{R}^n} G(y, \\tau)\\,dy`."""
    return p.lag_constant * tau ** (p.s - 1.0)


# -- directional perturbations ------------------------------------------------


@dataclass(frozen=True)
class DirectionalFrame:
    """Orthant-diagonal perturbations ``eta_j`` of length ``delta`` around ``center``.

    ``etas[j]`` points along the diagonal of orthant ``j``; orthants are
    enumerated lexicographically over sign patterns with ``+`` first, so for
    ``n = 2`` the order is ``(+,+), (+,-), (-,+), (-,-)``.
    """

    center: np.ndarray
    delta: float
    etas: np.ndarray

    @property
    def n(self) -> int:
        return self.center.shape[0]

    @property
    def signs(self) -> np.ndarray:
        return np.sign(self.etas)


def make_frame(p: FracParams, center=None) -> DirectionalFrame:
    n = p.n
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float).reshape(n)
    delta = 1.0 / math.sqrt(n)
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=n)))
    etas = signs * (delta / math.sqrt(n))
    return DirectionalFrame(center=c, delta=delta, etas=etas)


def orthant_index(d) -> np.ndarray:
    """Index into ``DirectionalFrame.etas`` of the orthant containing ``d``.

    Zero components count as positive.
    """
    d = np.asarray(d, dtype=float)
    n = d.shape[-1]
    bits = (d < 0).astype(np.int64)
    weights = 2 ** np.arange(n - 1, -1, -1)
    return bits @ weights


def _offsets(frame: DirectionalFrame, y) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(y, dtype=float) - frame.center
    dist = np.sqrt(np.einsum("...i,...i->...", d, d))
    if np.any(dist < 1.0):
        raise DomainError("requires |y - center| >= 1")
    return d, dist


def cosine_gap(frame: DirectionalFrame, y):
    """``|y-x|^2 - |y-x^j|^2 - delta^2 |y-x|`` for the orthant ``j`` of ``y - x``.

    Non-negative whenever ``|y - x| >= 1``.
    """
    d, dist = _offsets(frame, y)
    eta = frame.etas[orthant_index(d)]
    e = d - eta
    out = dist**2 - np.einsum("...i,...i->...", e, e) - frame.delta**2 * dist
    return float(out) if np.ndim(out) == 0 else out


def power_constant(n: int, power: float) -> float:
    """``sup_{X >= 0} X^power exp(-X / (4n))``, i.e. ``(4 n power / e)^power``."""
    return (4.0 * n * power / math.e) ** power


def derivative_constants(p: FracParams) -> dict[str, float]:
    """Explicit constants for the gradient, Hessian and time-derivative bounds.

    With ``X = |y|/tau`` and ``|y| >= 1`` (so ``1/tau <= X``):
    ``|dG/dy_i| <= G X/2``, ``|d2G/dy_i dy_j| <= G (X/2 + X^2/4)`` and
    ``|dG/dtau| <= G (X^2/4 + (n/2+1-s) X)``; each polynomial in ``X`` is
    absorbed by ``exp(-X/(4n))`` at the cost of :func:`power_constant`.
    """
    c1 = power_constant(p.n, 1.0)
    c2 = power_constant(p.n, 2.0)
    return {
        "grad": c1 / 2.0,
        "hess": c1 / 2.0 + c2 / 4.0,
        "dt": c2 / 4.0 + p.time_power * c1,
    }


@dataclass
class KeyInequalityCheck:
    """Log-ratios ``log(lhs / rhs)`` of the kernel inequalities; pass means all <= slack."""

    general: np.ndarray
    lemma: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    dt: np.ndarray
    slack: float = 1e-12

    @property
    def worst(self) -> np.ndarray:
        return np.maximum.reduce([self.general, self.lemma, self.grad, self.hess, self.dt])

    @property
    def passed(self) -> np.ndarray:
        return self.worst <= math.log1p(self.slack)

    @property
    def margin(self) -> np.ndarray:
        """Ratio ``lhs / rhs`` of the tightest inequality (``<= 1`` passes)."""
        return np.exp(self.worst)

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~np.atleast_1d(self.passed)))


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def check_key_inequality(
    p: FracParams,
    frame: DirectionalFrame,
    y,
    tau,
    power=1.0,
    *,
    lemma_rate: float | None = None,
    slack: float = 1e-12,
) -> KeyInequalityCheck:
    """Check the directional-perturbation kernel inequalities at ``(y, tau)``.

    Checked, all in log space so that nothing underflows:

    * ``(|d|/tau)^power exp(-|d|^2/(4 tau)) <= C(n, power) exp(-|d - eta_j|^2/(4 tau))``
      with ``d = y - center`` and ``C`` from :func:`power_constant`;
    * ``G(d, tau) <= exp(-lemma_rate |d| / tau) * sum_j G(d + eta_j, tau)``;
    * ``|D G|``, ``|D^2 G|`` and ``|dG/dtau|`` bounded by
      :func:`derivative_constants` times the same sum.

    ``lemma_rate`` defaults to ``1/(4n)``, the rate that the cosine gap
    ``|d|^2 - |d - eta_j|^2 >= |d|/n`` delivers. Passing ``1/n`` tests the
    stronger rate; see the test suite for an explicit point where it fails.
    """
    d, dist = _offsets(frame, y)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("tau must be positive")
    power = np.asarray(power, dtype=float)
    n = p.n
    rate = 1.0 / (4.0 * n) if lemma_rate is None else float(lemma_rate)

    j = orthant_index(d)
    e = d - frame.etas[j]
    e2 = np.einsum("...i,...i->...", e, e)
    X = dist / tau
    logC = power * np.log(4.0 * n * power / math.e)
    general = power * np.log(X) - dist**2 / (4.0 * tau) - logC + e2 / (4.0 * tau)

    # sum over all 2^n perturbations, as log-sum-exp of log G
    shifted = d[..., None, :] + frame.etas
    logG_shift = log_kernel(p, shifted, tau[..., None] if tau.ndim else tau)
    log_sum = _logsumexp(logG_shift, axis=-1)
    logG = log_kernel(p, d, tau)
    lemma = logG - (-rate * dist / tau + log_sum)

    consts = derivative_constants(p)
    grad_fac = np.max(np.abs(d), axis=-1) / (2.0 * tau)
    hess_fac = 1.0 / (2.0 * tau) + dist**2 / (4.0 * tau**2)
    dt_fac = np.abs(dist**2 / (4.0 * tau**2) - p.time_power / tau)
    with np.errstate(divide="ignore"):
        grad = logG + np.log(grad_fac) - math.log(consts["grad"]) - log_sum
        hess = logG + np.log(hess_fac) - math.log(consts["hess"]) - log_sum
        dtc = logG + np.log(dt_fac) - math.log(consts["dt"]) - log_sum
    return KeyInequalityCheck(general, lemma, grad, hess, dtc, slack)
