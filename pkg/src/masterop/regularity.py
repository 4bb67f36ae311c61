"""Empirical parabolic Holder, log-Lipschitz and Schauder seminorms on grids.

Parabolic distance is ``d = |x - y| + |t - tau|^{1/2}``. For an exponent
``theta`` the space :math:`C^{2\\theta,\\theta}` is read as

* ``theta <= 1/2``: ``|u(P) - u(P')| <= C d^{2 theta}``;
* ``1/2 < theta <= 1``: ``u`` is ``theta``-Holder in ``t``, and ``grad_x u`` is
  ``(2 theta - 1)``-Holder in ``x`` and ``(theta - 1/2)``-Holder in ``t``;
* ``theta > 1``: ``d_t u`` and ``D^2_x u`` lie in the space with ``theta - 1``.

Pairs are index offsets on the grid, grouped in dyadic bins of ``d^2`` and
chosen once per grid (seeded), so a region only masks pairs: seminorms over a
sub-region never exceed those over a containing region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridField

__all__ = [
    "UnderResolvedError",
    "CaseDispatchError",
    "HolderSpec",
    "Witness",
    "HolderReport",
    "fd_derivative",
    "estimate_parabolic_holder",
    "estimate_log_lipschitz",
    "estimate_one_plus_log",
    "check_estimate_theorem",
    "check_homogeneous",
    "recheck_witness",
]

MODES = ("holder", "log-lipschitz", "one-plus-log", "schauder")
MIN_BINS = 8


class UnderResolvedError(ValueError):
    """Too few dyadic distance bins carry pairs inside the region."""


class CaseDispatchError(ValueError):
    """No estimate is available for the requested exponent combination."""


@dataclass(frozen=True)
class HolderSpec:
    """Seminorm request.

    ``alpha`` is the parabolic exponent ``theta`` for ``holder``, the time
    exponent for ``log-lipschitz``, and the source exponent for ``schauder``
    (which then needs ``s`` and targets ``theta = s + alpha/2``).
    """

    alpha: float
    mode: str = "holder"
    pair_budget: int = 4_000_000
    min_sep: float = 0.0
    seed: int = 0
    s: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "schauder":
            if self.s is None:
                raise ValueError("schauder mode needs s")
            if not 0 < self.alpha < 1:
                raise ValueError("schauder source exponent must lie in (0, 1)")
        elif self.mode != "one-plus-log" and not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.pair_budget < 1000:
            raise ValueError("pair_budget must be at least 1000")
        if self.min_sep < 0:
            raise ValueError("min_sep must be non-negative")


@dataclass(frozen=True)
class Witness:
    component: str
    i1: tuple
    i2: tuple
    p1: tuple
    p2: tuple
    increment: float
    distance: float
    ratio: float

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "p1": list(self.p1),
            "p2": list(self.p2),
            "increment": self.increment,
            "distance": self.distance,
        }


@dataclass
class HolderReport:
    mode: str
    exponent: float
    sup_norm: float
    seminorm: float
    norm: float
    effective_exponent: float
    components: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)
    bins: int = 0
    theorem_ratio: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "norms": {"sup": self.sup_norm, "seminorm": self.seminorm, "norm": self.norm, **self.components},
            "exponents": {"target": self.exponent, "effective": self.effective_exponent},
            "ratios": {"theorem_ratio": self.theorem_ratio},
            "witnesses": [w.to_dict() for w in self.witnesses],
            "mode": self.mode,
            "notes": list(self.notes),
        }


# -- finite differences ----------------------------------------------------------------


def fd_derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order centred first derivative, second-order one-sided near edges."""
    out = np.gradient(values, h, axis=axis, edge_order=2)
    n = values.shape[axis]
    if n >= 5:
        sl = lambda a, b: tuple(slice(a, b) if k == axis % values.ndim else slice(None) for k in range(values.ndim))
        core = (-values[sl(4, n)] + 8 * values[sl(3, n - 1)] - 8 * values[sl(1, n - 3)] + values[sl(0, n - 4)]) / (12 * h)
        out[sl(2, n - 2)] = core
    return out


def _spatial_gradient(g: GridField, vals: np.ndarray | None = None) -> np.ndarray:
    v = g.values if vals is None else vals
    return np.stack([fd_derivative(v, a.spacing, i) for i, a in enumerate(g.axes)], axis=-1)


def _hessian_and_dt(g: GridField) -> np.ndarray:
    grad = _spatial_gradient(g)
    comps = []
    for i in range(g.n):
        for j in range(i, g.n):
            comps.append(fd_derivative(grad[..., i], g.axes[j].spacing, j))
    comps.append(fd_derivative(g.values, g.time_axis.spacing, g.n))
    return np.stack(comps, axis=-1)


# -- pair machinery ----------------------------------------------------------------------


@dataclass
class _OffsetPlan:
    offsets: np.ndarray  # (K, n+1) integer
    dist: np.ndarray  # (K,)
    bins: np.ndarray  # (K,)


def _candidates(g: GridField, family: str) -> np.ndarray:
    steps = [a.steps for a in g.axes] + [g.time_axis.steps]
    n = g.n
    if family == "time":
        k = np.arange(1, steps[-1])
        out = np.zeros((k.size, n + 1), dtype=int)
        out[:, -1] = k
        return out
    ranges = [np.arange(-(m - 1), m) for m in steps[:n]]
    if family == "space":
        ranges.append(np.array([0]))
    else:
        ranges.append(np.arange(-(steps[-1] - 1), steps[-1]))
    mesh = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, n + 1)
    # one representative per unordered pair: first nonzero entry positive
    nz = mesh != 0
    first = np.argmax(nz, axis=1)
    lead = mesh[np.arange(mesh.shape[0]), first]
    return mesh[nz.any(axis=1) & (lead > 0)]


def _distance(g: GridField, k: np.ndarray) -> np.ndarray:
    h = np.array([a.spacing for a in g.axes])
    dx = np.sqrt(np.sum((k[:, :-1] * h) ** 2, axis=1))
    return dx + np.sqrt(np.abs(k[:, -1]) * g.time_axis.spacing)


def _plan(g: GridField, family: str, spec: HolderSpec, salt: int) -> _OffsetPlan:
    cand = _candidates(g, family)
    d = _distance(g, cand)
    keep = d >= spec.min_sep
    cand, d = cand[keep], d[keep]
    h = [a.spacing for a in g.axes]
    d_min = min(min(h), math.sqrt(g.time_axis.spacing))
    # one bin per doubling of d^2 (parabolic scale), i.e. half-octaves in d
    b = np.floor(2.0 * np.log2(d / d_min) + 1e-9).astype(int)
    n_bins = int(b.max()) + 1 if b.size else 0
    nodes = int(np.prod([a.steps for a in g.axes])) * g.time_axis.steps
    per_bin = max(16, math.ceil(spec.pair_budget / max(1, n_bins * nodes)))
    rng = np.random.default_rng([spec.seed, salt])
    axis_like = np.count_nonzero(cand, axis=1) == 1
    chosen = []
    for j in range(n_bins):
        idx = np.flatnonzero(b == j)
        if idx.size == 0:
            continue
        ax = idx[axis_like[idx]]
        rest = idx[~axis_like[idx]]
        take = max(0, per_bin - ax.size)
        if rest.size > take:
            rest = np.sort(rng.choice(rest, size=take, replace=False))
        chosen.append(np.concatenate([ax, rest]))
    sel = np.concatenate(chosen) if chosen else np.empty(0, dtype=int)
    return _OffsetPlan(cand[sel], d[sel], b[sel])


def _slices(shape, k):
    base, shift = [], []
    for m, kk in zip(shape, k):
        if kk >= 0:
            base.append(slice(0, m - kk))
            shift.append(slice(kk, m))
        else:
            base.append(slice(-kk, m))
            shift.append(slice(0, m + kk))
    return tuple(base), tuple(shift)


@dataclass
class _Scan:
    value: float
    witness: Witness | None
    bin_max: dict  # bin -> (max increment, distance)
    bins_hit: int


def _scan(g: GridField, F: np.ndarray, mask: np.ndarray, plan: _OffsetPlan, denom, name: str, dist_of=None) -> _Scan:
    """Max of ``|F(P') - F(P)| / denom(k)`` over planned offsets with both ends in ``mask``.

    ``F`` has shape ``grid.shape + (C,)``; increments use the Euclidean norm
    over components.
    """
    shape = g.shape
    best, wit = 0.0, None
    bin_max: dict = {}
    axes_nodes = [a.nodes for a in g.axes] + [g.time_axis.nodes]
    for k, d, b in zip(plan.offsets, plan.dist, plan.bins):
        bs, ss = _slices(shape, k)
        valid = mask[bs] & mask[ss]
        if not valid.any():
            continue
        diff = F[ss] - F[bs]
        inc = np.sqrt(np.sum(diff * diff, axis=-1)) if F.shape[-1] > 1 else np.abs(diff[..., 0])
        inc = np.where(valid, inc, -1.0)
        flat = int(np.argmax(inc))
        m = float(inc.flat[flat])
        if m < 0:
            continue
        dd = float(d) if dist_of is None else float(dist_of(k))
        prev = bin_max.get(int(b))
        if prev is None or m > prev[0]:
            bin_max[int(b)] = (m, dd)
        den = float(denom(k, dd))
        r = m / den if den > 0 else (math.inf if m > 0 else 0.0)
        if wit is None or r > best:
            loc = np.unravel_index(flat, inc.shape)
            i1 = tuple(int(l + (s.start or 0)) for l, s in zip(loc, bs))
            i2 = tuple(int(l + (s.start or 0)) for l, s in zip(loc, ss))
            p1 = tuple(float(axes_nodes[a][i]) for a, i in enumerate(i1))
            p2 = tuple(float(axes_nodes[a][i]) for a, i in enumerate(i2))
            best = r
            wit = Witness(name, i1, i2, p1, p2, m, dd, r)
    return _Scan(best, wit, bin_max, len(bin_max))


def _fit_exponent(bin_max: dict) -> float:
    pts = [(d, m) for m, d in bin_max.values() if m > 0 and d > 0]
    if len(pts) < 2:
        return float("nan")
    d, m = np.log(np.array(pts)).T
    order = np.argsort(d)
    d, m = d[order], m[order]
    # use the finer half of the bins, where the local modulus dominates
    keep = max(3, math.ceil(0.6 * d.size))
    d, m = d[:keep], m[:keep]
    return float(np.polyfit(d, m, 1)[0])


def _mask(g: GridField, region) -> np.ndarray:
    return g.inside_mask(region)


def _need_bins(scan: _Scan, what: str) -> None:
    if scan.bins_hit < MIN_BINS:
        raise UnderResolvedError(
            f"{what}: only {scan.bins_hit} dyadic distance bins carry pairs inside the region (need {MIN_BINS}); refine the grid"
        )


# -- seminorms --------------------------------------------------------------------------


def _holder_parts(g: GridField, F: np.ndarray, mask, theta: float, spec: HolderSpec, tag: str, depth: int = 0):
    """Components of the ``C^{2 theta, theta}`` seminorm of ``F`` (shape grid + (C,))."""
    comps: dict = {}
    wits: list = []
    sups: dict = {}
    if theta <= 0.5:
        plan = _plan(g, "mixed", spec, 1)
        sc = _scan(g, F, mask, plan, lambda k, d: d ** (2 * theta), f"{tag}holder")
        _need_bins(sc, f"{tag}holder")
        comps[f"{tag}holder({2 * theta:.4g},{theta:.4g})"] = sc.value
        wits.append(sc.witness)
        return comps, wits, sups, sc
    if theta <= 1.0:
        tplan = _plan(g, "time", spec, 2)
        splan = _plan(g, "space", spec, 3)
        ht = g.time_axis.spacing
        sc_t = _scan(g, F, mask, tplan, lambda k, d: (abs(k[-1]) * ht) ** theta, f"{tag}t-holder")
        grad = np.concatenate([_spatial_gradient(g, F[..., c]) for c in range(F.shape[-1])], axis=-1)
        sups[f"{tag}grad"] = float(np.max(np.linalg.norm(grad, axis=-1)[mask])) if mask.any() else 0.0
        gx = 2 * theta - 1
        gt = theta - 0.5
        sc_gx = _scan(g, grad, mask, splan, lambda k, d: d**gx, f"{tag}grad-x")
        sc_gt = _scan(g, grad, mask, tplan, lambda k, d: (abs(k[-1]) * ht) ** gt, f"{tag}grad-t")
        # bins are counted jointly over both directions
        joint = _Scan(0.0, None, {**{("t", b): v for b, v in sc_t.bin_max.items()}, **{("x", b): v for b, v in sc_gx.bin_max.items()}}, 0)
        joint.bins_hit = max(len(sc_t.bin_max), len(sc_gx.bin_max))
        _need_bins(joint, f"{tag}gradient holder")
        comps[f"{tag}t-holder({theta:.4g})"] = sc_t.value
        comps[f"{tag}grad-x-holder({gx:.4g})"] = sc_gx.value
        comps[f"{tag}grad-t-holder({gt:.4g})"] = sc_gt.value
        wits += [sc_t.witness, sc_gx.witness, sc_gt.witness]
        # effective exponent from value increments in parabolic distance
        mplan = _plan(g, "mixed", spec, 1)
        sc_u = _scan(g, F, mask, mplan, lambda k, d: 1.0, f"{tag}increment")
        return comps, wits, sups, sc_u
    if depth > 2 or F.shape[-1] != 1:
        raise CaseDispatchError("exponents above 2 are outside the supported table")
    D = _hessian_and_dt(g.with_values(F[..., 0]))
    sups[f"{tag}d2-and-dt"] = float(np.max(np.linalg.norm(D, axis=-1)[mask])) if mask.any() else 0.0
    grad = _spatial_gradient(g, F[..., 0])
    sups[f"{tag}grad"] = float(np.max(np.linalg.norm(grad, axis=-1)[mask])) if mask.any() else 0.0
    c2, w2, s2, sc = _holder_parts(g, D, mask, theta - 1.0, spec, tag + "D:", depth + 1)
    comps.update(c2)
    sups.update(s2)
    return comps, wits + w2, sups, sc


def _report(mode, theta, g, mask, comps, wits, sups, sc, notes=()) -> HolderReport:
    sup = float(np.max(np.abs(g.values[mask]))) if mask.any() else 0.0
    semi = max(comps.values()) if comps else 0.0
    wits = [w for w in wits if w is not None]
    best = max(wits, key=lambda w: w.ratio) if wits else None
    ordered = ([best] + [w for w in wits if w is not best]) if best else []
    allc = {**comps, **{f"sup:{k}": v for k, v in sups.items()}}
    return HolderReport(
        mode=mode,
        exponent=theta,
        sup_norm=sup,
        seminorm=semi,
        norm=sup + sum(sups.values()) + semi,
        effective_exponent=_fit_exponent(sc.bin_max),
        components=allc,
        witnesses=ordered,
        bins=sc.bins_hit,
        notes=list(notes),
    )


def estimate_parabolic_holder(u: GridField, Q=None, spec: HolderSpec | None = None) -> HolderReport:
    """Parabolic ``C^{2 theta, theta}`` seminorm of ``u`` over region ``Q``.

    ``holder`` mode uses ``theta = alpha``; ``schauder`` uses ``theta = s + alpha/2``.
    The effective exponent is the least-squares slope of the log of the
    largest increment per dyadic bin against log distance.
    """
    spec = spec or HolderSpec(0.5)
    if spec.mode == "schauder":
        theta = spec.s + spec.alpha / 2
    elif spec.mode == "holder":
        theta = spec.alpha
    else:
        raise ValueError(f"use the dedicated estimator for mode {spec.mode!r}")
    if theta >= 1.5:
        raise CaseDispatchError(f"2*theta = {2 * theta:g} is outside the supported table (needs < 3)")
    mask = _mask(u, Q)
    comps, wits, sups, sc = _holder_parts(u, u.values[..., None], mask, theta, spec, "")
    return _report(spec.mode, theta, u, mask, comps, wits, sups, sc)


def _loglip_modulus(d):
    return d * abs(math.log(min(d, 0.5)))


def estimate_log_lipschitz(u: GridField, Q=None, spec: HolderSpec | None = None) -> HolderReport:
    """``C^{log L, alpha}`` seminorm: log-Lipschitz in ``x`` per time slice, ``alpha``-Holder in ``t``.

    The spatial modulus is ``|x - y| |log min(|x - y|, 1/2)|``.
    """
    spec = spec or HolderSpec(0.5, mode="log-lipschitz")
    mask = _mask(u, Q)
    F = u.values[..., None]
    splan = _plan(u, "space", spec, 3)
    tplan = _plan(u, "time", spec, 2)
    ht = u.time_axis.spacing
    sc_x = _scan(u, F, mask, splan, lambda k, d: _loglip_modulus(d), "x-loglip")
    _need_bins(sc_x, "log-Lipschitz in x")
    sc_t = _scan(u, F, mask, tplan, lambda k, d: (abs(k[-1]) * ht) ** spec.alpha, "t-holder")
    comps = {"x-loglip": sc_x.value, f"t-holder({spec.alpha:.4g})": sc_t.value}
    return _report("log-lipschitz", spec.alpha, u, mask, comps, [sc_x.witness, sc_t.witness], {}, sc_x)


def estimate_one_plus_log(u: GridField, Q=None, spec: HolderSpec | None = None) -> HolderReport:
    """``C^{1 + log L, log L}``: ``grad_x u`` log-Lipschitz in ``x``; ``u`` log-Lipschitz in ``t``.

    In time the log modulus is applied to the parabolic distance ``|t - tau|^{1/2}``.
    """
    spec = spec or HolderSpec(1.0, mode="one-plus-log")
    mask = _mask(u, Q)
    F = u.values[..., None]
    grad = _spatial_gradient(u)
    splan = _plan(u, "space", spec, 3)
    tplan = _plan(u, "time", spec, 2)
    sc_x = _scan(u, grad, mask, splan, lambda k, d: _loglip_modulus(d), "grad-x-loglip")
    _need_bins(sc_x, "log-Lipschitz gradient")
    sc_t = _scan(u, F, mask, tplan, lambda k, d: _loglip_modulus(d), "t-loglip")
    sups = {"grad": float(np.max(np.linalg.norm(grad, axis=-1)[mask])) if mask.any() else 0.0}
    comps = {"grad-x-loglip": sc_x.value, "t-loglip": sc_t.value}
    return _report("one-plus-log", 1.0, u, mask, comps, [sc_x.witness, sc_t.witness], sups, sc_x)


def recheck_witness(u: GridField, w: Witness, spec: HolderSpec, theta: float | None = None) -> float:
    """Recompute a value-based witness ratio from the grid (bit-identical)."""
    k = np.array(w.i2) - np.array(w.i1)
    inc = abs(float(u.values[w.i2]) - float(u.values[w.i1]))
    d = float(_distance(u, k[None, :])[0])
    ht = u.time_axis.spacing
    if w.component.endswith("x-loglip"):
        den = _loglip_modulus(d)
    elif w.component == "t-loglip":
        den = _loglip_modulus(d)
    elif w.component.endswith("t-holder"):
        den = (abs(k[-1]) * ht) ** (theta if theta is not None else spec.alpha)
    elif w.component.endswith("holder"):
        th = theta if theta is not None else spec.alpha
        den = d ** (2 * th)
    else:
        raise ValueError(f"witness component {w.component!r} is derivative-based")
    return inc / den


# -- theorem checks -------------------------------------------------------------------------


def _close(a: float, b: float) -> bool:
    return abs(a - b) < 1e-9


def check_estimate_theorem(
    u: GridField,
    f: GridField,
    s: float,
    alpha: float | None = None,
    which: str = "holder",
    geometry: tuple | None = None,
    pair_budget: int = 4_000_000,
    seed: int = 0,
) -> HolderReport:
    """Left norm of ``u`` on the inner region over the right-hand side on the outer one.

    ``geometry = (Q_tilde, Q)``. ``holder``: left is ``C^{2s,s}`` (``C^{log L, s}``
    at ``s = 1/2``), right is ``||f||_inf + ||u||_inf`` on ``Q``. ``schauder``:
    left is ``C^{2s+alpha, s+alpha/2}`` with the log-Lipschitz variants at
    ``2s + alpha`` equal to 1 or 2, right uses the ``C^{alpha, alpha/2}`` norm
    of ``f``. Report only.
    """
    Qt, Q = geometry if geometry is not None else (None, None)
    notes = []
    if which == "holder":
        if _close(s, 0.5):
            rep = estimate_log_lipschitz(u, Qt, HolderSpec(s, "log-lipschitz", pair_budget, seed=seed))
        else:
            rep = estimate_parabolic_holder(u, Qt, HolderSpec(s, "holder", pair_budget, seed=seed))
        rhs_f = f.sup_norm(Q)
    elif which == "schauder":
        if alpha is None:
            raise ValueError("schauder check needs alpha")
        e = 2 * s + alpha
        if e >= 3 - 1e-12:
            raise CaseDispatchError(f"2s + alpha = {e:g} >= 3 is outside the estimate table")
        if _close(e, 1.0):
            rep = estimate_log_lipschitz(u, Qt, HolderSpec(s + alpha / 2, "log-lipschitz", pair_budget, seed=seed))
        elif _close(e, 2.0):
            rep = estimate_one_plus_log(u, Qt, HolderSpec(1.0, "one-plus-log", pair_budget, seed=seed))
        else:
            rep = estimate_parabolic_holder(u, Qt, HolderSpec(alpha, "schauder", pair_budget, seed=seed, s=s))
        fr = estimate_parabolic_holder(f, Q, HolderSpec(alpha / 2, "holder", pair_budget, seed=seed))
        rhs_f = fr.norm
        notes.append(f"source C^(alpha, alpha/2) norm {rhs_f:.6g}")
    else:
        raise ValueError("which must be 'holder' or 'schauder'")
    rhs = rhs_f + u.sup_norm(Q)
    rep.theorem_ratio = rep.norm / rhs if rhs > 0 else math.inf
    rep.notes += notes + [f"left norm {rep.norm:.6g}, right side {rhs:.6g}"]
    return rep


def check_homogeneous(
    v: GridField, geometry: tuple, alpha: float = 0.5, pair_budget: int = 4_000_000, seed: int = 0
) -> HolderReport:
    """``C^{2, alpha}``-level norm of ``v`` on the inner region over ``||v||_inf`` on the outer one.

    The left side sums sup norms of ``v``, ``grad v``, ``D^2 v`` and ``d_t v``
    and the parabolic ``C^{alpha, alpha/2}`` seminorm of ``(D^2 v, d_t v)``.
    """
    Qt, Q = geometry
    mask = _mask(v, Qt)
    D = _hessian_and_dt(v)
    grad = _spatial_gradient(v)
    spec = HolderSpec(alpha / 2, "holder", pair_budget, seed=seed)
    plan = _plan(v, "mixed", spec, 1)
    sc = _scan(v, D, mask, plan, lambda k, d: d**alpha, "D:holder")
    _need_bins(sc, "second-derivative holder")
    sups = {
        "grad": float(np.max(np.linalg.norm(grad, axis=-1)[mask])),
        "d2-and-dt": float(np.max(np.linalg.norm(D, axis=-1)[mask])),
    }
    rep = _report("c2-alpha", 1.0 + alpha / 2, v, mask, {f"D:holder({alpha:.4g})": sc.value}, [sc.witness], sups, sc)
    den = v.sup_norm(Q)
    rep.theorem_ratio = rep.norm / den if den > 0 else math.inf
    return rep
