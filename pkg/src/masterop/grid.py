"""Sampled space-time fields on tensor grids.

Values are stored as an array of shape ``(*spatial_steps, time_steps)``. The
on-disk order is row-major with ``x1`` fastest and ``t`` slowest, which is
Fortran order for that array.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import ndtr

from .fields import FieldHandle, Growth
from .geometry import Cylinder
from .quadrature import QuadratureSpec, lag_rule

__all__ = ["Axis", "GridField", "GridFormatError", "GridDomain"]

ORDER_TAG = "row-major-x1-fastest"


class GridFormatError(ValueError):
    """Malformed manifest or value file."""


@dataclass(frozen=True)
class Axis:
    min: float
    max: float
    steps: int

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 2:
            raise ValueError("an axis needs at least 2 steps")
        if not self.min < self.max:
            raise ValueError("axis min must be below max")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.steps)

    @property
    def spacing(self) -> float:
        return (self.max - self.min) / (self.steps - 1)

    def refined(self, factor: int = 2) -> "Axis":
        return Axis(self.min, self.max, factor * (self.steps - 1) + 1)

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "steps": self.steps}

    @classmethod
    def from_dict(cls, d: dict) -> "Axis":
        if set(d) != {"min", "max", "steps"}:
            raise GridFormatError(f"axis entry must have keys min, max, steps; got {sorted(d)}")
        return cls(float(d["min"]), float(d["max"]), int(d["steps"]))


@dataclass(frozen=True)
class GridDomain:
    """Box covered by a grid; measures how much Gaussian-mean mass leaves it."""

    lo: np.ndarray
    hi: np.ndarray
    t_min: float

    def outside_mass(self, x, t: float, s: float, spec: QuadratureSpec) -> float:
        """Fraction of the ``r^{-1-s}``-weighted Gaussian mass outside the box."""
        rule = lag_rule(spec.r_cut, spec.r_max, -1.0 - s, spec.panels_per_decade, spec.rel_tol)
        r = rule.nodes
        sd = np.sqrt(2.0 * r)[:, None]
        x = np.asarray(x, dtype=float)
        inside = np.prod(ndtr((self.hi - x) / sd) - ndtr((self.lo - x) / sd), axis=1)
        inside = np.where(t - r >= self.t_min, inside, 0.0)
        w = rule.weights
        return float(np.sum(w * (1.0 - inside)) / np.sum(w))


@dataclass
class GridField:
    name: str
    axes: tuple
    time_axis: Axis
    values: np.ndarray
    domain: Cylinder | None = field(default=None, compare=False)

    def __post_init__(self):
        self.axes = tuple(self.axes)
        self.values = np.asarray(self.values, dtype=float)
        shape = self.shape
        if self.values.size != math.prod(shape):
            raise GridFormatError(f"expected {math.prod(shape)} values, got {self.values.size}")
        self.values = self.values.reshape(shape)
        if not np.all(np.isfinite(self.values)):
            raise GridFormatError("grid values must be finite")

    # -- geometry ----------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.steps for a in self.axes) + (self.time_axis.steps,)

    def meshes(self) -> list[np.ndarray]:
        return np.meshgrid(*[a.nodes for a in self.axes], self.time_axis.nodes, indexing="ij")

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(X (N, n), T (N,))`` in file order."""
        m = self.meshes()
        X = np.stack([g.ravel(order="F") for g in m[:-1]], axis=-1)
        return X, m[-1].ravel(order="F")

    def inside_mask(self, region=None) -> np.ndarray:
        region = region or self.domain
        m = self.meshes()
        if region is None:
            return np.ones(self.shape, dtype=bool)
        return region.contains(np.stack(m[:-1], axis=-1), m[-1])

    def sup_norm(self, region=None) -> float:
        mask = self.inside_mask(region)
        return float(np.max(np.abs(self.values[mask]))) if mask.any() else 0.0

    def same_layout(self, other: "GridField") -> bool:
        return self.axes == other.axes and self.time_axis == other.time_axis

    def template(self, name: str | None = None) -> "GridField":
        return GridField(name or self.name, self.axes, self.time_axis, np.zeros(self.shape), self.domain)

    def refined(self, factor: int = 2) -> "GridField":
        """Empty template with every axis refined by ``factor``."""
        axes = tuple(a.refined(factor) for a in self.axes)
        t = self.time_axis.refined(factor)
        return GridField(self.name, axes, t, np.zeros(tuple(a.steps for a in axes) + (t.steps,)), self.domain)

    # -- construction --------------------------------------------------------------

    @classmethod
    def sample(
        cls,
        f: FieldHandle | Callable,
        axes: Sequence[Axis],
        time_axis: Axis,
        name: str = "field",
        domain: Cylinder | None = None,
        chunk: int = 4096,
    ) -> "GridField":
        g = cls(name, tuple(axes), time_axis, np.zeros(tuple(a.steps for a in axes) + (time_axis.steps,)), domain)
        return g.fill(f, chunk=chunk)

    def fill(self, f, chunk: int = 4096) -> "GridField":
        X, T = self.nodes()
        evaluate = getattr(f, "evaluator", f)
        out = np.empty(T.size)
        for a in range(0, T.size, chunk):
            out[a : a + chunk] = evaluate(X[a : a + chunk], T[a : a + chunk])
        vals = out.reshape(self.shape, order="F")
        return GridField(self.name, self.axes, self.time_axis, vals, self.domain)

    def with_values(self, values, name: str | None = None) -> "GridField":
        return GridField(name or self.name, self.axes, self.time_axis, values, self.domain)

    def __sub__(self, other: "GridField") -> "GridField":
        if not self.same_layout(other):
            raise ValueError("grid layouts differ")
        return self.with_values(self.values - other.values, f"{self.name}-{other.name}")

    def __add__(self, other: "GridField") -> "GridField":
        if not self.same_layout(other):
            raise ValueError("grid layouts differ")
        return self.with_values(self.values + other.values, f"{self.name}+{other.name}")

    # -- interpolation ---------------------------------------------------------------

    def as_field(self, growth: Growth | None = None) -> FieldHandle:
        """Multilinear interpolant, zero outside the grid box.

        The handle's ``domain`` reports how much Gaussian-mean mass falls
        outside the box, so callers can flag extension bias.
        """
        interp = RegularGridInterpolator(
            [a.nodes for a in self.axes] + [self.time_axis.nodes],
            self.values,
            method="linear",
            bounds_error=False,
            fill_value=0.0,
        )
        n = self.n

        def ev(x, t):
            x = np.asarray(x, dtype=float)
            shape = np.broadcast_shapes(x.shape[:-1], np.shape(t))
            xb = np.broadcast_to(x, shape + (n,))
            tb = np.broadcast_to(np.asarray(t, dtype=float), shape)
            pts = np.concatenate([xb, tb[..., None]], axis=-1).reshape(-1, n + 1)
            return interp(pts).reshape(shape)

        step = min([a.spacing for a in self.axes] + [self.time_axis.spacing])
        dom = GridDomain(
            np.array([a.min for a in self.axes]), np.array([a.max for a in self.axes]), self.time_axis.min
        )
        return FieldHandle(ev, n=n, growth=growth or Growth("bounded"), fd_step=step, name=self.name, domain=dom)

    # -- files -----------------------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "axes": [a.to_dict() for a in self.axes],
            "time_axis": self.time_axis.to_dict(),
            "order": ORDER_TAG,
        }

    def save(self, path) -> tuple[Path, Path]:
        """Write ``<path>.json`` and the sibling ``<path>.csv``."""
        path = Path(path)
        mpath = path.with_suffix(".json")
        cpath = path.with_suffix(".csv")
        mpath.write_text(json.dumps(self.manifest(), indent=2) + "\n")
        flat = self.values.ravel(order="F")
        cpath.write_text("".join(f"{v:.17g}\n" for v in flat))
        return mpath, cpath

    @classmethod
    def load(cls, path, domain: Cylinder | None = None) -> "GridField":
        path = Path(path)
        mpath = path.with_suffix(".json")
        try:
            meta = json.loads(mpath.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise GridFormatError(f"cannot read manifest {mpath}: {exc}") from exc
        expected = {"name", "n", "axes", "time_axis", "order"}
        if set(meta) != expected:
            raise GridFormatError(f"manifest keys must be {sorted(expected)}, got {sorted(meta)}")
        if meta["order"] != ORDER_TAG:
            raise GridFormatError(f"unsupported value order {meta['order']!r}")
        axes = tuple(Axis.from_dict(a) for a in meta["axes"])
        if len(axes) != meta["n"]:
            raise GridFormatError("manifest n does not match the number of axes")
        t_axis = Axis.from_dict(meta["time_axis"])
        cpath = mpath.with_suffix(".csv")
        try:
            vals = np.loadtxt(cpath, dtype=float, ndmin=1)
        except (OSError, ValueError) as exc:
            raise GridFormatError(f"cannot read values {cpath}: {exc}") from exc
        shape = tuple(a.steps for a in axes) + (t_axis.steps,)
        if vals.size != math.prod(shape):
            raise GridFormatError(f"value file has {vals.size} entries, manifest implies {math.prod(shape)}")
        return cls(meta["name"], axes, t_axis, vals.reshape(shape, order="F"), domain)
