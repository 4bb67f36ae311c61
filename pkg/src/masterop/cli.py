"""Command-line interface.

Exit codes: 0 success, 1 invariant failure, 2 configuration error.
Reports are JSON with floats written at 17 significant digits and sorted
keys, so a fixed config and seed give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .fields import FieldHandle, affine, constant, exp_cos, fundamental, gaussian_bump, power, random_source
from .geometry import Cylinder
from .greens import DivergenceError, RestrictedSource, decompose, green_field, solve_w
from .grid import Axis, GridField, GridFormatError
from .kernel import (
    DomainError,
    FracParams,
    SpaceTimePoint,
    check_key_inequality,
    eval_kernel,
    eval_kernel_dt,
    eval_kernel_grad_x,
    eval_kernel_hess_x,
    make_frame,
)
from .operator import AdmissibilityError, apply_master_batch
from .quadrature import QuadratureSpec
from .regularity import HolderSpec, UnderResolvedError, estimate_log_lipschitz, estimate_one_plus_log, estimate_parabolic_holder

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending path."""


# -- deterministic JSON ----------------------------------------------------------------------


def _fmt(v: float) -> str:
    if math.isnan(v):
        return '"NaN"'
    if math.isinf(v):
        return '"Infinity"' if v > 0 else '"-Infinity"'
    return format(v, ".17g")


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with sorted keys and floats at 17 significant digits."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(obj[k], indent, _level + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


# -- configuration ----------------------------------------------------------------------------


def _num(path: str, v, lo=-math.inf, hi=math.inf, *, lo_open=False, hi_open=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    bad = (v <= lo if lo_open else v < lo) or (v >= hi if hi_open else v > hi)
    if bad or not math.isfinite(v):
        lb, rb = "(" if lo_open else "[", ")" if hi_open else "]"
        raise ConfigError(f"{path}: {v!r} outside {lb}{lo:g}, {hi:g}{rb}")
    return int(v) if integer else float(v)


def _vec(path: str, v, n: int | None = None) -> list[float]:
    if not isinstance(v, list):
        raise ConfigError(f"{path}: expected a list of numbers")
    out = [_num(f"{path}[{i}]", x) for i, x in enumerate(v)]
    if n is not None and len(out) != n:
        raise ConfigError(f"{path}: expected {n} components, got {len(out)}")
    return out


def _keys(path: str, d, allowed: set, required: set = frozenset()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path or '<root>'}: unknown keys {sorted(unknown)}; allowed {sorted(allowed)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{path or '<root>'}: missing keys {sorted(missing)}")
    return d


FIELD_KEYS = {
    "constant": {"c"},
    "affine": {"a", "b"},
    "cos": {"k"},
    "exp_cos": {"k", "lam", "amplitude"},
    "power": {"beta", "axis", "amplitude"},
    "gaussian_bump": {"center", "width", "amplitude"},
    "fundamental": {"x0", "t0"},
    "source": {"seed", "n_bumps", "window"},
    "manufactured": {"source", "cylinder"},
    "grid": {"file"},
}

BLOCK_KEYS = {
    "kernel": {"samples", "lemma_rate", "dx", "dt"},
    "op": {"field", "at"},
    "solve": {"source", "cylinder", "grid", "normalization"},
    "decompose": {"u", "source", "cylinder", "grid"},
    "reg": {"field", "mode", "alpha", "region", "box", "grid", "pair_budget"},
    "rescale": {"p", "q", "C0", "Kbar", "variant", "R", "heights", "grid_file", "X_k", "steps"},
    "selftest": {"only"},
}


@dataclass
class RunConfig:
    frac: FracParams
    quad: QuadratureSpec
    fields: dict = field(default_factory=dict)
    output_dir: Path = Path("out")
    seed: int = 0
    blocks: dict = field(default_factory=dict)
    base_dir: Path = Path(".")


def _cylinder(path: str, d, n: int) -> Cylinder:
    _keys(path, d, {"center_x", "radius", "t_min", "t_max"}, {"radius", "t_min", "t_max"})
    c = _vec(f"{path}.center_x", d.get("center_x", [0.0] * n), n)
    r = _num(f"{path}.radius", d["radius"], 0, lo_open=True)
    lo, hi = _num(f"{path}.t_min", d["t_min"]), _num(f"{path}.t_max", d["t_max"])
    if not lo < hi:
        raise ConfigError(f"{path}: need t_min < t_max")
    return Cylinder(tuple(c), r, lo, hi)


def _field_spec(path: str, d, n: int, base: Path) -> dict:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{path}: a field needs a 'kind' among {sorted(FIELD_KEYS)}")
    kind = d["kind"]
    if kind not in FIELD_KEYS:
        raise ConfigError(f"{path}.kind: unknown kind {kind!r}; expected one of {sorted(FIELD_KEYS)}")
    _keys(path, d, FIELD_KEYS[kind] | {"kind"})
    if kind == "grid":
        if not isinstance(d.get("file"), str):
            raise ConfigError(f"{path}.file: expected a path")
        f = (base / d["file"]).with_suffix(".json")
        if not f.exists() or not f.with_suffix(".csv").exists():
            raise ConfigError(f"{path}.file: {f} or its .csv sibling does not exist")
    for key in ("k", "a", "center", "x0"):
        if key in d:
            _vec(f"{path}.{key}", d[key], n)
    if "cylinder" in d:
        _cylinder(f"{path}.cylinder", d["cylinder"], n)
    if "window" in d:
        w = _vec(f"{path}.window", d["window"], 2)
        if not w[0] < w[1]:
            raise ConfigError(f"{path}.window: need lower < upper")
    if kind == "power":
        _num(f"{path}.beta", d.get("beta", 0.5), 0, lo_open=True)
    if kind == "gaussian_bump":
        _num(f"{path}.width", d.get("width", 1.0), 0, lo_open=True)
    return dict(d)


def parse_config(text: str | dict, overrides: dict | None = None, base_dir: Path | str = ".") -> RunConfig:
    """Validate a JSON config (text or already-parsed object); unknown keys are rejected."""
    if isinstance(text, str):
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: not valid JSON ({exc})") from exc
    else:
        raw = dict(text)
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    top = {"n", "s", "seed", "output_dir", "quadrature", "fields"} | set(BLOCK_KEYS)
    _keys("", raw, top)
    n = _num("n", raw.get("n", 1), 1, 3, integer=True)
    s = _num("s", raw.get("s", 0.5), 0, 1, lo_open=True, hi_open=True)
    seed = _num("seed", raw.get("seed", 0), integer=True)
    q = _keys("quadrature", raw.get("quadrature", {}), {"r_cut", "r_max", "panels_per_decade", "gh_order", "rel_tol"})
    qd = QuadratureSpec()
    try:
        quad = QuadratureSpec(
            r_cut=_num("quadrature.r_cut", q.get("r_cut", qd.r_cut), 0, lo_open=True),
            r_max=_num("quadrature.r_max", q.get("r_max", qd.r_max), 0, lo_open=True),
            panels_per_decade=_num("quadrature.panels_per_decade", q.get("panels_per_decade", qd.panels_per_decade), 1, 64, integer=True),
            gh_order=_num("quadrature.gh_order", q.get("gh_order", qd.gh_order), 4, 64, integer=True),
            rel_tol=_num("quadrature.rel_tol", q.get("rel_tol", qd.rel_tol), 0, 1, lo_open=True),
            seed=seed,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"quadrature: {exc}") from exc
    base = Path(base_dir)
    fields = raw.get("fields", {})
    if not isinstance(fields, dict):
        raise ConfigError("fields: expected an object mapping names to field specs")
    fields = {name: _field_spec(f"fields.{name}", d, n, base) for name, d in fields.items()}
    blocks = {}
    for name, allowed in BLOCK_KEYS.items():
        if name in raw:
            blocks[name] = dict(_keys(name, raw[name], allowed))
    _validate_blocks(blocks, fields, n, s)
    out = raw.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("output_dir: expected a path string")
    return RunConfig(FracParams(n, s), quad, fields, Path(out), seed, blocks, base)


def _ref(path: str, name, fields: dict, kinds: set | None = None):
    if name is None:
        return
    if name not in fields:
        raise ConfigError(f"{path}: unknown field {name!r}; define it under 'fields'")
    if kinds and fields[name]["kind"] not in kinds:
        raise ConfigError(f"{path}: field {name!r} must be of kind {sorted(kinds)}")


def _grid_block(path: str, d) -> None:
    _keys(path, d, {"steps", "time_steps"})
    for k in ("steps", "time_steps"):
        if k in d:
            _num(f"{path}.{k}", d[k], 3, 2001, integer=True)


def _validate_blocks(blocks: dict, fields: dict, n: int, s: float) -> None:
    for name, spec in fields.items():
        if spec["kind"] == "manufactured":
            _ref(f"fields.{name}.source", spec.get("source"), fields)
    k = blocks.get("kernel", {})
    if "samples" in k:
        _num("kernel.samples", k["samples"], 1, 10**7, integer=True)
    if k.get("lemma_rate") is not None:
        _num("kernel.lemma_rate", k["lemma_rate"], 0, lo_open=True)
    if "dx" in k:
        _vec("kernel.dx", k["dx"], n)
    if "dt" in k:
        _num("kernel.dt", k["dt"])
    op = blocks.get("op", {})
    _ref("op.field", op.get("field"), fields)
    if "at" in op:
        if not isinstance(op["at"], list) or not op["at"]:
            raise ConfigError("op.at: expected a non-empty list of [x1, ..., t] points")
        for i, pt in enumerate(op["at"]):
            _vec(f"op.at[{i}]", pt, n + 1)
    for blk in ("solve", "decompose"):
        b = blocks.get(blk, {})
        _ref(f"{blk}.source", b.get("source"), fields)
        if "cylinder" in b:
            _cylinder(f"{blk}.cylinder", b["cylinder"], n)
        if "grid" in b:
            _grid_block(f"{blk}.grid", b["grid"])
    if blocks.get("solve", {}).get("normalization", "solution") not in ("solution", "kernel"):
        raise ConfigError("solve.normalization: expected 'solution' or 'kernel'")
    _ref("decompose.u", blocks.get("decompose", {}).get("u"), fields)
    r = blocks.get("reg", {})
    _ref("reg.field", r.get("field"), fields)
    if r.get("mode", "holder") not in ("holder", "log-lipschitz", "one-plus-log"):
        raise ConfigError("reg.mode: expected 'holder', 'log-lipschitz' or 'one-plus-log'")
    if "alpha" in r:
        _num("reg.alpha", r["alpha"], 0, 1, lo_open=True)
    for key in ("region", "box"):
        if key in r:
            _cylinder(f"reg.{key}", r[key], n)
    if "grid" in r:
        _grid_block("reg.grid", r["grid"])
    if "pair_budget" in r:
        _num("reg.pair_budget", r["pair_budget"], 1000, integer=True)
    rs = blocks.get("rescale")
    if rs is not None:
        variant = rs.get("variant", "height")
        if variant not in ("height", "height-plus-gradient"):
            raise ConfigError("rescale.variant: expected 'height' or 'height-plus-gradient'")
        p = _num("rescale.p", rs.get("p", 1.25), 1, lo_open=True)
        qq = _num("rescale.q", rs.get("q", 0.0), 0)
        upper = (n + 2) / (n + 2 - 2 * s)
        if variant == "height" and not p < upper:
            raise ConfigError(
                f"rescale.p: {p:g} outside (1, {upper:.6g}); the nonlinearity must satisfy 1 < p < (n+2)/(n+2-2s)"
            )
        if variant == "height-plus-gradient":
            if not s > 0.5:
                raise ConfigError(f"s: the gradient variant needs s > 1/2, got {s:g}")
            qc = 2 * s * p / (2 * s + p - 1)
            if not 0 < qq < qc:
                raise ConfigError(f"rescale.q: {qq:g} outside (0, {qc:.6g}) = (0, 2sp/(2s+p-1))")
        for key in ("C0", "Kbar", "R"):
            if key in rs:
                _num(f"rescale.{key}", rs[key], 0, lo_open=True)
        if "heights" in rs:
            hs = _vec("rescale.heights", rs["heights"])
            if not hs or min(hs) <= 0:
                raise ConfigError("rescale.heights: expected positive heights")
        if "X_k" in rs:
            _vec("rescale.X_k", rs["X_k"], n + 1)
        if "steps" in rs:
            _num("rescale.steps", rs["steps"], 3, 401, integer=True)
            if rs["steps"] % 2 == 0:
                raise ConfigError("rescale.steps: must be odd so the origin is a node")
        if rs.get("grid_file") is not None and "X_k" not in rs:
            raise ConfigError("rescale.X_k: required with grid_file")
    st = blocks.get("selftest", {})
    if "only" in st:
        from .acceptance import CRITERIA

        if not isinstance(st["only"], list) or any(str(x) not in CRITERIA for x in st["only"]):
            raise ConfigError(f"selftest.only: expected a list drawn from {sorted(CRITERIA)}")


# -- field construction ---------------------------------------------------------------------


def build_field(cfg: RunConfig, name: str) -> FieldHandle:
    spec = cfg.fields[name]
    p, n, kind = cfg.frac, cfg.frac.n, spec["kind"]
    if kind == "constant":
        return constant(n, spec.get("c", 1.0))
    if kind == "affine":
        return affine(spec.get("a", [0.0] * n), spec.get("b", 0.0))
    if kind == "cos":
        return exp_cos(spec.get("k", [1.0] + [0.0] * (n - 1)), 0.0)
    if kind == "exp_cos":
        return exp_cos(spec.get("k", [1.0] + [0.0] * (n - 1)), spec.get("lam", 0.0), spec.get("amplitude", 1.0))
    if kind == "power":
        return power(n, spec.get("beta", 0.5), spec.get("axis"), spec.get("amplitude", 1.0))
    if kind == "gaussian_bump":
        return gaussian_bump(spec.get("center", [0.0] * n), spec.get("width", 1.0), spec.get("amplitude", 1.0))
    if kind == "fundamental":
        return fundamental(p, spec.get("x0"), spec.get("t0", 0.0))
    if kind == "source":
        w = spec.get("window")
        return random_source(n, spec.get("seed", cfg.seed), spec.get("n_bumps", 4), window=tuple(w) if w else None).handle()
    if kind == "manufactured":
        f = build_field(cfg, spec["source"])
        if "cylinder" in spec:
            f = RestrictedSource(f, _cylinder("", spec["cylinder"], n))
        return green_field(p, f, cfg.quad)
    if kind == "grid":
        return GridField.load(cfg.base_dir / spec["file"]).as_field()
    raise ConfigError(f"fields.{name}: unsupported kind {kind!r}")


def _default_cylinder(n: int) -> Cylinder:
    return Cylinder((0.0,) * n, 2.0, 0.0, 3.0)


def _template(c: Cylinder, grid: dict, n: int) -> GridField:
    steps = grid.get("steps", 41 if n == 1 else 17)
    ts = grid.get("time_steps", 31 if n == 1 else 13)
    axes = tuple(Axis(c.center_x[i] - c.radius, c.center_x[i] + c.radius, steps) for i in range(n))
    return GridField("grid", axes, Axis(c.t_min, c.t_max, ts), np.zeros((steps,) * n + (ts,)), c)


# -- outputs -----------------------------------------------------------------------------------


class Writer:
    """Serialized artifact writer rooted at the output directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def json(self, name: str, obj) -> Path:
        path = self.root / name
        path.write_text(dumps(obj) + "\n")
        self.files.append(name)
        return path

    def csv(self, name: str, header: list[str], rows) -> Path:
        path = self.root / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v for v in row])
        self.files.append(name)
        return path

    def grid(self, name: str, g: GridField) -> None:
        g.save(self.root / name)
        self.files += [f"{name}.json", f"{name}.csv"]

    def plot(self, stem: str, csv_name: str, x: str, ys: list[str], title: str, logx=False, logy=False) -> None:
        """Render ``<stem>.png`` from a CSV and write the matching recipe script."""
        recipe = _RECIPE.format(csv=csv_name, png=f"{stem}.png", x=x, ys=ys, title=title, logx=logx, logy=logy)
        (self.root / f"{stem}_recipe.py").write_text(recipe)
        self.files.append(f"{stem}_recipe.py")
        import matplotlib

        matplotlib.use("Agg")
        ns: dict = {"__name__": "__recipe__"}
        exec(compile(recipe, f"{stem}_recipe.py", "exec"), ns)
        ns["render"](self.root)
        self.files.append(f"{stem}.png")


_RECIPE = '''"""Recreate {png} from {csv}; pass the output directory as the only argument."""
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def render(root="."):
    root = Path(root)
    with open(root / "{csv}") as fh:
        rows = list(csv.DictReader(fh))
    x = [float(r["{x}"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in {ys!r}:
        ax.plot(x, [float(r[col]) for r in rows], marker="o", ms=3, label=col)
    if {logx}:
        ax.set_xscale("log")
    if {logy}:
        ax.set_yscale("log")
    ax.set_xlabel("{x}")
    ax.set_title("{title}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(root / "{png}", dpi=100, metadata={{"Software": None}})
    plt.close(fig)


if __name__ == "__main__":
    render(sys.argv[1] if len(sys.argv) > 1 else ".")
'''


# -- subcommands -------------------------------------------------------------------------------


def _point(vals, n: int) -> SpaceTimePoint:
    if len(vals) != n + 1:
        raise ConfigError(f"--at: expected {n + 1} comma-separated numbers (x1..x{n}, t)")
    return SpaceTimePoint(tuple(vals[:-1]), vals[-1])


def cmd_kernel_eval(cfg: RunConfig, out: Writer, args) -> int:
    n, p = cfg.frac.n, cfg.frac
    k = cfg.blocks.get("kernel", {})
    if args.at is not None:
        pt = _point(args.at, n)
        dx, dt = list(pt.x), pt.t
    else:
        dx, dt = k.get("dx", [1.0] * n), k.get("dt", 1.0)
    rep = {"n": n, "s": p.s, "c_ns": p.c_ns, "dx": dx, "dt": dt, "G": eval_kernel(p, np.array(dx), dt)}
    if dt > 0:
        rep["grad_x"] = eval_kernel_grad_x(p, np.array(dx), dt)
        rep["hess_x"] = eval_kernel_hess_x(p, np.array(dx), dt)
        rep["dt_G"] = eval_kernel_dt(p, np.array(dx), dt)
    out.json("report.json", rep)
    print(dumps({"G": rep["G"]}))
    return EXIT_OK


def cmd_kernel_check(cfg: RunConfig, out: Writer, args) -> int:
    from .acceptance import sample_precondition

    k = cfg.blocks.get("kernel", {})
    samples = args.samples or k.get("samples", 100_000)
    rate = k.get("lemma_rate")
    p = cfg.frac
    rng = np.random.default_rng(cfg.seed)
    y, tau, pw = sample_precondition(p.n, samples, rng)
    chk = check_key_inequality(p, make_frame(p), y, tau, pw, lemma_rate=rate)
    margin = chk.margin
    rep = {
        "n": p.n,
        "s": p.s,
        "samples": samples,
        "lemma_rate": rate if rate is not None else 1.0 / (4 * p.n),
        "violations": chk.violations,
        "max_margin": float(np.max(margin)),
        "per_inequality_violations": {
            name: int(np.count_nonzero(getattr(chk, name) > math.log1p(chk.slack)))
            for name in ("general", "lemma", "grad", "hess", "dt")
        },
    }
    order = np.argsort(tau)
    edges = np.linspace(0, samples, 21).astype(int)
    rows = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            sel = order[a:b]
            rows.append((float(np.median(tau[sel])), float(np.max(margin[sel]))))
    out.csv("margins.csv", ["tau", "max_margin"], rows)
    out.plot("margins", "margins.csv", "tau", ["max_margin"], "tightest kernel inequality ratio", logx=True)
    out.json("report.json", rep)
    print(dumps({"violations": rep["violations"], "samples": samples}))
    return EXIT_OK if chk.violations == 0 else EXIT_INVARIANT


def cmd_op_apply(cfg: RunConfig, out: Writer, args) -> int:
    p, n = cfg.frac, cfg.frac.n
    op = cfg.blocks.get("op", {})
    name = args.field or op.get("field")
    if name is not None and name not in cfg.fields:
        raise ConfigError(f"--field: unknown field {name!r}")
    if name is None:
        u = exp_cos([1.0] + [0.0] * (n - 1), 1.0)
        name = "exp_cos(k=e1, lambda=1)"
    else:
        u = build_field(cfg, name)
    if args.at is not None:
        points = [_point(args.at, n)]
    else:
        points = [_point(v, n) for v in op.get("at", [[0.0] * (n + 1)])]
    try:
        results = apply_master_batch(p, u, points, cfg.quad, threads=args.threads)
    except AdmissibilityError as exc:
        out.json("report.json", {"field": name, "admissible": False, "diagnostic": str(exc)})
        print(f"not admissible: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    rows = []
    for pt, r in zip(points, results):
        rows.append({"x": list(pt.x), "t": pt.t, "value": r.value, "err_est": r.error,
                     "low_confidence": r.low_confidence, "warnings": r.warnings})
    rep = {"field": name, "n": n, "s": p.s, "results": rows}
    out.json("report.json", rep)
    out.csv("values.csv", [f"x{i + 1}" for i in range(n)] + ["t", "value", "err_est"],
            [list(r["x"]) + [r["t"], r["value"], r["err_est"]] for r in rows])
    if len(rows) == 1:
        print(dumps({"value": rows[0]["value"], "err_est": rows[0]["err_est"]}))
    else:
        print(dumps([{"value": r["value"], "err_est": r["err_est"]} for r in rows]))
    return EXIT_OK


def _source(cfg: RunConfig, block: dict, Q: Cylinder) -> tuple[str, FieldHandle]:
    """Named source, or a seeded random one switched on one time unit before ``Q``."""
    name = block.get("source")
    if name is None:
        window = (Q.t_min - 1.0, Q.t_max)
        return f"random_source(seed, window={window})", random_source(cfg.frac.n, cfg.seed, window=window).handle()
    return name, build_field(cfg, name)


def _profile_rows(g: GridField) -> tuple[list[str], list]:
    """Values along ``x1`` at the middle time slice (other coordinates at their middle node)."""
    idx = tuple(a.steps // 2 for a in g.axes[1:]) + (g.time_axis.steps // 2,)
    xs = g.axes[0].nodes
    vals = g.values[(slice(None),) + idx]
    return ["x1", "value"], [(float(x), float(v)) for x, v in zip(xs, vals)]


def cmd_solve(cfg: RunConfig, out: Writer, args) -> int:
    n = cfg.frac.n
    b = cfg.blocks.get("solve", {})
    Q = _cylinder("solve.cylinder", b["cylinder"], n) if "cylinder" in b else _default_cylinder(n)
    name, f = _source(cfg, b, Q)
    tmpl = _template(Q, b.get("grid", {}), n)
    w = solve_w(cfg.frac, f, Q, tmpl, cfg.quad, b.get("normalization", "solution"))
    out.grid("w", w)
    header, rows = _profile_rows(w)
    out.csv("w_profile.csv", header, rows)
    out.plot("w_profile", "w_profile.csv", "x1", ["value"], "w at the middle time slice")
    rep = {"source": name, "cylinder": Q.to_dict(), "normalization": b.get("normalization", "solution"),
           "shape": list(w.shape), "sup": w.sup_norm(), "min": float(w.values.min())}
    out.json("report.json", rep)
    print(dumps({"sup": rep["sup"], "shape": rep["shape"]}))
    return EXIT_OK


def cmd_decompose(cfg: RunConfig, out: Writer, args) -> int:
    n = cfg.frac.n
    b = cfg.blocks.get("decompose", {})
    Q = _cylinder("decompose.cylinder", b["cylinder"], n) if "cylinder" in b else _default_cylinder(n)
    name, f = _source(cfg, b, Q)
    if b.get("u") is not None:
        u = build_field(cfg, b["u"])
        uname = b["u"]
    else:
        u = green_field(cfg.frac, f, cfg.quad)
        uname = f"G*{name}"
    tmpl = _template(Q, b.get("grid", {}), n)
    dec = decompose(cfg.frac, u, f, Q, cfg.quad, template=tmpl, seed=cfg.seed)
    out.grid("v", dec.v)
    out.grid("w", dec.w)
    rep = {"u": uname, "source": name, "cylinder": Q.to_dict(), "spot_residual": dec.spot_residual,
           "sup_v": dec.v.sup_norm(), "sup_w": dec.w.sup_norm(), "warnings": dec.warnings}
    out.json("report.json", rep)
    print(dumps({"spot_residual": dec.spot_residual, "warnings": len(dec.warnings)}))
    return EXIT_INVARIANT if any(w.startswith("spot check failed") for w in dec.warnings) else EXIT_OK


def cmd_reg(cfg: RunConfig, out: Writer, args) -> int:
    n = cfg.frac.n
    b = cfg.blocks.get("reg", {})
    box = _cylinder("reg.box", b["box"], n) if "box" in b else Cylinder((0.0,) * n, 1.0, 1.0, 2.0)
    region = _cylinder("reg.region", b["region"], n) if "region" in b else box
    name = b.get("field")
    if name is not None and cfg.fields[name]["kind"] == "grid":
        g = GridField.load(cfg.base_dir / cfg.fields[name]["file"])
    else:
        u = build_field(cfg, name) if name else power(n, 2 * cfg.frac.s)
        name = name or f"|x|^{2 * cfg.frac.s:g}"
        g = _template(box, b.get("grid", {"steps": 65, "time_steps": 65} if n == 1 else {}), n).fill(u, chunk=256)
    mode = b.get("mode", "holder")
    alpha = b.get("alpha", cfg.frac.s)
    spec = HolderSpec(alpha, mode, b.get("pair_budget", 4_000_000), seed=cfg.seed)
    est = {"holder": estimate_parabolic_holder, "log-lipschitz": estimate_log_lipschitz,
           "one-plus-log": estimate_one_plus_log}[mode]
    try:
        rep = est(g, region, spec)
    except UnderResolvedError as exc:
        out.json("report.json", {"field": name, "under_resolved": str(exc)})
        print(f"under-resolved: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    d = rep.to_dict()
    d["field"] = name
    out.json("report.json", d)
    out.csv("witnesses.csv", ["component", "distance", "increment", "ratio"],
            [(w.component, w.distance, w.increment, w.ratio) for w in rep.witnesses])
    print(dumps({"norm": rep.norm, "seminorm": rep.seminorm, "effective_exponent": rep.effective_exponent}))
    return EXIT_OK


def cmd_rescale_demo(cfg: RunConfig, out: Writer, args) -> int:
    from .rescale import BlowupProblem, RescaleError, rescale, scaling_exponent_table, synthetic_blowup_grid

    n, s = cfg.frac.n, cfg.frac.s
    b = cfg.blocks.get("rescale", {})
    prob = BlowupProblem(p=b.get("p", 1.25), s=s, q=b.get("q", 0.0), C0=b.get("C0", 1.0), Kbar=b.get("Kbar", 1.0))
    variant = b.get("variant", "height")
    R = b.get("R", 1.0)
    steps = b.get("steps", 41)
    members = []
    if b.get("grid_file"):
        grids = [("file", GridField.load(cfg.base_dir / b["grid_file"]))]
        X = _point(b["X_k"], n)
    else:
        grids = [(h, synthetic_blowup_grid(h, prob, n=n, steps=401 if n == 1 else 81, time_steps=401 if n == 1 else 81))
                 for h in b.get("heights", [1e2, 1e3, 1e4])]
        X = _point(b.get("X_k", [0.0] * (n + 1)), n)
    failed = False
    for i, (h, g) in enumerate(grids):
        try:
            res = rescale(g, X, R, prob, variant, steps, steps)
        except RescaleError as exc:
            members.append({"height": h, "failure": str(exc)})
            failed = True
            continue
        d = res.to_dict()
        d["height"] = h
        d["u_Xk"] = float(g.as_field().value(X.as_array(), X.t))
        members.append(d)
        out.grid(f"v_k_{i}", res.v_k)
        failed |= d["checks"]["eq56_defect"] > 0
    rep = {"problem": {"p": prob.p, "q": prob.q, "s": s, "C0": prob.C0, "Kbar": prob.Kbar}, "variant": variant, "R": R,
           "exponents": scaling_exponent_table(prob, n), "members": members}
    ok = [m for m in members if "lambda_k" in m]
    if len(ok) >= 2:
        slope = float(np.polyfit(np.log([m["u_Xk"] for m in ok]), np.log([m["lambda_k"] for m in ok]), 1)[0])
        rep["lambda_slope"] = slope
        out.csv("lambda.csv", ["u_Xk", "lambda_k"], [(m["u_Xk"], m["lambda_k"]) for m in ok])
        out.plot("lambda", "lambda.csv", "u_Xk", ["lambda_k"], "blow-up scale against height", logx=True, logy=True)
    out.json("report.json", rep)
    print(dumps({"members": len(members), "lambda_slope": rep.get("lambda_slope"), "failed": failed}))
    return EXIT_INVARIANT if failed else EXIT_OK


def cmd_selftest(cfg: RunConfig, out: Writer, args) -> int:
    from .acceptance import CRITERIA

    only = args.only or cfg.blocks.get("selftest", {}).get("only") or list(CRITERIA)
    only = [str(k) for k in only]
    unknown = [k for k in only if k not in CRITERIA]
    if unknown:
        raise ConfigError(f"--only: unknown criteria {unknown}; expected keys from {sorted(CRITERIA)}")
    print(f"{'#':>2}  {'criterion':<28} {'metric':>12} {'threshold':>10} {'time/s':>8}  result")
    results = []
    for k in only:
        r = CRITERIA[k]()
        results.append(r)
        print(f"{r.key:>2}  {r.title:<28} {r.metric:>12.4g} {r.threshold:>10.3g} {r.runtime:>8.1f}  "
              f"{'PASS' if r.passed else 'FAIL'}", flush=True)
    # runtimes stay on stdout so that reports are reproducible byte for byte
    reports = []
    for r in results:
        d = r.to_dict()
        d.pop("runtime")
        reports.append(d)
    out.json("report.json", {"criteria": reports, "all_passed": all(r.passed for r in results)})
    out.csv("summary.csv", ["key", "title", "metric", "threshold", "passed"],
            [(r.key, r.title, float(r.metric), float(r.threshold), int(r.passed)) for r in results])
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return EXIT_OK if n_pass == len(results) else EXIT_INVARIANT


# -- argument parsing ---------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for batched evaluation")
    common.add_argument("--s", type=float, help="order s in (0, 1)")
    common.add_argument("--n", type=int, help="spatial dimension")
    common.add_argument("--at", type=_floats, help="point x1,...,xn,t")

    ap = argparse.ArgumentParser(prog="masterop", description="Numerics for the fractional heat operator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kernel", help="kernel evaluation and inequality checks")
    ks = k.add_subparsers(dest="action", required=True)
    ks.add_parser("eval", parents=[common], help="G and its derivatives at --at").set_defaults(run=cmd_kernel_eval)
    kc = ks.add_parser("check-lemma", parents=[common], help="Monte-Carlo check of the directional inequalities")
    kc.add_argument("--samples", type=int, help="number of samples")
    kc.set_defaults(run=cmd_kernel_check)

    o = sub.add_parser("op", help="pointwise operator evaluation")
    os_ = o.add_subparsers(dest="action", required=True)
    oa = os_.add_parser("apply", parents=[common], help="apply the operator to a catalog field")
    oa.add_argument("--field", help="name of a field defined in the config")
    oa.set_defaults(run=cmd_op_apply)

    sub.add_parser("solve", parents=[common], help="Green convolution w = G * f_Q on a grid").set_defaults(run=cmd_solve)
    sub.add_parser("decompose", parents=[common], help="split u = v + w on a cylinder").set_defaults(run=cmd_decompose)
    sub.add_parser("reg", parents=[common], help="empirical Holder or log-Lipschitz norms").set_defaults(run=cmd_reg)

    r = sub.add_parser("rescale", help="blow-up selection and rescaling")
    rs = r.add_subparsers(dest="action", required=True)
    rs.add_parser("demo", parents=[common], help="run the procedure on a family or a grid file").set_defaults(
        run=cmd_rescale_demo
    )

    st = sub.add_parser("selftest", parents=[common], help="run the acceptance checks")
    st.add_argument("--only", type=lambda t: t.split(","), help="comma-separated criterion keys")
    st.set_defaults(run=cmd_selftest)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads: must be at least 1")
        text, base = "", Path(".")
        if args.config is not None:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigError(f"--config: cannot read {args.config}: {exc}") from exc
            base = args.config.parent
        overrides = {"s": args.s, "n": args.n, "seed": args.seed}
        if args.out is not None:
            overrides["output_dir"] = str(args.out)
        cfg = parse_config(text, overrides, base)
        out = Writer(cfg.output_dir)
        return args.run(cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, GridFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, AdmissibilityError, UnderResolvedError) as exc:
        print(f"invariant failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
