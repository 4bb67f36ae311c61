import json

import numpy as np
import pytest

from masterop.grid import Axis, GridField, GridFormatError


def _field():
    axes = [Axis(-1.0, 1.0, 5), Axis(0.0, 2.0, 3)]
    return GridField.sample(lambda x, t: x[..., 0] + 10 * x[..., 1] + 100 * t, axes, Axis(0.0, 1.0, 4), name="u")


def test_round_trip_is_exact(tmp_path):
    g = _field()
    g.save(tmp_path / "u")
    back = GridField.load(tmp_path / "u")
    assert back.name == "u"
    assert np.array_equal(back.values, g.values)
    assert back.axes == g.axes and back.time_axis == g.time_axis


def test_x1_fastest_order(tmp_path):
    g = _field()
    _, cpath = g.save(tmp_path / "u")
    flat = np.loadtxt(cpath)
    # first entries step along x1 at fixed x2 and t
    assert np.allclose(flat[:5], np.linspace(-1, 1, 5))
    assert flat[5] == pytest.approx(-1.0 + 10.0)
    assert flat[15] == pytest.approx(-1.0 + 100 / 3)


def test_length_mismatch_rejected(tmp_path):
    g = _field()
    _, cpath = g.save(tmp_path / "u")
    cpath.write_text("".join(cpath.read_text().splitlines(keepends=True)[:-1]))
    with pytest.raises(GridFormatError, match="entries"):
        GridField.load(tmp_path / "u")


def test_manifest_keys_checked(tmp_path):
    g = _field()
    mpath, _ = g.save(tmp_path / "u")
    meta = json.loads(mpath.read_text())
    meta["extra"] = 1
    mpath.write_text(json.dumps(meta))
    with pytest.raises(GridFormatError, match="manifest keys"):
        GridField.load(tmp_path / "u")
    del meta["extra"]
    meta["order"] = "column-major"
    mpath.write_text(json.dumps(meta))
    with pytest.raises(GridFormatError, match="order"):
        GridField.load(tmp_path / "u")


def test_non_finite_values_rejected():
    with pytest.raises(GridFormatError):
        GridField("u", (Axis(0, 1, 2),), Axis(0, 1, 2), [0.0, 1.0, np.nan, 2.0])


def test_interpolant_reproduces_affine_data():
    g = _field()
    h = g.as_field()
    assert h.value([0.3, 1.1], 0.45) == pytest.approx(0.3 + 11 + 45, rel=1e-12)
    assert h.value([3.0, 1.0], 0.5) == 0.0


def test_refine_keeps_nodes():
    a = Axis(-1.0, 1.0, 5)
    assert np.allclose(a.refined(2).nodes[::2], a.nodes)
