import json
import subprocess
import sys

import pytest

from masterop.cli import ConfigError, main, parse_config


def _run(*args):
    return main([str(a) for a in args])


def test_op_apply_symbol(tmp_path, capsys):
    assert _run("op", "apply", "--s", 0.5, "--n", 1, "--at", "0,0", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    res = rep["results"][0]
    assert res["value"] == pytest.approx(2**0.5, rel=1e-6)
    assert res["err_est"] < 1e-3
    assert (tmp_path / "values.csv").exists()


def test_check_lemma(tmp_path):
    assert _run("kernel", "check-lemma", "--samples", 2000, "--n", 2, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "report.json").read_text())["violations"] == 0
    assert (tmp_path / "margins.png").exists()
    assert (tmp_path / "margins_recipe.py").exists()


def test_bad_order_exits_2(tmp_path):
    assert _run("op", "apply", "--s", 1.5, "--out", tmp_path) == 2


def test_unknown_key_exits_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 1, "s": 0.5, "bogus": 1}))
    assert _run("op", "apply", "--config", cfg, "--out", tmp_path / "o") == 2
    with pytest.raises(ConfigError, match="bogus"):
        parse_config({"n": 1, "bogus": 1})


def test_rescale_p_out_of_range(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 1, "s": 0.5, "rescale": {"p": 2.0}}))
    assert _run("rescale", "demo", "--config", cfg, "--out", tmp_path / "o") == 2
    with pytest.raises(ConfigError, match="1 < p"):
        parse_config({"n": 1, "s": 0.5, "rescale": {"p": 2.0}})


def test_rescale_demo_deterministic(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 1, "s": 0.5, "rescale": {"p": 1.25, "heights": [100, 1000]}}))
    outs = []
    for k in range(2):
        d = tmp_path / f"o{k}"
        assert _run("rescale", "demo", "--config", cfg, "--out", d) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0].keys() == outs[1].keys()
    assert outs[0] == outs[1]


def test_selftest_subset(tmp_path):
    assert _run("selftest", "--only", "2,8", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert "runtime" not in json.dumps(rep)


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "masterop", "kernel", "eval", "--s", "0.5", "--n", "1", "--at", "0.5,1", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
