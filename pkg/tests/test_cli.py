import json
from math import sqrt

import numpy as np
import pytest
import yaml

from pergreen.cli import main
from pergreen.coeff_fields import write_table
from pergreen.config import ConfigError, load_config, parse_config
from pergreen.torus import read_gsgf

LAYERED = {"kind": "layered", "mean": 2.0, "modes": [[1.0, 1, 0.0]]}
EYE = {"kind": "constant", "matrix": 1.0}


def run(tmp_path, command, cfg, name="run", jobs=1):
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(path), "--out", str(out), "--jobs", str(jobs)])
    return code, out, json.loads((out / "manifest.json").read_text())


def test_correctors_constant(tmp_path):
    A = [[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 3.0]]
    code, out, man = run(tmp_path, "correctors", {"field": {"kind": "constant", "matrix": A},
                                                  "grid": {"d": 3, "N": 8}})
    assert code == 0 and man["status"] == "ok"
    T = json.loads((out / "homogenized.json").read_text())
    np.testing.assert_allclose(T["A_star"], A, atol=1e-12)
    assert np.abs(read_gsgf(out / "w_0.gsgf").values).max() == 0


def test_correctors_layered(tmp_path):
    code, out, man = run(tmp_path, "correctors", {"field": LAYERED, "grid": {"d": 3, "N": 64}})
    assert code == 0
    A = np.array(man["results"]["A_star"])
    assert A[0, 0] == pytest.approx(sqrt(3), abs=1e-3)
    assert A[1, 1] == pytest.approx(2.0, abs=1e-3)
    assert max(man["residuals"].values()) <= 1e-9
    for key in ("config", "residuals", "wall_time", "version"):
        assert key in man
    assert man["config"]["grid"] == {"d": 3, "N": 64}


def test_missing_grid_block(tmp_path):
    code, _, man = run(tmp_path, "correctors", {"field": LAYERED})
    assert code == 2 and man["status"] == "config_error"


def test_solver_failure_exit_code(tmp_path):
    cfg = {"field": LAYERED, "grid": {"d": 3, "N": 16}, "solver": {"max_iter": 2}}
    code, _, man = run(tmp_path, "correctors", cfg)
    assert code == 3 and man["status"] == "numerical_failure"


def test_green(tmp_path):
    cfg = {"field": LAYERED, "grid": {"d": 3, "N": 16}, "n": [1, 2],
           "green": {"sources": [[0, 0, 0], [0.25, 0.5, 0.125]], "derivatives": True}}
    code, out, man = run(tmp_path, "green", cfg)
    assert code == 0
    for n in ("1", "2"):
        assert man["results"][n]["mean_zero"] <= 1e-8
        assert man["results"][n]["reciprocity"] <= 1e-8
    assert (out / "green_n2_s1.gsgf").exists() and (out / "derivatives_n1.npz").exists()
    code, _, _ = run(tmp_path, "green", dict(cfg, n=[1, 4]), name="bad")
    assert code == 2


def test_rerun_is_byte_identical(tmp_path):
    cfg = {"field": LAYERED, "grid": {"d": 3, "N": 16}, "green": {"sources": [[0.5, 0, 0]]}}
    _, a, _ = run(tmp_path, "green", cfg, "a")
    _, b, _ = run(tmp_path, "green", cfg, "b", jobs=2)
    for name in ("green_n1_s0.gsgf", "green_n1_s0.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    shells = {"field": EYE, "grid": {"d": 3, "N": 8}, "shells": {"m_max": 2}}
    _, a, _ = run(tmp_path, "shells", shells, "sa")
    _, b, _ = run(tmp_path, "shells", shells, "sb")
    assert (a / "certificate.csv").read_bytes() == (b / "certificate.csv").read_bytes()


def test_decompose_analytic(tmp_path):
    cfg = {"field": EYE, "grid": {"d": 3, "N": 64},
           "decompose": {"x": [0.125, 0.078125, 0.109375], "y": [0.0, 0.0, 0.0], "m_max": 3}}
    code, out, man = run(tmp_path, "decompose", cfg)
    assert code == 0
    rep = json.loads((out / "decomposition.json").read_text())
    assert rep["rel_error"] <= 0.02
    assert rep["beta_hat"] > 0
    assert [s["m"] for s in rep["shells"]] == [0, 1, 2, 3]


def test_decompose_window_violation(tmp_path):
    cfg = {"field": LAYERED, "grid": {"d": 3, "N": 8},
           "decompose": {"x": [0.25, 0.25, 0.125], "y": [0, 0, 0], "m_max": 2,
                         "source": "window", "L": 4, "h": 0.125, "direct_check": False}}
    code, _, man = run(tmp_path, "decompose", cfg)
    assert code == 2 and "window" in man["error"].lower()


def test_estimate(tmp_path):
    cfg = {"field": EYE, "grid": {"d": 3, "N": 64}, "n": [1, 2],
           "estimate": {"quantities": ["value", "mixed"]}}
    code, out, man = run(tmp_path, "estimate", cfg)
    assert code == 0
    assert man["results"]["value"]["p_hat"] == pytest.approx(-1, abs=0.3)
    assert man["results"]["mixed"]["p_hat"] == pytest.approx(-3, abs=0.3)
    assert man["results"]["mixed"]["spread_ok"]
    assert (out / "fits.csv").read_text().startswith("quantity,n,r,magnitude")
    code, _, _ = run(tmp_path, "estimate", dict(cfg, n=[]), name="empty")
    assert code == 2


def test_estimate_2d(tmp_path):
    cfg = {"field": {"kind": "constant", "matrix": 1.0}, "grid": {"d": 2, "N": 128},
           "estimate": {"quantities": ["grad_x"]}}
    code, _, man = run(tmp_path, "estimate", cfg)
    assert code == 0
    lb = man["results"]["log_bound"]
    assert lb["gap_3d"] <= 0.02 and lb["C_max"] > 0


def test_shells(tmp_path):
    code, out, man = run(tmp_path, "shells", {"field": EYE, "grid": {"d": 3, "N": 8},
                                              "shells": {"m_max": 3}})
    assert code == 0
    rows = man["results"]["rows"]
    assert all(r["norm"] <= 1e-12 * r["abs_sum"] for r in rows)
    cfg = {"field": EYE, "grid": {"d": 3, "N": 8},
           "shells": {"m_max": 4, "tensor": [[1, 0, 0], [0, 2, 0], [0, 0, 3]]}}
    code, out, man = run(tmp_path, "shells", cfg, "aniso")
    ratios = [r["ratio"] for r in man["results"]["rows"][3:]]
    assert code == 0 and all(q <= 0.75 for q in ratios)
    bad = dict(cfg, shells={"m_max": 3, "tensor": [[1, 0, 0], [0, -1, 0], [0, 0, 1]]})
    assert run(tmp_path, "shells", bad, "bad")[0] == 2


def test_jobs_flag_validated(tmp_path):
    cfg = {"field": EYE, "grid": {"d": 3, "N": 8}}
    assert run(tmp_path, "shells", cfg, jobs=0)[0] == 2


@pytest.mark.parametrize("raw", [
    {"field": EYE, "grid": {"d": 4, "N": 8}},
    {"field": EYE, "grid": {"d": 3, "N": 2}},
    {"field": dict(EYE, dim=2), "grid": {"d": 3, "N": 8}},
    {"field": EYE, "grid": {"d": 3, "N": 8}, "n": [0]},
    {"field": EYE, "grid": {"d": 3, "N": 8}, "extra": 1},
    {"field": EYE, "grid": {"d": 3, "N": 8}, "solver": {"tol": 0}},
    {"field": EYE, "grid": {"d": 3, "N": 8}, "solver": {"max_iter": 0}},
    {"field": EYE, "grid": {"d": 3, "N": 8}, "estimate": {"quantities": ["hessian"]}},
    {"field": EYE, "grid": {"d": 3, "N": 8}, "decompose": {"source": "window"}},
    {"field": EYE, "grid": {"d": 3, "N": 8}, "decompose": {"x": [0, 0]}},
    {"field": {"kind": "nope"}, "grid": {"d": 3, "N": 8}},
])
def test_config_validation(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_json_config_and_relative_paths(tmp_path):
    tab = np.broadcast_to(2.0 * np.eye(3), (4, 4, 4, 3, 3))
    write_table(tmp_path / "a.npy", tab)
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"field": {"kind": "tabulated", "path": "a.npy"},
                                "grid": {"d": 3, "N": 8}}))
    cfg = load_config(path)
    assert cfg.make_field()(np.zeros(3))[0, 0] == pytest.approx(2.0)
