import json
import struct
from pathlib import Path

import numpy as np
import pytest

from nsproj.cli import main, parse_config, ConfigError
from nsproj.io import MAGIC, FormatError, read_ensemble, sidecar_path, write_ensemble

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_KICK = """
physics: {nu: 0.1, M: 2, dt: 0.05}
model: {kind: kick, T: 0.5}
law: {ids: ["(1,0)", "(0,1)", "(1,1)"], rule: ones}
projection: {F: ["(1,0)", "(0,1)"]}
run: {t: 1.0, n: 400, seed: 4}
density: {q: 1.0e-6, slope_tol: 0.5}
"""


def _cfg(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------

def test_ensemble_roundtrip(tmp_path):
    rows = np.random.default_rng(0).standard_normal((7, 3))
    path = tmp_path / "e.bin"
    write_ensemble(path, rows, {"seed": 1, "F": ["(1,0)"]})
    raw = path.read_bytes()
    assert raw[:16] == MAGIC
    version, n, d = struct.unpack_from("<IQQ", raw, 16)
    assert (version, n, d) == (1, 7, 3)
    assert np.array_equal(np.frombuffer(raw[36:], "<f8").reshape(7, 3), rows)
    back, meta = read_ensemble(path)
    assert np.array_equal(back, rows) and meta["seed"] == 1
    assert sidecar_path(path).name == "e.bin.json"


def test_ensemble_rejects_corruption(tmp_path):
    path = tmp_path / "e.bin"
    write_ensemble(path, np.zeros((2, 2)), {})
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"X" + bytes(raw[1:]))
    with pytest.raises(FormatError):
        read_ensemble(bad)
    bad.write_bytes(bytes(raw[:-8]))
    with pytest.raises(FormatError):
        read_ensemble(bad)
    raw[16] = 99
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_ensemble(bad)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_parse_config_blocks():
    cfg = parse_config(SMALL_KICK)
    assert cfg.M == 2 and cfg.F.labels() == ["(1,0)", "(0,1)"]
    assert cfg.model.kind == "kick" and cfg.model.law.dim == 3
    cfg = parse_config((CONFIGS / "density_kick.yaml").read_text())
    assert cfg.model.law.ids.labels() == ["(-1,0)", "(1,0)", "(-1,-1)", "(1,1)"]
    assert cfg.F.dim == 2


@pytest.mark.parametrize("text,needle", [
    ("physics: {nu: 0.1, M: 2}\nprojection: {F: [\"(3,0)\"]}\n", "(3,0)"),
    ("physics: {nu: -1, M: 2}\n", "viscosity"),
    ("physics: [1, 2]\n", "physics"),
    ("physics: {nu: 0.1, M: 2}\nlaw: {ids: [\"(1,0)\"], law: cauchy}\n", "cauchy"),
    ("physics: {nu: 0.1, M: 2}\nmodel: {kind: pink}\n", "model"),
    (": :\n", ""),
])
def test_parse_config_errors(text, needle):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert needle in str(info.value)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def test_saturate_exit_codes(tmp_path, capsys):
    assert main(["--out", str(tmp_path / "a"), "saturate", "(1,0),(1,1)", "--R", "5"]) == 0
    doc = json.loads((tmp_path / "a" / "coverage.json").read_text())
    assert doc["covered"] and doc["iters"] == 5
    assert main(["--out", str(tmp_path / "b"), "saturate", "(1,0),(0,1)", "--R", "1"]) == 1
    assert "fixed point" in capsys.readouterr().err
    assert main(["--out", str(tmp_path / "c"), "saturate", "(1,0)(1,1)"]) == 2
    assert main(["--out", str(tmp_path / "d"), "saturate"]) == 2


def test_bad_id_names_the_id(tmp_path, capsys):
    code = main(["--config", str(CONFIGS / "bad_id.yaml"), "--out", str(tmp_path), "simulate"])
    assert code == 2
    assert "(3,0)" in capsys.readouterr().err


def test_flag_errors(tmp_path):
    assert main(["--seed", "-1", "saturate", "(1,0)"]) == 2
    assert main(["--workers", "0", "saturate", "(1,0)"]) == 2
    assert main(["--format", "xml", "saturate", "(1,0)"]) == 2
    assert main(["--config", str(tmp_path / "missing.yaml"), "simulate"]) == 2
    assert main(["bogus"]) == 2


def test_simulate_decay_and_reruns_are_byte_identical(tmp_path):
    cfg = str(CONFIGS / "decay.yaml")
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["--config", cfg, "--out", str(o), "simulate"]) == 0
    for name in ("trajectory.csv", "summary.json", "basis.json", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert abs(summary["projection"]["(1,0)"] - np.exp(-0.1)) < 1e-8
    basis = json.loads((outs[0] / "basis.json").read_text())
    assert basis["truncation"] == 8 and len(basis["ids"]) == 290
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert man["exit_code"] == 0 and "decay" in man["config_text"]


def test_global_flags_before_or_after_command(tmp_path):
    a = main(["--seed", "5", "--out", str(tmp_path / "a"), "saturate", "(1,0)", "--R", "0"])
    b = main(["saturate", "(1,0)", "--R", "0", "--seed", "5", "--out", str(tmp_path / "b")])
    assert a == b == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["seed"] == mb["seed"] == 5


def test_density_positive_and_zero_noise(tmp_path):
    cfg = _cfg(tmp_path, SMALL_KICK)
    assert main(["--config", cfg, "--out", str(tmp_path / "pos"), "density"]) == 0
    rows, meta = read_ensemble(tmp_path / "pos" / "ensemble.bin")
    assert rows.shape == (400, 2) and meta["seed"] == 4
    zero = SMALL_KICK.replace("rule: ones", "b: [0, 0, 0]") \
        .replace("seed: 4}", "seed: 4, u0: {\"(1,0)\": 1.0}}")
    cfg = _cfg(tmp_path, zero, "zero.yaml")
    assert main(["--config", cfg, "--out", str(tmp_path / "zero"), "density"]) == 1
    rep = json.loads((tmp_path / "zero" / "density.json").read_text())
    assert rep["atom_multiplicity"] == 400


def test_density_csv_format_and_seed_override(tmp_path):
    cfg = _cfg(tmp_path, SMALL_KICK)
    main(["--config", cfg, "--out", str(tmp_path / "a"), "--format", "csv", "--seed", "9",
          "density"])
    assert (tmp_path / "a" / "density.csv").read_text().startswith("r,hits,mass,ci_lo,ci_hi\n")
    _, meta = read_ensemble(tmp_path / "a" / "ensemble.bin")
    assert meta["seed"] == 9


def test_density_workers_only_change_manifest(tmp_path):
    cfg = _cfg(tmp_path, SMALL_KICK.replace("n: 400", "n: 100, chunk: 30"))
    main(["--config", cfg, "--out", str(tmp_path / "w1"), "density"])
    main(["--config", cfg, "--out", str(tmp_path / "w2"), "--workers", "2", "density"])
    for name in ("ensemble.bin", "ensemble.bin.json", "density.json"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()


def test_jacobian_command(tmp_path):
    out = tmp_path / "j"
    assert main(["--config", str(CONFIGS / "jacobian.yaml"), "--out", str(out), "jacobian"]) == 0
    rank = json.loads((out / "rank.json").read_text())
    assert rank["rank"] == rank["dim_F"] == 4
    assert (out / "jacobian.csv").read_text().startswith("row,")
    sweep = (CONFIGS / "jacobian.yaml").read_text().replace("k: 6", "k_max: 4")
    assert main(["--config", _cfg(tmp_path, sweep), "--out", str(tmp_path / "s"),
                 "jacobian"]) == 0
    coll = (CONFIGS / "jacobian.yaml").read_text().replace(
        'generator: "(1,0),(1,1)"', 'generator: "(1,0),(2,0)"')
    assert main(["--config", _cfg(tmp_path, coll, "coll.yaml"), "--out", str(tmp_path / "c"),
                 "jacobian"]) == 1


def test_support_and_tv_commands(tmp_path):
    sup = SMALL_KICK + "support: {radius: 0.5, per_axis: 3, eps: 0.3}\n"
    assert main(["--config", _cfg(tmp_path, sup), "--out", str(tmp_path / "s"),
                 "support"]) == 0
    doc = json.loads((tmp_path / "s" / "support.json").read_text())
    assert len(doc["targets"]) == 9 and doc["all_positive"]
    tv = SMALL_KICK.replace("F: [\"(1,0)\", \"(0,1)\"]", "F: [\"(1,0)\"]") + \
        "tv: {direction: \"(1,0)\", amplitudes: [0.8, 0.4], n_boot: 20, threshold: 0.9}\n"
    code = main(["--config", _cfg(tmp_path, tv, "tv.yaml"), "--out", str(tmp_path / "t"), "tv"])
    assert code in (0, 1)
    doc = json.loads((tmp_path / "t" / "tv.json").read_text())
    assert [r["amplitude"] for r in doc["rows"]] == [0.8, 0.4]
    bad = tv.replace('direction: "(1,0)"', 'direction: "(5,0)"')
    assert main(["--config", _cfg(tmp_path, bad, "bad.yaml"), "--out", str(tmp_path / "b"),
                 "tv"]) == 2


def test_stationary_command(tmp_path):
    st = SMALL_KICK + "stationary: {burn_in: 10, k_max: 60, stride: 1, slope_tol: 0.5}\n"
    code = main(["--config", _cfg(tmp_path, st), "--out", str(tmp_path / "s"), "stationary"])
    assert code in (0, 1)
    rep = json.loads((tmp_path / "s" / "stationary.json").read_text())
    assert rep["n"] == 51 and rep["dependent_rows"] is True


def test_numerical_failure_exit_code(tmp_path):
    blow = """
physics: {nu: 0.001, M: 4, dt: 1.0}
model: {kind: kick, T: 1.0}
law: {ids: ["(1,0)"], b: [0.0]}
projection: {F: ["(1,0)"]}
run: {t: 50.0, u0: {"(1,0)": 1.0e4, "(1,1)": 1.0e4, "(2,1)": 1.0e4, "(0,1)": 1.0e4}}
"""
    out = tmp_path / "x"
    assert main(["--config", _cfg(tmp_path, blow), "--out", str(out), "simulate"]) == 3
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == 3
