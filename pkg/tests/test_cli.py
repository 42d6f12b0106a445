import csv
import hashlib
import json

import numpy as np
import pytest

from mplab import __version__
from mplab.cli import Config, main, slower_decay
from mplab.errors import ConfigError
from mplab.io import load


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("MPLAB_OUT_DIR", str(tmp_path))
    return tmp_path


def manifest(outdir):
    return json.loads((outdir / "manifest.json").read_text())


def check_digests(m):
    assert m["outputs"], "expected at least one output file"
    for entry in m["outputs"]:
        with open(entry["path"], "rb") as fh:
            assert hashlib.sha256(fh.read()).hexdigest() == entry["sha256"]


def test_state_build(outdir):
    assert main(["state", "build", "--lambda", "0.5", "--n", "6", "--out", "s.bin"]) == 0
    m = manifest(outdir)
    assert m["command"] == "state build" and m["library_version"] == __version__
    assert set(m["results"]) >= {"lambda", "n", "leading_eigenvalue", "gap", "residual"}
    check_digests(m)
    rho = load(outdir / "s.bin")
    assert rho.shape == (64, 64) and abs(np.trace(rho) - 1) < 1e-12


def test_state_build_both_branches_at_zero(outdir):
    assert main(["state", "build", "--lambda", "0", "--n", "6", "--branch", "both",
                 "--out", "z.bin"]) == 0
    assert (outdir / "z_trivial.bin").exists() and (outdir / "z_nontrivial.bin").exists()
    assert len(manifest(outdir)["outputs"]) == 2


def test_branch_mismatch_exit_code(outdir):
    assert main(["state", "build", "--lambda", "0.5", "--n", "6", "--branch", "nontrivial"]) == 2
    m = manifest(outdir)
    assert m["status"] == "error" and m["error"]["code"] == "branch_mismatch"


def test_scale_and_validation_exit_codes(outdir):
    assert main(["state", "build", "--lambda", "0.5", "--n", "16"]) == 4
    assert manifest(outdir)["error"]["code"] == "scale_too_large"
    assert main(["circuit", "verify", "--which", "trivial", "--n", "7"]) == 2
    assert main(["state", "build", "--lambda", "2", "--n", "6"]) == 2
    assert manifest(outdir)["error"]["code"] == "out_of_range"
    assert main(["nonsense"]) == 2
    assert manifest(outdir)["error"]["code"] == "usage_error"


def test_circuit_apply_roundtrip(outdir):
    main(["state", "build", "--lambda", "-0.5", "--n", "6", "--out", "in.bin"])
    assert main(["circuit", "apply", "--which", "nontrivial", "--n", "6", "--in",
                 str(outdir / "in.bin"), "--out", "out.bin"]) == 0
    m = manifest(outdir)
    assert m["results"]["distance_to_fixed_point"] < 1e-9
    check_digests(m)


def test_circuit_verify(outdir, capsys):
    assert main(["circuit", "verify", "--which", "trivial", "--n", "6"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert manifest(outdir)["all_passed"]


def test_recover_report(outdir):
    assert main(["recover", "--lambda", "0.8", "--n", "6", "--r", "2", "--out", "rep.json"]) == 0
    rep = json.loads((outdir / "rep.json").read_text())
    assert rep["staggered_order"] == "ascending"
    assert [row["r"] for row in rep["per_radius"]] == [1, 2]
    assert all("choi_min_eigenvalue" in c for c in rep["per_radius"][0]["channels"])
    check_digests(manifest(outdir))


def test_diag_cmi_csv_and_sidecar(outdir):
    assert main(["diag", "cmi", "--lambda", "0.5", "--n", "8", "--out", "c.csv"]) == 0
    with open(outdir / "c.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["abscissa", "value"] and len(rows) >= 3
    assert float(rows[1][1]) > float(rows[2][1]) > 0
    side = json.loads((outdir / "c.json").read_text())
    assert {"fits", "markov_length", "classification"} <= set(side)
    assert len(manifest(outdir)["outputs"]) == 2


def test_diag_rcmi_branch_offset(outdir):
    assert main(["diag", "rcmi", "--lambda", "1", "--n", "8", "--branch", "trivial",
                 "--out", "r.csv"]) == 0
    side = json.loads((outdir / "r.json").read_text())
    assert side["alpha"] == 2.0
    assert np.allclose(side["series"]["values"], np.log(2), atol=1e-8)


def test_diag_sweep(outdir):
    assert main(["diag", "sweep", "--kind", "corr", "--lambdas", "0.2,0.8", "--n", "8",
                 "--out", "sw", "--threads", "2"]) == 0
    assert (outdir / "sw" / "corr_lambda0.2.csv").exists()
    assert len(json.loads((outdir / "sw" / "corr_sweep.json").read_text())["series"]) == 2


def test_zn_verify_reports_identity_span(outdir, capsys):
    assert main(["zn", "verify", "--order", "2"]) == 1  # the g = 0 span row fails
    m = manifest(outdir)
    failed = [c["name"] for c in m["checks"] if not c["passed"]]
    assert failed == ["span_rank_g0"]


def test_reproduce_fig3_is_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv("MPLAB_OUT_DIR", str(tmp_path))
    args = ["reproduce", "fig3", "--n", "8", "--seed", "7"]
    main(args + ["--out", "a", "--threads", "1"])
    main(args + ["--out", "b", "--threads", "4"])
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_reproduce_fig4_small(outdir):
    assert main(["reproduce", "fig4", "--n", "8", "--lambdas", "0.5,0.8"]) == 0
    assert (outdir / "fig4" / "fig4_rcmi2_lambda0.5.csv").exists()


def test_config_file(outdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"defaults": {"n": 6, "lambda": 0.8},
                               "tolerances": {"exact_map": 1e-8},
                               "output_dir": str(tmp_path / "ignored")}))
    assert main(["state", "build", "--config", str(cfg)]) == 0
    m = manifest(outdir)  # the environment variable wins over output_dir
    assert m["parameters"]["n"] == 6 and m["tolerances"]["exact_map"] == 1e-8


def test_config_validation():
    with pytest.raises(ConfigError):
        Config.from_dict({"defaults": {}, "colour": 1})
    with pytest.raises(ConfigError):
        Config.from_dict({"tolerances": {"trace": -1}})
    with pytest.raises(ConfigError):
        Config.from_dict({"tolerances": {"nonsense": 1e-3}})
    with pytest.raises(ConfigError):
        Config.from_dict({"defaults": {"lambd": 0.4}})
    assert Config.from_dict({"sweeps": {"lambdas": [0.1]}}).sweeps["lambdas"] == [0.1]


def test_bad_config_writes_manifest(outdir, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"defaults": {"n": 6}, "extra": 1}')
    assert main(["state", "build", "--config", str(cfg)]) == 2
    assert manifest(outdir)["error"]["code"] == "config_error"


def test_slower_decay_helper():
    assert slower_decay([0, 0.1, 0, 0.05], [0, 0.01, 0, 0.001], [1, 2, 3, 4])
    assert not slower_decay([0, 0.1, 0, 0.0001], [0, 0.01, 0, 0.001], [1, 2, 3, 4])
