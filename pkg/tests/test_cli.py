import csv
import json

import numpy as np
import pytest

from hillspec import cli


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
        assert first.startswith("# config=")
        return json.loads(first[len("# config="):]), list(csv.DictReader(fh))


def test_bands_zero_potential(tmp_path, capsys):
    code, out, _ = run(["bands", "--potential", "zero", "--n-max", "4", "--t-points", "32",
                        "--out", str(tmp_path)], capsys)
    assert code == 0
    cfg, rows = read_csv(tmp_path / "bands.csv")
    assert cfg["potential"] == {"name": "zero"}
    # traces follow bands continuously, so compare against the set {(2 pi k + t)^2}
    k = np.arange(-3, 4)
    by_t = {}
    for r in rows:
        t, lam = float(r["t"]), float(r["re_lambda"])
        assert np.min(np.abs((2 * np.pi * k + t) ** 2 - lam)) < 1e-8
        assert abs(float(r["im_lambda"])) < 1e-8
        by_t.setdefault(t, []).append(lam)
    for lams in by_t.values():
        assert len(lams) == 4
    assert (tmp_path / "bands.svg").read_text().startswith("<svg")


def test_critical_v_prints_v2(tmp_path, capsys):
    code, out, _ = run(["critical-v", "--interval", "0.7", "1.0", "--out", str(tmp_path)], capsys)
    assert code == 0
    line = next(s for s in out.splitlines() if s.startswith("V = "))
    assert abs(float(line[4:]) - 0.888437) < 1e-6
    body = json.loads((tmp_path / "critical_v.json").read_text())
    assert body["schema_version"] == cli.SCHEMA_VERSION
    assert body["config"]["options"]["interval"] == [0.7, 1.0]


@pytest.mark.slow
def test_expand_mathieu_gaussian(tmp_path, capsys):
    code, _, _ = run(["expand", "--potential", "mathieu:a=1,b=2", "--function", "gaussian:center=0.5,width=0.1",
                      "--n-max", "16", "--x-points", "11", "--out", str(tmp_path)], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "expansion.json").read_text())["summary"]
    assert summary["residual"] < 1e-3


def test_deterministic_csv(tmp_path, capsys):
    argv = ["discriminant", "--potential", "mathieu:a=1,b=2", "--lam-points", "50"]
    run(argv + ["--out", str(tmp_path / "a")], capsys)
    run(argv + ["--out", str(tmp_path / "a2")], capsys)
    a = (tmp_path / "a" / "discriminant.csv").read_text().splitlines()[1:]
    b = (tmp_path / "a2" / "discriminant.csv").read_text().splitlines()[1:]
    assert a == b


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"potential": {"name": "optical", "V": 0.5}, "n_max": 3, "t_points": 20}))
    code, _, _ = run(["alpha", "--config", str(cfg), "--n-max", "2", "--out", str(tmp_path)], capsys)
    assert code == 0
    echo, rows = read_csv(tmp_path / "alpha.csv")
    assert echo["n_max"] == 2 and echo["t_points"] == 20 and echo["potential"]["V"] == 0.5
    assert {int(r["n"]) for r in rows} == {1, 2}
    assert "<metadata>" in (tmp_path / "alpha.svg").read_text()


def test_env_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    code, _, _ = run(["spectrality", "--potential", "mathieu:a=1,b=2"], capsys)
    assert code == 0
    body = json.loads((tmp_path / "env" / "spectrality.json").read_text())
    assert body["verdict"]["verdict"] == "not-spectral"


def test_alpha_zero_potential_degenerate_node(tmp_path, capsys):
    # t = pi is on the grid, where the free eigenvalues are semisimple doubles
    code, _, _ = run(["alpha", "--potential", "zero", "--n-max", "3", "--t-points", "16",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    _, rows = read_csv(tmp_path / "alpha.csv")
    vals = np.array([float(r["abs_alpha"]) for r in rows])
    assert np.allclose(vals[np.isfinite(vals)], 1.0, atol=1e-10)


@pytest.mark.parametrize("argv, code", [
    (["bands", "--potential", "bogus"], 2),
    (["bands", "--h", "-1"], 2),
    (["bands", "--t-points", "3"], 2),
    (["bands", "--root-tol", "0"], 2),
])
def test_error_json(tmp_path, capsys, argv, code):
    got, _, err = run(argv + ["--out", str(tmp_path)], capsys)
    assert got == code
    body = json.loads(err)
    assert body["status"] == "error" and body["error"] == "ValueError" and body["message"]


def test_verify_subset(tmp_path, capsys):
    code, out, _ = run(["verify", "--only", "1,11", "--out", str(tmp_path)], capsys)
    lines = [s for s in out.splitlines() if s.startswith("[")]
    assert len(lines) == 2 and all(s.startswith("[PASS]") for s in lines)
    assert code == 0
