import csv
import json

import pytest
from scipy.special import ive

from rcm.cli import main

BASE = "[run]\nseed = 5\nreplicas = 2\n[field]\nmodel = constant\n"


def _write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_kernel_subcommand_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, BASE + "[kernel]\nt = 1\nanchor = 0\n")
    out = tmp_path / "out"
    assert main(["kernel", "--config", cfg, "--out", str(out)]) == 0
    rows = [l for l in (out / "series_kernel.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "x1,value"
    vals = {int(a): float(b) for a, b in (r.split(",") for r in rows[1:])}
    assert vals[2] == pytest.approx(ive(2, 2.0), abs=1e-12)
    report = json.loads((out / "report.json").read_text())
    assert report["pass"] is True and report["reports"][0]["name"] == "kernel"
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["files"]) == {"series_kernel.csv", "report.json"}
    assert manifest["seed"] == 5 and len(manifest["config_sha256"]) == 64
    assert "PASS" in capsys.readouterr().out


def test_column_direction(tmp_path):
    cfg = _write(tmp_path, BASE + "[kernel]\nt = 1\ndirection = col\n")
    assert main(["kernel", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert "# direction=col" in (tmp_path / "o" / "series_kernel.csv").read_text()


def test_nash_series_csv(tmp_path):
    cfg = _write(tmp_path, BASE + "[nash]\nt_grid = 4, 8, 16, 32\n")
    out = tmp_path / "o"
    assert main(["nash", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "series_nash.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["statistic", "t", "value", "stderr", "replicas", "seed"]
    assert [float(r["t"]) for r in rows] == [4.0, 8.0, 16.0, 32.0]
    assert all(r["seed"] == "5" for r in rows)


def test_sample_dump_paths(tmp_path):
    cfg = _write(tmp_path, BASE + "[sample]\npaths = 20000\ndisplacement_T = 4, 8, 16\n"
                 "displacement_replicas = 10\ndisplacement_paths = 20\n")
    out = tmp_path / "o"
    main(["sample", "--config", cfg, "--out", str(out), "--dump-paths"])
    assert (out / "paths.csv").read_text().startswith("replica,path,n,J,y1")
    assert "paths.csv" in json.loads((out / "manifest.json").read_text())["files"]


def test_failure_exit_code(tmp_path):
    # 200 paths cannot reach TV < 0.01
    cfg = _write(tmp_path, BASE + "[sample]\npaths = 200\ndisplacement_T = 4, 8, 16\n"
                 "displacement_replicas = 4\ndisplacement_paths = 20\n")
    assert main(["sample", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert json.loads((tmp_path / "o" / "report.json").read_text())["pass"] is False


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "[run]\nreplicas = 2\n")
    assert main(["nash", "--config", cfg]) == 2
    assert "run.seed" in capsys.readouterr().err
    assert main(["nash", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["nash", "--config", cfg, "--workers", "0"]) == 2


def test_usage_error_exit_code(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["bogus", "--config", "x.ini"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["nash"])
    assert exc.value.code == 2


def test_runtime_error_exit_code(tmp_path, capsys):
    # Green distances below 2 are rejected by the check itself, not by the parser
    cfg = _write(tmp_path, BASE + "[green]\ndistances = 1, 2, 3\nradius = 6\n")
    assert main(["green", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "runtime error" in capsys.readouterr().err
