import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from fsl.assembly import read_operator
from fsl.cli import ConfigError, main, parse_alpha_range, parse_config
from fsl.domain import make_domain
from fsl.laws import synthetic_sweep, write_sweep_csv


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_parse_sweep_example():
    cfg = parse_config(
        "sweep --domain interval:-1,1 --alphas 0.4:1.8:0.2 --k 5 --h 0.02,0.01,0.005 --out s.csv".split()
    )
    assert cfg.command == "sweep"
    np.testing.assert_allclose(cfg.alphas, [0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8])
    assert cfg.k == 5 and cfg.h == [0.02, 0.01, 0.005]


def test_alpha_range_endpoints_rejected():
    with pytest.raises(ConfigError, match="0:2:0.5"):
        parse_alpha_range("0:2:0.5")
    assert parse_alpha_range("0.5,1.5") == [0.5, 1.5]


def test_flag_overrides_config_file(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# sweep settings\ndomain = interval:-1,1\nalphas = 0.5:1.5:0.5\nk = 3\nh = 0.1,0.05,0.025\nout = x.csv\n")
    cfg = parse_config(["sweep", "--config", str(conf), "--k", "2"])
    assert cfg.k == 2
    assert cfg.alphas == [0.5, 1.0, 1.5]


def test_config_errors_name_token(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("domain = interval:-1,1\ncolour = blue\n")
    with pytest.raises(ConfigError, match="colour"):
        parse_config(["sweep", "--config", str(conf)])
    with pytest.raises(ConfigError, match="0.1x"):
        parse_config("sweep --domain interval:-1,1 --alphas 1 --h 0.1x,0.05,0.025 --out s.csv".split())
    with pytest.raises(ConfigError, match="out"):
        parse_config("sweep --domain interval:-1,1 --alphas 1 --h 0.1,0.05,0.025".split())
    with pytest.raises(ConfigError, match="torus"):
        parse_config("sweep --domain torus:1 --alphas 1 --h 0.1,0.05,0.025 --out s.csv".split())


def test_main_reports_config_error(capsys):
    assert main(["sweep", "--alphas", "0:2:0.5"]) == 2
    assert "0:2:0.5" in capsys.readouterr().err


def test_assemble_writes_operator_and_manifest(tmp_path):
    out = tmp_path / "op.bin"
    spec = tmp_path / "spec.csv"
    argv = f"assemble --domain box:0,0,1,1 --alpha 1.2 --h 0.125 --k 3 --spectrum {spec} --out {out} --threads 1"
    assert main(argv.split()) == 0
    op = read_operator(out)
    assert op.d == 2 and op.matrix.shape == (64, 64)
    assert len(spec.read_text().splitlines()) == 4
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["outputs"] == {"op.bin": _sha(out), "spec.csv": _sha(spec)}
    assert manifest["config"]["alphas"] == [1.2]
    assert {"version", "config", "wall_time_s", "outputs"} <= set(manifest)
    assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]


def test_sweep_then_verify(tmp_path, capsys):
    table = tmp_path / "sweep.csv"
    argv = f"sweep --domain interval:-1,1 --alphas 0.6:1.4:0.4 --k 2 --h 0.1,0.05,0.025 --out {table}"
    assert main(argv.split()) == 0
    report = tmp_path / "verify.jsonl"
    assert main(["verify", "--sweep", str(table), "--out", str(report)]) == 0
    rows = [json.loads(line) for line in report.read_text().splitlines()]
    assert rows and all(r["pass"] for r in rows)
    assert {r["law"] for r in rows} == {"power_monotonicity", "upper_bound", "sandwich", "continuity"}
    csv_out = tmp_path / "verify.csv"
    assert main(["verify", "--sweep", str(table), "--format", "csv", "--out", str(csv_out)]) == 0
    assert csv_out.read_text().splitlines()[0] == "law,instance,margin,pass"


def test_verify_fails_on_violating_table(tmp_path, capsys):
    table = tmp_path / "bad.csv"
    sweep = synthetic_sweep(make_domain("interval", -1, 1), [0.5, 1.0, 1.5], [[1.0], [0.9], [1.3]])
    write_sweep_csv(table, sweep)
    assert main(["verify", "--sweep", str(table), "--laws", "power_monotonicity"]) == 1
    out = capsys.readouterr()
    assert "FAIL power_monotonicity" in out.err
    assert any(not json.loads(line)["pass"] for line in out.out.splitlines())


def test_verify_missing_table_is_error(tmp_path):
    assert main(["verify", "--sweep", str(tmp_path / "none.csv")]) == 2


def test_simulate_reproducible(tmp_path):
    outs = []
    for j in range(2):
        out = tmp_path / f"run{j}" / "surv.csv"
        argv = f"simulate --domain interval:-1,1 --alpha 1 --x 0 --paths 3000 --dt 0.01 --tmax 2 --tpoints 11 --seed 5 --out {out}"
        assert main(argv.split() + ["--threads", str(1 + 3 * j)]) == 0
        outs.append(out)
    assert _sha(outs[0]) == _sha(outs[1])
    m0, m1 = (json.loads((o.parent / "manifest.json").read_text()) for o in outs)
    assert m0["outputs"] == m1["outputs"]
    assert {k: v for k, v in m0["config"].items() if k != "out"} == {k: v for k, v in m1["config"].items() if k != "out"}
    lines = outs[0].read_text().splitlines()
    assert lines[0] == "t,p_hat,se,alive,censored" and len(lines) == 12


def test_symbol_check(tmp_path):
    out = tmp_path / "sym.csv"
    assert main(f"symbol-check --alphas 1 --h 0.0625 --xi 1 --truncation 16 --out {out}".split()) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "alpha,h,xi,d,truncation,error"
    assert float(rows[1].split(",")[-1]) < 0.05


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fsl.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("fsl ")
