import csv
import json
import subprocess
import sys

import pytest

from wptsched.cli import main


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gtable(tmp_path):
    assert main(["gtable", "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "gtable.csv")
    assert len(rows) == 10
    assert rows[2]["q=1"] == "3.6667" and rows[2]["q=3"] == "6.0"
    assert main(["gtable", "--mmax", "0", "--out", str(tmp_path)]) == 2


def test_fixed_length(tmp_path, capsys):
    assert main(["fixed-length", "--out", str(tmp_path)]) == 0
    row = _read(tmp_path / "fixed_length.csv")[0]
    assert row["tau_star"] == "19" and float(row["energy"]) == pytest.approx(252.214, abs=1e-3)
    assert main(["fixed-length", "--multiple-of-m", "--out", str(tmp_path)]) == 0
    row = _read(tmp_path / "fixed_length.csv")[0]
    assert row["tau_star"] == "18" and float(row["energy"]) == pytest.approx(252.0)
    assert len(_read(tmp_path / "fixed_length_curve.csv")) == 43


def test_fixed_length_numeric(tmp_path):
    assert main(["fixed-length", "--T", "30", "--xi", "0.8", "--estimator", "LMMSE",
                 "--out", str(tmp_path)]) == 0
    curve = _read(tmp_path / "fixed_length_curve.csv")
    assert len(curve) == 10 and "se" in curve[0]


def test_thresholds(tmp_path):
    assert main(["thresholds", "--T", "30", "--M", "400", "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "thresholds.csv")
    assert len(rows) == 10
    assert rows[-1]["lambda"] == "0.0"
    pol = json.loads((tmp_path / "policy.json").read_text())
    assert pol["N"] == 10
    assert (tmp_path / "value_function.csv").exists()


def test_allocate(tmp_path):
    for mode in ("LCPA", "LPA", "CPA"):
        assert main(["allocate", "--mode", mode, "--T", "30", "--M", "400", "--bins", "100",
                     "--out", str(tmp_path)]) == 0
        s = _read(tmp_path / "allocation_summary.csv")[0]
        assert s["mode"] == mode and float(s["spend"]) <= float(s["P2"]) + 1e-9


def test_compare_and_simulate(tmp_path):
    args = ["--T", "30", "--M", "400", "--bins", "100", "--n-frames", "3000", "--seed", "5"]
    assert main(["compare", "--schemes", "FwoPA,DYN", *args, "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "compare.csv")
    assert [r["scheme"] for r in rows] == ["FwoPA", "DYN"]
    assert (tmp_path / "compare_DYN_kappa.csv").exists()
    assert main(["simulate", "--scheme", "MRT", *args, "--out", str(tmp_path)]) == 0
    assert _read(tmp_path / "simulate.csv")[0]["scheme"] == "MRT"


def test_same_seed_is_byte_identical(tmp_path):
    args = ["compare", "--schemes", "MRT,DYN,LCPA", "--T", "30", "--M", "400", "--bins", "100",
            "--n-frames", "3000", "--seed", "9"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    for name in ("compare.csv", "compare_LCPA_kappa.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"T": 60, "m": 2, "noise_var": 0.5, "out_dir": str(tmp_path / "c")}))
    assert main(["fixed-length", "--config", str(cfg)]) == 0
    row = _read(tmp_path / "c" / "fixed_length.csv")[0]
    from wptsched.fixed_length import optimal_tau
    assert int(row["tau_star"]) == optimal_tau(60, 2, 2, 0.5, multiple_of_m=False)[0]
    assert main(["fixed-length", "--config", str(cfg), "--T", "62",
                 "--out", str(tmp_path / "d")]) == 0
    assert int(_read(tmp_path / "d" / "fixed_length.csv")[0]["tau_star"]) == \
        optimal_tau(62, 2, 2, 0.5, multiple_of_m=False)[0]


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("WPTSCHED_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["gtable"]) == 0
    assert (tmp_path / "env" / "gtable.csv").exists()
    assert main(["gtable", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "gtable.csv").exists()


@pytest.mark.parametrize("argv", [
    ["fixed-length", "--T", "125"],
    ["compare", "--xi", "0.8"],
    ["compare", "--schemes", "FOO"],
    ["thresholds", "--xi", "0.5"],
])
def test_config_errors_exit_2(tmp_path, argv, capsys):
    assert main([*argv, "--out", str(tmp_path)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["fixed-length", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text(json.dumps({"T": 126, "wrong_key": 1}))
    assert main(["fixed-length", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_usage_errors_exit_2(tmp_path):
    for argv in (["nope"], ["gtable", "--mmax", "x"], []):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "wptsched", "gtable", "--mmax", "3",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    res = subprocess.run([sys.executable, "-m", "wptsched", "fixed-length", "--T", "125",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 2


def test_numerical_failure_exit_3(tmp_path, monkeypatch, capsys):
    from wptsched import cli
    from wptsched.errors import NumericalError

    def boom(*a, **k):
        raise NumericalError("value function is not finite at slot 3")

    monkeypatch.setattr(cli, "solve_bellman", boom)
    assert main(["thresholds", "--T", "30", "--out", str(tmp_path)]) == 3
    assert "numerical failure" in capsys.readouterr().err
