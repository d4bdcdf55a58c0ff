import csv
import json
import subprocess
import sys

import pytest

from fedchain.chain import export_ledger, import_ledger
from fedchain.cli import SweepSpec, main

TINY_DATA = {
    "kind": "synth",
    "n_classes": 5,
    "n_features": 16,
    "n_samples": 600,
    "eval_count": 100,
    "shards_per_client": 2,
}


@pytest.fixture()
def tiny_config(tmp_path):
    cfg = {"t_sum": 14.0, "beta": 6.0, "k": 2, "data": TINY_DATA}
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_bounds_eval(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["--out", str(out), "bounds", "--eval", "4"])
    assert code == 0
    assert "bound at k=4" in capsys.readouterr().out
    rows = _read_csv(out / "bounds_curve.csv")
    assert rows[0] == ["k", "tau", "bound"]
    assert len(rows) > 2
    verdict = json.loads((out / "bounds_verdict.json").read_text())
    assert verdict["mode"] == "eval" and verdict["k"] == 4
    assert (out / "manifest.json").exists()


def test_bounds_optimize_and_scan(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["--out", str(out), "bounds"]) == 0
    verdict = json.loads((out / "bounds_verdict.json").read_text())
    assert verdict["mode"] == "optimize" and verdict["ok"]
    assert verdict["convexity_violation_at"] is None

    # explicit flag is the same mode as the default
    assert main(["--out", str(out), "bounds", "--optimize"]) == 0
    explicit = json.loads((out / "bounds_verdict.json").read_text())
    assert explicit == verdict

    assert main([
        "--out", str(out), "bounds",
        "--scan", "axis=divergence,grid=0.5:1:2",
    ]) == 0
    verdict = json.loads((out / "bounds_verdict.json").read_text())
    assert verdict["optima"] == sorted(verdict["optima"])
    capsys.readouterr()


def test_bounds_lazy_flag(tmp_path, capsys):
    out = tmp_path / "o"
    code = main([
        "--out", str(out), "bounds",
        "--lazy", "theta=0.1,sigma2=0.05,ratio=0.2",
        "--eval", "4",
    ])
    assert code == 0
    base_out = tmp_path / "b"
    main(["--out", str(base_out), "bounds", "--eval", "4"])
    lazy_v = json.loads((out / "bounds_verdict.json").read_text())["bound"]
    base_v = json.loads((base_out / "bounds_verdict.json").read_text())["bound"]
    assert lazy_v > base_v
    capsys.readouterr()


def test_simulate_outputs(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    code = main(["--config", tiny_config, "--out", str(out), "simulate"])
    assert code == 0
    rows = _read_csv(out / "rounds.csv")
    assert rows[0] == ["k", "tau", "clock", "loss", "accuracy",
                       "ledger_height", "theta_hat"]
    assert len(rows) == 3  # header + one row per round
    assert rows[2][0] == "2" and rows[2][2] == "14.0"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rounds"] == 2 and summary["ledger_height"] == 2
    assert summary["leftover_time"] == 0.0
    ledger, registry = import_ledger(out / "ledger.bin")
    assert len(ledger.blocks) == 3
    capsys.readouterr()


def test_simulate_checkpoints(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    main(["--config", tiny_config, "--out", str(out),
          "simulate", "--checkpoint-every", "1"])
    assert (out / "round_0001.weights").exists()
    assert (out / "round_0002.weights").exists()
    capsys.readouterr()


def test_simulate_reproducible(tmp_path, tiny_config, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["--config", tiny_config, "--seed", "5", "--out", str(a), "simulate"])
    main(["--config", tiny_config, "--seed", "5", "--out", str(b), "simulate"])
    assert (a / "rounds.csv").read_bytes() == (b / "rounds.csv").read_bytes()
    assert (a / "ledger.bin").read_bytes() == (b / "ledger.bin").read_bytes()
    capsys.readouterr()


def test_validate_chain_round_trip(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    main(["--config", tiny_config, "--out", str(out), "simulate"])
    assert main(["validate-chain", "--chain", str(out / "ledger.bin")]) == 0
    ledger, registry = import_ledger(out / "ledger.bin")
    tx = ledger.blocks[1].txs[0]
    object.__setattr__(tx, "payload", b"\x00" + tx.payload[1:])
    export_ledger(ledger, registry, out / "tampered.bin")
    assert main(["validate-chain", "--chain", str(out / "tampered.bin")]) == 3
    text = capsys.readouterr().out
    assert "violation at height 1" in text


def test_validate_chain_missing_file(capsys):
    assert main(["validate-chain", "--chain", "/nonexistent/ledger.bin"]) == 2
    capsys.readouterr()


def test_sweep_rows_and_argmin(tmp_path, tiny_config, capsys):
    out = tmp_path / "sw"
    code = main([
        "--config", tiny_config, "--out", str(out),
        "sweep", "--axis", "k", "--grid", "1:2", "--repetitions", "2",
    ])
    assert code == 0
    rows = _read_csv(out / "sweep.csv")
    header, data = rows[0], rows[1:]
    assert len(data) == 4
    argmin_col = header.index("is_argmin")
    rep_col = header.index("repetition")
    for rep in ("0", "1"):
        flags = [r[argmin_col] for r in data if r[rep_col] == rep]
        assert flags.count("1") == 1
    # repetitions share the seed: groups identical up to timing
    drop = [header.index("repetition"), header.index("wall_seconds")]
    groups = {}
    for r in data:
        key = [c for i, c in enumerate(r) if i not in drop]
        groups.setdefault(r[rep_col], []).append(key)
    assert groups["0"] == groups["1"]
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert summary["axis"] == "k" and summary["grid"] == [1.0, 2.0]
    assert summary["failures"] == []
    capsys.readouterr()


def test_sweep_parallel_matches_serial(tmp_path, tiny_config, capsys):
    serial, par = tmp_path / "s", tmp_path / "p"
    args = ["--config", tiny_config, "sweep", "--axis", "noise_var",
            "--grid", "0.0:0.1", "--repetitions", "1"]
    main(args[:2] + ["--out", str(serial)] + args[2:])
    main(args[:2] + ["--out", str(par), "--jobs", "2"] + args[2:])
    strip = lambda rows: [r[:-1] for r in rows]  # wall_seconds differs
    assert strip(_read_csv(serial / "sweep.csv")) == strip(_read_csv(par / "sweep.csv"))
    capsys.readouterr()


def test_sweep_failure_marker_row(tmp_path, tiny_config, capsys):
    out = tmp_path / "sf"
    # k=40 cannot fit the 14s budget, k=2 can
    code = main([
        "--config", tiny_config, "--out", str(out),
        "sweep", "--axis", "k", "--grid", "2:40",
    ])
    assert code == 4
    rows = _read_csv(out / "sweep.csv")
    header, data = rows[0], rows[1:]
    status_col = header.index("status")
    k_col = header.index("k")
    assert len(data) == 2
    assert data[0][status_col] == "ok" and data[0][k_col] == "2"
    assert data[1][status_col].startswith("error:") and data[1][k_col] == ""
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert len(summary["failures"]) == 1
    assert summary["failures"][0]["value"] == 40.0
    capsys.readouterr()


def test_sweep_lazy_axis_carries_bound(tmp_path, tiny_config, capsys):
    out = tmp_path / "sw"
    code = main([
        "--config", tiny_config, "--out", str(out),
        "sweep", "--axis", "lazy_ratio", "--grid", "0.0:0.2",
    ])
    assert code == 0
    rows = _read_csv(out / "sweep.csv")
    bound_col = rows[0].index("bound")
    assert all(r[bound_col] != "" for r in rows[1:])
    capsys.readouterr()


def test_compare_bound_tiny(tmp_path, tiny_config, capsys):
    out = tmp_path / "cb"
    code = main(["--config", tiny_config, "--out", str(out), "compare-bound"])
    assert code == 0
    report = json.loads((out / "compare_bound.json").read_text())
    assert report["ok"] and report["dominance_fraction"] == 1.0
    # full dominance makes the gap at the recommended K non-negative
    assert report["relative_gap_at_opt"] is not None
    assert report["relative_gap_at_opt"] >= 0.0
    rows = _read_csv(out / "compare_bound.csv")
    assert rows[0] == ["k", "tau", "bound", "empirical_gap", "dominated"]
    capsys.readouterr()


def test_config_error_exit_codes(tmp_path, capsys):
    assert main(["--config", "/nope.json", "--out", str(tmp_path), "bounds"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["--config", str(bad), "--out", str(tmp_path / "x"), "bounds"]) == 2
    hw = tmp_path / "hw.json"
    hw.write_text(json.dumps({
        "hardware": {"kappa": 1, "chi": 1e7, "f": 1e6, "rho": 1e3, "d_i": 20},
        "t_sum": 1000.0,
    }))
    assert main([
        "--config", str(hw), "--out", str(tmp_path / "y"),
        "sweep", "--axis", "alpha", "--grid", "1:2",
    ]) == 2
    capsys.readouterr()


def test_manifest_contents(tmp_path, tiny_config, capsys):
    out = tmp_path / "m"
    main(["--config", tiny_config, "--seed", "77", "--out", str(out), "bounds"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 77
    assert manifest["command"] == "bounds"
    assert manifest["config"]["t_sum"] == 14.0
    assert manifest["deterministic_mining"] is True
    assert "version" in manifest
    capsys.readouterr()


def test_sweep_spec_validation(tiny_config):
    cfg = json.loads(open(tiny_config).read())
    with pytest.raises(ValueError):
        SweepSpec(axis="bogus", grid=(1.0,), repetitions=1,
                  base_config=cfg, seed=0)
    with pytest.raises(ValueError):
        SweepSpec(axis="k", grid=(), repetitions=1, base_config=cfg, seed=0)
    with pytest.raises(ValueError):
        SweepSpec(axis="k", grid=(1.0,), repetitions=0, base_config=cfg, seed=0)


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "fedchain.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "compare-bound" in proc.stdout
