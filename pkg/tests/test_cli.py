import csv
import hashlib

import pytest

from tracechain import cli


def run_cli(args):
    return cli.main(args)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_outputs(tmp_path):
    out = tmp_path / "sim"
    assert run_cli(["simulate", "--out", str(out), "--hours", "0.5", "--seed", "3",
                    "--reps", "1"]) == 0
    for name in ("chain.dump", "chain_index.csv", "blocks.csv",
                 "snapshots.csv", "rounds.csv"):
        assert (out / name).exists(), name
    index = read_csv(out / "chain_index.csv")
    assert len(index) == 6  # 0.5 h at 5-minute blocks
    assert index[0]["tx_count"] != "0"  # registrations land in block 1


def test_simulate_is_reproducible(tmp_path):
    digests = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert run_cli(["simulate", "--out", str(out), "--hours", "0.5",
                        "--seed", "3", "--reps", "1"]) == 0
        digests.append(hashlib.sha256((out / "chain.dump").read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_robustness_rows(tmp_path):
    out = tmp_path / "rb"
    code = run_cli(["robustness", "--out", str(out), "--reps", "2",
                    "--p", "0.2,0.4", "--hours", "0.25", "--seed", "1"])
    assert code == 0
    rows = read_csv(out / "robustness.csv")
    # 2 p-values x 2 witness modes x 2 seeds
    assert len(rows) == 8
    assert {r["seed"] for r in rows} == {"1", "2"}
    summary = read_csv(out / "robustness_summary.csv")
    assert len(summary) == 4


def test_robustness_rejects_bad_p(tmp_path):
    assert run_cli(["robustness", "--out", str(tmp_path), "--p", "1.5"]) == 2


def test_unknown_config_key_exits_nonzero(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("difficulty = 3\n")
    code = run_cli(["simulate", "--out", str(tmp_path / "o"), "--config", str(bad)])
    assert code == 2


def test_config_file_and_flag_precedence(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("hours = 99\nseed = 5\n")
    out = tmp_path / "sim"
    # --hours must beat the file value; 0.25 h -> 3 blocks
    assert run_cli(["simulate", "--config", str(config), "--out", str(out),
                    "--hours", "0.25", "--reps", "1"]) == 0
    assert len(read_csv(out / "chain_index.csv")) == 3


def test_env_overrides_config(tmp_path, monkeypatch):
    config = tmp_path / "run.cfg"
    config.write_text("hours = 99\n")
    monkeypatch.setenv("TRACECHAIN_HOURS", "0.25")
    out = tmp_path / "sim"
    assert run_cli(["simulate", "--config", str(config), "--out", str(out),
                    "--reps", "1"]) == 0
    assert len(read_csv(out / "chain_index.csv")) == 3


def test_attack_single_strategy(tmp_path):
    out = tmp_path / "atk"
    assert run_cli(["attack", "--out", str(out), "--reps", "1", "--height", "24",
                    "--attack", "fake_contacts", "--colluders", "5"]) == 0
    summary = read_csv(out / "attack_summary.csv")
    assert len(summary) == 1
    assert summary[0]["strategy"] == "fake_contacts"
    assert summary[0]["false_tuples_persisted"] == "0"


def test_decentrality_small(tmp_path, capsys):
    out = tmp_path / "dec"
    assert run_cli(["decentrality", "--out", str(out), "--reps", "2",
                    "--height", "30", "--seed", "0"]) == 0
    rows = read_csv(out / "decentrality.csv")
    assert {r["mode"] for r in rows} == {"bdct", "dpos"}
    assert (out / "lorenz_balance.csv").exists()
    assert (out / "stake_shares.csv").exists()
    assert "welch" in capsys.readouterr().out


def test_storage_small(tmp_path):
    out = tmp_path / "sto"
    assert run_cli(["storage", "--out", str(out), "--hours", "12", "--reps", "1"]) == 0
    rows = read_csv(out / "storage.csv")
    components = [r["component"] for r in rows]
    assert components == ["header_per_hour", "sparse_per_hour", "medium_per_hour",
                          "crowded_per_hour", "total_per_hour", "total_per_day"]
    by_component = {r["component"]: r for r in rows}
    assert by_component["header_per_hour"]["analytic_bytes"] == "936"
    assert by_component["total_per_hour"]["analytic_bytes"] == "40844"
