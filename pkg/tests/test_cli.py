"""Command-line interface: run, gen-scenario, validate."""

import pytest

from greenfed.cli import main

CONFIG_TEMPLATE = """\
[simulation]
rounds = 2
num_clients = 8
seed = 0
round_window_steps = 6
trace_start_step = 120   ; mid-morning, so domains have output

[selection]
min_clients = 3
max_fraction = 0.5
forecast_horizon = 6

[optimizer]
learning_rate = 0.05
epochs = 1
batch_size = 10

[model]
hidden_channels = 4

[data]
dataset = synthetic
num_classes = 4
train_size = 160
test_size = 60
image_size = 8
partitioner = balanced
labels_per_user = 2

[traces]
solar = traces/solar.csv
spare = traces/spare.csv
mapping = traces/clients.csv
"""


@pytest.fixture
def workdir(tmp_path):
    assert main([
        "gen-scenario", "--domains", "2", "--clients", "8", "--days", "1",
        "--seed", "0", "--out", str(tmp_path / "traces"),
    ]) == 0
    (tmp_path / "run.ini").write_text(CONFIG_TEMPLATE)
    return tmp_path


class TestRun:
    def test_single_mode_outputs(self, workdir, capsys):
        out = workdir / "out"
        rc = main(["run", "--config", str(workdir / "run.ini"), "--out", str(out)])
        assert rc == 0
        assert (out / "rounds_cama_seed0.csv").exists()
        assert (out / "participants_cama_seed0.csv").exists()
        rounds = (out / "rounds_cama_seed0.csv").read_text().splitlines()
        assert rounds[0] == "round,accuracy,cumulative_kwh,num_selected,warning"
        assert len(rounds) == 3  # header + 2 rounds
        parts = (out / "participants_cama_seed0.csv").read_text().splitlines()
        assert parts[0] == "round,client_id,rate,batches,energy_wh"
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == (
            "mode,seed,max_accuracy,final_accuracy,mean_accuracy,std_accuracy,total_kwh"
        )
        assert len(summary) == 2 and summary[1].startswith("cama,0,")

    def test_both_modes_multi_seed(self, workdir):
        out = workdir / "out"
        rc = main([
            "run", "--config", str(workdir / "run.ini"),
            "--mode", "both", "--seeds", "0,1", "--out", str(out),
        ])
        assert rc == 0
        for mode in ("cama", "fedzero-baseline"):
            for seed in (0, 1):
                assert (out / f"rounds_{mode}_seed{seed}.csv").exists()
                assert (out / f"participants_{mode}_seed{seed}.csv").exists()
        assert len((out / "summary.csv").read_text().splitlines()) == 5

    def test_repeat_runs_byte_identical(self, workdir):
        for tag in ("a", "b"):
            assert main([
                "run", "--config", str(workdir / "run.ini"), "--out", str(workdir / tag),
            ]) == 0
        for name in ("rounds_cama_seed0.csv", "participants_cama_seed0.csv", "summary.csv"):
            assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()

    def test_empty_seed_list(self, workdir):
        rc = main([
            "run", "--config", str(workdir / "run.ini"), "--seeds", ",", "--out",
            str(workdir / "out"),
        ])
        assert rc == 2

    def test_missing_config(self, tmp_path):
        rc = main(["run", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)])
        assert rc == 1

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--bogus"])
        assert exc.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestGenScenario:
    def test_writes_trace_files(self, tmp_path):
        out = tmp_path / "tr"
        rc = main([
            "gen-scenario", "--domains", "3", "--clients", "5", "--days", "1",
            "--out", str(out),
        ])
        assert rc == 0
        solar = (out / "solar.csv").read_text().splitlines()
        assert solar[0] == "domain_id,timestep,energy_wh"
        assert len(solar) == 1 + 3 * 288
        spare = (out / "spare.csv").read_text().splitlines()
        assert spare[0] == "client_id,timestep,batches"
        assert len(spare) == 1 + 5 * 288
        clients = (out / "clients.csv").read_text().splitlines()
        assert clients[0] == "client_id,domain_id,hardware"
        assert len(clients) == 6

    def test_deterministic(self, tmp_path):
        for tag in ("a", "b"):
            assert main([
                "gen-scenario", "--domains", "2", "--clients", "4", "--days", "1",
                "--seed", "7", "--out", str(tmp_path / tag),
            ]) == 0
        for name in ("solar.csv", "spare.csv", "clients.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_peak_above_cap_rejected(self, tmp_path, capsys):
        rc = main(["gen-scenario", "--peak", "900", "--out", str(tmp_path)])
        assert rc == 2
        assert "--peak" in capsys.readouterr().err

    def test_nonpositive_counts_rejected(self, tmp_path):
        rc = main(["gen-scenario", "--domains", "0", "--out", str(tmp_path)])
        assert rc == 2


class TestValidate:
    def test_ok(self, workdir, capsys):
        rc = main(["validate", "--config", str(workdir / "run.ini")])
        assert rc == 0
        assert capsys.readouterr().out.strip() == "OK"

    def test_missing_config_reported(self, tmp_path, capsys):
        rc = main(["validate", "--config", str(tmp_path / "nope.ini")])
        assert rc == 0
        assert capsys.readouterr().out.startswith("FAIL config:")

    def test_short_trace_reported(self, workdir, capsys):
        cfg = CONFIG_TEMPLATE.replace("rounds = 2", "rounds = 100")
        (workdir / "long.ini").write_text(cfg)
        main(["validate", "--config", str(workdir / "long.ini")])
        out = capsys.readouterr().out
        assert "FAIL" in out and "short" in out

    def test_missing_trace_file_reported(self, workdir, capsys):
        cfg = CONFIG_TEMPLATE.replace("traces/solar.csv", "traces/missing.csv")
        (workdir / "bad.ini").write_text(cfg)
        main(["validate", "--config", str(workdir / "bad.ini")])
        assert "FAIL traces:" in capsys.readouterr().out

    def test_bad_dataset_value_reported(self, workdir, capsys):
        cfg = CONFIG_TEMPLATE.replace("dataset = synthetic", "dataset = imagenet")
        (workdir / "bad.ini").write_text(cfg)
        main(["validate", "--config", str(workdir / "bad.ini")])
        assert "FAIL config:" in capsys.readouterr().out
