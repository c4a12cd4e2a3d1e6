import json
from pathlib import Path

import pytest

from fedrec import cli, experiment, fed
from fedrec.config import ExperimentConfig, load_config, parse_strategies
from fedrec.errors import ConfigError, MissingRun

SMALL_INI = """
[experiment]
seed = 3

[data]
min_skill_interactions = 20

[synthetic]
num_users = 12
num_skills = 6
ability_mean = 1.5

[central]
num_rounds = 8

[fed]
strategies = fedavg, fedprox:0.1, fedprox:0.5, fedprox:1.0
rounds = 3
fraction_fit = 0.5
min_fit_clients = 3
local_epochs = 1
learning_rate = 0.01
"""


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_INI)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def pipeline(ini, out):
    for cmd in ("prepare", "central", "fed"):
        assert run(cmd, "--config", ini, "--out", out) == 0


ARTIFACTS = (
    "data/examples.csv",
    "data/scaler.json",
    "data/id_maps.json",
    "data/cohort.json",
    "central/history.csv",
    "central/importance.csv",
    "central/model.gbdt",
    "central/summary.json",
    "fed/history_fedavg.csv",
    "fed/history_fedprox_mu0.5.csv",
    "fed/client_f1_fedprox_mu1.csv",
    "fed/summary_fedprox_mu0.1.json",
    "fed/model_fedavg.bin",
)


class TestPipeline:
    def test_byte_identical_reruns(self, small_ini, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        pipeline(small_ini, a)
        pipeline(small_ini, b)
        for rel in ARTIFACTS:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_artifacts(self, small_ini, tmp_path, capsys):
        out = tmp_path / "run"
        pipeline(small_ini, out)
        lines = (out / "central" / "importance.csv").read_text().splitlines()
        assert lines[0] == "rank,feature,total_gain"
        assert {l.split(",")[1] for l in lines[1:]} == {
            "user_idx", "skill_idx", "user_mean_correct", "user_interaction_count", "skill_mean_correct"
        }
        assert len(list((out / "fed").glob("history_*.csv"))) == 4
        assert len(list((out / "fed").glob("summary_*.json"))) == 4
        hist = (out / "fed" / "history_fedavg.csv").read_text().splitlines()
        assert hist[0] == "round,accuracy,precision,recall,f1,loss,num_eval_examples,num_fit_clients"
        assert len(hist) == 4
        assert (out / "run.log").stat().st_size > 0

        assert run("compare", "--out", out) == 0
        text = capsys.readouterr().out
        assert "FedProx (mu=0.5)" in text and "Centralized booster" in text
        report = json.loads((out / "comparison.json").read_text())
        central = json.loads((out / "central" / "summary.json").read_text())
        best_fed = max(
            json.loads(p.read_text())["best_f1"] for p in (out / "fed").glob("summary_*.json")
        )
        assert report["privacy_cost_ratio"] == best_fed / central["best_f1"]

    def test_interrupted_run_leaves_no_summary(self, small_ini, tmp_path, monkeypatch):
        out = tmp_path / "run"
        assert run("prepare", "--config", small_ini, "--out", out) == 0
        assert run("fed", "--config", small_ini, "--out", out, "--strategies", "fedavg") == 0
        assert (out / "fed" / "summary_fedavg.json").exists()

        real = fed.run_round
        calls = {"n": 0}

        def flaky(*args, **kw):
            calls["n"] += 1
            if calls["n"] == 2:
                raise KeyboardInterrupt
            return real(*args, **kw)

        monkeypatch.setattr(fed, "run_round", flaky)
        with pytest.raises(KeyboardInterrupt):
            run("fed", "--config", small_ini, "--out", out, "--strategies", "fedavg")
        assert not (out / "fed" / "summary_fedavg.json").exists()
        assert len((out / "fed" / "history_fedavg.csv").read_text().splitlines()) == 2
        assert not list((out / "fed").glob(".*.tmp"))

    def test_rounds_zero(self, small_ini, tmp_path):
        out = tmp_path / "run"
        assert run("prepare", "--config", small_ini, "--out", out) == 0
        assert run("fed", "--config", small_ini, "--out", out, "--strategies", "fedprox:0.5", "--rounds", "0") == 0
        s = json.loads((out / "fed" / "summary_fedprox_mu0.5.json").read_text())
        assert s["best_f1"] is None and s["summary_defined"] is False

    def test_synth_then_prepare_from_csv(self, small_ini, tmp_path):
        out = tmp_path / "run"
        assert run("synth", "--config", small_ini, "--out", out) == 0
        assert run("prepare", "--config", small_ini, "--out", tmp_path / "b", "--input", out / "interactions.csv") == 0
        assert run("prepare", "--config", small_ini, "--out", out) == 0
        assert (tmp_path / "b" / "data" / "examples.csv").read_bytes() == (out / "data" / "examples.csv").read_bytes()


class TestExitCodes:
    def test_missing_input(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        assert run("prepare", "--out", tmp_path / "o", "--input", missing) == 2
        assert str(missing) in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert run("prepare", "--config", tmp_path / "none.ini", "--out", tmp_path) == 2

    def test_bad_flag(self):
        assert run("fed", "--bogus") == 2

    def test_bad_strategy(self, tmp_path):
        assert run("fed", "--out", tmp_path, "--strategies", "scaffold") == 2

    def test_fed_before_prepare_is_data_error(self, tmp_path):
        assert run("fed", "--out", tmp_path / "empty") == 3

    def test_empty_input_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("user_id,skill_id\n1,2\n")
        assert run("prepare", "--out", tmp_path / "o", "--input", bad) == 3

    def test_not_enough_clients(self, small_ini, tmp_path):
        out = tmp_path / "run"
        assert run("prepare", "--config", small_ini, "--out", out) == 0
        ini = tmp_path / "big.ini"
        ini.write_text(SMALL_INI.replace("min_fit_clients = 3", "min_fit_clients = 500"))
        assert run("fed", "--config", ini, "--out", out) == 2

    def test_compare_nothing(self, tmp_path):
        assert run("compare", "--out", tmp_path) == 2


class TestCompareReport:
    def fed_summary(self, name, best, std=0.01):
        return {"name": name, "kind": "federated", "best_f1": best, "best_round": 3, "mean_f1": best - 0.02, "std_f1": std}

    def test_ratio(self):
        central = {"name": "C", "kind": "central", "best_f1": 0.80, "best_round": 5, "mean_f1": 0.7, "std_f1": 0.02}
        report = experiment.build_report([self.fed_summary("A", 0.72), central])
        assert report.privacy_cost_ratio == pytest.approx(0.90, abs=1e-15)
        assert "0.9000" in report.to_text()

    def test_ratio_to_four_decimals(self):
        assert experiment.privacy_cost_ratio(0.7628, 0.8285) == pytest.approx(0.9207, abs=1e-4)

    def test_fed_only_omits_ratio(self):
        report = experiment.build_report([self.fed_summary("A", 0.7, 0.02), self.fed_summary("B", 0.6, 0.01)])
        assert report.privacy_cost_ratio is None
        assert "omitted" in report.to_text()
        assert report.stability_ranking == ["B", "A"]

    def test_missing_run_dir(self, tmp_path):
        with pytest.raises(MissingRun):
            experiment.collect_summaries([tmp_path / "absent"])


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg == ExperimentConfig()
        assert [s.label for s in cfg.strategies()] == ["fedavg", "fedprox_mu0.1", "fedprox_mu0.5", "fedprox_mu1"]

    def test_reference_file_matches_defaults(self):
        ref = load_config(Path(__file__).parents[1] / "configs" / "reference.ini")
        assert ref == ExperimentConfig(out="runs/reference")

    def test_overrides(self, small_ini):
        cfg = load_config(small_ini, seed=9, out="x", strategies="fedavg", rounds=7, source="a.csv")
        assert cfg.seed == 9 and cfg.out == "x" and cfg.fed.rounds == 7 and cfg.data.source == "a.csv"
        assert cfg.synth_config().seed == 9 and cfg.booster_config().seed == 9
        assert cfg.synthetic.interactions_per_user == (60, 120)
        assert cfg.central.num_rounds == 8

    def test_parse_strategies(self):
        assert parse_strategies("fedavg, FedProx:0.5") == (("fedavg", 0.0), ("fedprox", 0.5))
        for bad in ("", "fedprox", "fedavg:1", "sgd"):
            with pytest.raises(ConfigError):
                parse_strategies(bad)

    @pytest.mark.parametrize(
        "text",
        ["[bogus]\nx = 1\n", "[fed]\nrounds = many\n", "[fed]\nwhatever = 1\n", "[data]\ntest_fraction = 1.5\n"],
    )
    def test_rejects(self, tmp_path, text):
        p = tmp_path / "c.ini"
        p.write_text(text)
        with pytest.raises(ConfigError):
            load_config(p)
