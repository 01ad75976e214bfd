import json

import pytest

from cadet.cli import main
from cadet.config import ExperimentConfig, load_config, smoke_config
from cadet.errors import InvalidConfigError


@pytest.fixture()
def smoke_json(tmp_path):
    path = tmp_path / "smoke.json"
    smoke_config().save(path)
    return path


class TestConfigDocument:
    def test_round_trip(self, smoke_json):
        cfg = load_config(smoke_json)
        assert cfg == smoke_config()

    def test_defaults_materialize_from_empty_document(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("{}\n")
        cfg = load_config(path)
        assert cfg.n_patients == 40
        assert cfg.test_sampler.n_views == 100

    def test_error_names_field_path(self, tmp_path):
        path = tmp_path / "bad.json"
        doc = smoke_config().to_dict()
        doc["tier1"]["threshold"] = 3.0
        path.write_text(json.dumps(doc))
        with pytest.raises(InvalidConfigError) as err:
            load_config(path)
        assert "tier1.threshold" in str(err.value)

    def test_rejects_mismatched_network_input(self, tmp_path):
        doc = smoke_config().to_dict()
        doc["train_sampler"]["patch_px"] = 32
        doc["test_sampler"]["patch_px"] = 32
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(InvalidConfigError) as err:
            load_config(path)
        assert "network.input_spatial" in str(err.value)

    def test_not_json_is_a_config_error(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text("not json {")
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_seed_override_rederives(self):
        cfg = smoke_config()
        assert cfg.with_seed(99).seed == 99
        assert cfg.with_seed(99).phantom == cfg.phantom  # master seed applied at run time


class TestCliCommands:
    def test_bad_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"seed\": -4}")
        rc = main(["run", "--config", str(bad), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "seed" in capsys.readouterr().err

    def test_staged_chain_matches_run(self, smoke_json, tmp_path):
        staged = tmp_path / "staged"
        for cmd in ["phantom", "candidates", "train", "score", "eval"]:
            assert main([cmd, "--config", str(smoke_json), "--out", str(staged)]) == 0
        direct = tmp_path / "direct"
        assert main(["run", "--config", str(smoke_json), "--out", str(direct)]) == 0
        for rel in [
            "candidates/candidates.csv",
            "score/scored.csv",
            "eval/froc_tier2.csv",
            "eval/summary.json",
            "train/fold0/model.bin",
        ]:
            assert (staged / rel).read_bytes() == (direct / rel).read_bytes(), rel

    def test_stage_out_of_order_fails_cleanly(self, smoke_json, tmp_path, capsys):
        rc = main(["train", "--config", str(smoke_json), "--out", str(tmp_path / "nothing")])
        assert rc == 1
        assert "phantom" in capsys.readouterr().err

    def test_check_subcommand(self, smoke_json, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", str(smoke_json), "--out", str(out)]) == 0
        assert main(["check", "--out", str(out)]) == 0
        (out / "eval" / "summary.json").write_text("{}\n")
        assert main(["check", "--out", str(out)]) == 1

    def test_sweep_n_flag(self, smoke_json, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", str(smoke_json), "--out", str(out)]) == 0
        assert main(["sweep-n", "--config", str(smoke_json), "--out", str(out), "--n", "1,2"]) == 0
        payload = json.loads((out / "sweep" / "summary.json").read_text())
        assert set(payload) == {"1", "2"}

    def test_init_config_writes_document(self, tmp_path):
        out = tmp_path / "cfgdir"
        assert main(["init-config", "--smoke", "--out", str(out)]) == 0
        assert load_config(out / "config.json") == smoke_config()

    def test_seed_flag_changes_outputs(self, smoke_json, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["run", "--config", str(smoke_json), "--out", str(a)]) == 0
        assert main(["run", "--config", str(smoke_json), "--seed", "31337", "--out", str(b)]) == 0
        assert (a / "score" / "scored.csv").read_bytes() != (b / "score" / "scored.csv").read_bytes()
