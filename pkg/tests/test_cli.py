import json
from pathlib import Path

import pytest
import torch

from src.errors import ConfigError
from src.main import attention_summary, build_parser, load_run_config, main
from src.models.factory import build_model
from src.models.spec import ModelSpec
from src.synthcohort.types import LabelledExample
from src.validation.schema import RunConfig

SMOKE = str(Path(__file__).resolve().parent.parent / "configs" / "smoke.json")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def files_of(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def smoke_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    assert main(["synth", "--config", SMOKE, "--out", str(out), "--log-level", "WARNING"]) == 0
    return out


def test_synth_writes_manifest(smoke_cohort):
    assert (smoke_cohort / "cohort.json").exists()
    echoed = read_json(smoke_cohort / "config.json")
    assert echoed["command"] == "synth"
    assert echoed["run"]["cohort"]["n_patients"] == 24
    assert len(echoed["config_hash"]) == 64


def test_synth_is_reproducible(tmp_path, smoke_cohort):
    assert main(["synth", "--config", SMOKE, "--out", str(tmp_path / "again"), "--log-level", "WARNING"]) == 0
    assert files_of(tmp_path / "again") == files_of(smoke_cohort)


def test_seed_override_changes_cohort(tmp_path, smoke_cohort):
    assert main(["synth", "--config", SMOKE, "--seed", "9", "--out", str(tmp_path / "s9"), "--log-level", "WARNING"]) == 0
    assert read_json(tmp_path / "s9" / "config.json")["run"]["cohort"]["seed"] == 9
    assert files_of(tmp_path / "s9") != files_of(smoke_cohort)


def test_missing_config_exit_code(tmp_path, caplog):
    """A missing config exits with 2 and names the path."""
    missing = tmp_path / "nope.json"
    assert main(["synth", "--config", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in caplog.text


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"cohort": {"n_patients": -1}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("{not json")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(ConfigError):
        load_run_config(str(bad))


def test_output_dir_required(tmp_path):
    assert main(["synth", "--config", SMOKE]) == 2


def test_bare_config_name_uses_config_dir(tmp_path, monkeypatch):
    (tmp_path / "mine.json").write_text(json.dumps({"seed": 4}))
    monkeypatch.setenv("VMIL_CONFIG_DIR", str(tmp_path))
    assert load_run_config("mine").seed == 4


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["fit"])


def test_inspect_paper_scale(tmp_path, capsys):
    """Full-size cnn_bilstm reports about 34M parameters and 130G FLOPs."""
    assert main(["inspect", "--arch", "cnn_bilstm", "--preset", "paper_scale", "--out", str(tmp_path)]) == 0
    payload = read_json(tmp_path / "inspect.json")
    assert abs(payload["params"] - 34e6) <= 0.15 * 34e6
    assert abs(payload["flops"] - 130e9) <= 0.15 * 130e9
    assert "34M" in capsys.readouterr().out
    assert (tmp_path / "inspect.txt").read_text(encoding="utf-8").startswith("Component")


def test_inspect_bad_spec(tmp_path):
    """An unknown architecture in the config is a config error."""
    bad = tmp_path / "arch.json"
    bad.write_text(json.dumps({"train": {"architecture": "resnet_lstm"}}))
    assert main(["inspect", "--config", str(bad)]) == 2
    with pytest.raises(SystemExit):
        main(["inspect", "--arch", "cnn_bilstm", "--preset", "pocket_scale"])


def test_verify_suites(tmp_path):
    """Clean suites pass; an injected inflation fault fails."""
    assert main(["verify", "--suite", "accounting", "--out", str(tmp_path)]) == 0
    assert read_json(tmp_path / "verify.json")["suites"][0]["passed"] is True
    assert main(["verify", "--suite", "inflation", "--inject-fault", "inflation"]) == 1


def test_pretrain_train_eval_chain(tmp_path, smoke_cohort):
    """Pretrain, train random and pretrained siblings, then re-score on a cohort without converters."""
    runs = tmp_path / "runs"
    common = ["--config", SMOKE, "--cohort", str(smoke_cohort), "--log-level", "WARNING"]

    assert main(["pretrain", *common, "--out", str(tmp_path / "pre")]) == 0
    encoder = tmp_path / "pre" / "checkpoints" / "encoder.ckpt"
    assert encoder.exists()
    log = read_json(tmp_path / "pre" / "logs" / "pretrain.json")
    assert len(log["epochs"]) == 1

    assert main(["train", *common, "--out", str(runs / "random")]) == 0
    for name in ("config.json", "report.json", "report.txt", "predictions.csv", "checkpoints/fold0.ckpt", "checkpoints/fold1.ckpt", "logs/train_fold0.json"):
        assert (runs / "random" / name).exists(), name

    assert main(["train", *common, "--init", "tinc_checkpoint", "--checkpoint", str(encoder), "--out", str(runs / "tinc")]) == 0
    report = read_json(runs / "tinc" / "report.json")
    assert report["init"] == "tinc_checkpoint"
    assert [row["label"] for row in report["comparison"]] == ["TINC", "random"]
    assert (runs / "tinc" / "logs" / "transfer.json").exists()
    assert "Comparison" in (runs / "tinc" / "report.txt").read_text(encoding="utf-8")

    assert main(["synth", "--config", SMOKE, "--out", str(tmp_path / "ext"), "--noise-level", "0.1", "--log-level", "WARNING"]) == 0
    assert main(["eval", "--config", SMOKE, "--cohort", str(tmp_path / "ext"), "--run-dir", str(runs / "random"), "--out", str(tmp_path / "eval")]) == 0
    assert read_json(tmp_path / "eval" / "report.json")["cohort"].startswith("synthetic noise=0.1")

    negatives = tmp_path / "negatives"
    (tmp_path / "neg.json").write_text(json.dumps({**read_json(SMOKE), "cohort": {**read_json(SMOKE)["cohort"], "converter_fraction": 0.0}}))
    assert main(["synth", "--config", str(tmp_path / "neg.json"), "--out", str(negatives), "--log-level", "WARNING"]) == 0
    assert main(["eval", "--config", SMOKE, "--cohort", str(negatives), "--run-dir", str(runs / "random"), "--out", str(tmp_path / "eval_neg")]) == 4
    wrong_arch = ["eval", "--config", SMOKE, "--cohort", str(tmp_path / "ext"), "--run-dir", str(runs / "random"), "--arch", "cnn_bilstm"]
    assert main([*wrong_arch, "--out", str(tmp_path / "eval_arch")]) == 4


def test_train_same_seed_same_report(tmp_path, smoke_cohort):
    args = ["train", "--config", SMOKE, "--cohort", str(smoke_cohort), "--log-level", "WARNING"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_train_spec_mismatch_exit_code(tmp_path, smoke_cohort):
    """A pretrained encoder of another width is rejected with exit code 4."""
    bad = tmp_path / "wide.json"
    assert main(["pretrain", "--config", SMOKE, "--cohort", str(smoke_cohort), "--out", str(tmp_path / "pre"), "--log-level", "WARNING"]) == 0
    encoder = tmp_path / "pre" / "checkpoints" / "encoder.ckpt"
    bad.write_text(json.dumps({**read_json(SMOKE), "train": {**read_json(SMOKE)["train"], "preset": "paper_scale"}}))
    code = main(["train", "--config", str(bad), "--cohort", str(smoke_cohort), "--init", "tinc_checkpoint", "--checkpoint", str(encoder), "--out", str(tmp_path / "t")])
    assert code == 4



def test_train_too_few_patients_exit_code(tmp_path):
    """Strata smaller than k stop training with exit code 4, not a traceback."""
    cohort = tmp_path / "four"
    assert main(["synth", "--config", SMOKE, "--n-patients", "4", "--out", str(cohort), "--log-level", "WARNING"]) == 0
    code = main(["train", "--config", SMOKE, "--cohort", str(cohort), "--k-folds", "4", "--out", str(tmp_path / "t"), "--log-level", "WARNING"])
    assert code == 4
    assert not (tmp_path / "t" / "checkpoints").exists()


def test_attention_summary_skips_lesion_free_holdout(caplog):
    """Without positive lesion volumes the overlap is skipped instead of failing the run."""
    spec = ModelSpec.from_preset("cnn_bilstm", "desk_scale", input={"n_slices": 4})
    model = build_model(spec, seed=0).eval()
    negatives = [LabelledExample("P0000", day, torch.rand(4, 32, 32), 0) for day in (0, 30)]
    assert attention_summary([model], negatives) is None
    assert "skipping attention.json" in caplog.text
    positive = LabelledExample("P0001", 0, torch.rand(4, 32, 32), 1, (1, 2))
    summary = attention_summary([model, model], negatives + [positive])
    assert len(summary["folds"]) == 2
    assert summary["folds"][0]["n_volumes"] == 1
    meanpool = build_model(ModelSpec.from_preset("cnn_meanpool", "desk_scale", input={"n_slices": 4}), seed=0)
    assert attention_summary([meanpool], [positive]) is None


def test_arch_flag_on_pretrain_and_eval():
    parser = build_parser()
    assert parser.parse_args(["pretrain", "--arch", "i3d"]).arch == "i3d"
    assert parser.parse_args(["eval", "--arch", "cnn_transformer"]).arch == "cnn_transformer"


def test_roi_must_fit_preprocessed_block():
    """Lesions planted outside the kept slice block are a config error."""
    with pytest.raises(ValueError, match="roi_slices"):
        RunConfig.model_validate({"cohort": {"n_slices": 16, "roi_slices": 12}, "preprocess": {"n_slices": 8}})
    smoke = load_run_config(SMOKE)
    assert smoke.cohort.roi_slices <= smoke.preprocess.n_slices

@pytest.mark.slow
def test_i3d_from_pretrained_encoder(tmp_path, smoke_cohort):
    """The I3D path inflates every pretrained kernel and logs it."""
    common = ["--config", SMOKE, "--cohort", str(smoke_cohort), "--log-level", "WARNING"]
    assert main(["pretrain", *common, "--out", str(tmp_path / "pre")]) == 0
    encoder = tmp_path / "pre" / "checkpoints" / "encoder.ckpt"
    assert main(["train", *common, "--arch", "i3d", "--init", "tinc_checkpoint", "--checkpoint", str(encoder), "--out", str(tmp_path / "i3d")]) == 0
    log = read_json(tmp_path / "i3d" / "logs" / "transfer.json")
    assert any(e["action"].startswith("inflated") for e in log["entries"])


@pytest.mark.slow
def test_verify_all_suites():
    assert main(["verify"]) == 0


if __name__ == "__main__":
    pytest.main([__file__])
