import json

import pandas as pd
import pytest

from dualmotion.common import ConfigError, MissingArtifactError
from dualmotion.metrics_eval import Protocol
from dualmotion.motion_data import load_motion
from dualmotion.pipeline import (
    EXIT_IO, EXIT_OK, EXIT_USAGE, DualMotionPipeline, RunConfig, build_parser, load_run_config, main,
)

TINY = {
    "model": {"H": 4, "T": 6, "d_z": 4, "hidden": 8},
    "dataset": {"count": 8, "test_fraction": 0.25},
    "optimizer": {"epochs": 2, "batch_size": 4, "lr": 1e-3},
    "flow": {"epochs": 2, "batch_size": 16},
    "sampler": {"K": 3, "hidden": 8, "epochs": 2, "batch_size": 4},
    "eval": {"K_random": 3, "K_diversity": 3},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture
def pipeline(tmp_path, config_file):
    config = load_run_config(str(config_file))
    return DualMotionPipeline(config.model_copy(update={"out_dir": str(tmp_path / "run")}))


# -- configuration ---------------------------------------------------------------

def test_defaults():
    config = load_run_config()
    assert config.model.H == 16 and config.model.T == 32
    assert config.sampler.K == 10
    assert config.flow.lr == 1e-3 and config.flow.epochs == 300
    assert RunConfig.parse(config.emit()) == config


def test_user_file_is_merged_over_defaults(config_file):
    config = load_run_config(str(config_file))
    assert config.model.H == 4
    assert config.model.d_z == 4
    assert config.model.joints[0] == "root"
    assert config.optimizer.betas == (0.9, 0.999)


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"depth": 3}}))
    with pytest.raises(ConfigError):
        load_run_config(str(path))


def test_missing_config_file(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_run_config(str(tmp_path / "absent.json"))


def test_global_flags_work_on_either_side_of_the_subcommand():
    parser = build_parser()
    before = parser.parse_args(["--seed", "5", "make-data"])
    after = parser.parse_args(["make-data", "--seed", "5"])
    assert before.seed == after.seed == 5
    assert parser.parse_args(["make-data"]).seed is None


# -- stages ----------------------------------------------------------------------

def test_make_data_writes_pairs_and_manifest(pipeline):
    data_dir = pipeline.make_data()
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["count"] == 8
    assert sorted(manifest["train"] + manifest["test"]) == list(range(8))
    assert len(manifest["test"]) == 2
    seq = load_motion(data_dir / "pair_00000.json")
    assert seq.frames.shape == (10, 36)
    past, future = pipeline.load_dataset("train")[0]
    assert (past.length, future.length) == (4, 6)


def test_training_needs_a_dataset(pipeline):
    with pytest.raises(MissingArtifactError):
        pipeline.train()


def test_full_run(pipeline):
    pipeline.make_data()
    model_dir = pipeline.train()
    assert json.loads((model_dir / "manifest.json").read_text())["epoch"] == 1
    log = pd.read_csv(pipeline.out / "training_log.csv")
    assert list(log.columns) == ["epoch", "rec_top", "rec_bottom", "kl_top", "kl_bottom", "total"]
    assert log["epoch"].tolist() == [0, 1]

    pipeline.train_pose_prior()
    pipeline.train_sampler()
    assert (pipeline.out / "sampler_log.csv").exists()

    past_file = str(pipeline.data_dir / "pair_00000.json")
    written = pipeline.generate(past_file, K=4, fix_zb=True, plot=True)
    assert len(written) == 4
    assert (written[0].parent / "sample_00.svg").exists()
    assert load_motion(written[0]).frames.shape == (6, 36)
    diverse = pipeline.generate(past_file, K=4, fix_zb=True, diverse=True,
                                samples_dir=str(pipeline.out / "diverse"))
    assert len(diverse) == 3

    reports = pipeline.evaluate([p.value for p in Protocol])
    assert [(r.protocol, r.control) for r in reports] == [
        ("random_sampling", "none"), ("random_sampling", "fix_zb"), ("random_sampling", "fix_zt"),
        ("diversity_sampling", "fix_zb"),
    ]
    assert all(r.nll is not None for r in reports)
    summary = pd.read_csv(pipeline.out / "reports" / "summary.csv")
    assert len(summary) == 4

    export = pd.read_csv(pipeline.export())
    assert list(export.columns) == ["sequence", "frame", "joint", "x", "y", "z"]
    assert len(export) == 8 * 10 * 12


def test_generate_rejects_conflicting_flags(pipeline):
    with pytest.raises(ConfigError):
        pipeline.generate("unused.json", K=2, fix_zb=True, end_pose=True)
    with pytest.raises(ConfigError):
        pipeline.generate("unused.json", K=2, diverse=True)


@pytest.mark.float32
def test_resume_matches_uninterrupted_training(tmp_path, config_file):
    base = load_run_config(str(config_file))
    straight = DualMotionPipeline(base.model_copy(update={"out_dir": str(tmp_path / "straight")}))
    straight.make_data()
    straight.train()

    split = base.model_copy(update={"out_dir": str(tmp_path / "split")})
    first = DualMotionPipeline(split.model_copy(update={
        "optimizer": base.optimizer.model_copy(update={"epochs": 1})}))
    first.make_data()
    first.train()
    DualMotionPipeline(split).train(resume=True)

    assert (tmp_path / "split" / "model" / "params.bin").read_bytes() == \
        (tmp_path / "straight" / "model" / "params.bin").read_bytes()
    log = pd.read_csv(tmp_path / "split" / "training_log.csv")
    assert log["epoch"].tolist() == [0, 1]


# -- command line ------------------------------------------------------------------

@pytest.mark.float32
def test_cli_make_data_and_train(tmp_path, config_file):
    out = tmp_path / "cli"
    assert main(["--config", str(config_file), "--out", str(out), "make-data"]) == EXIT_OK
    assert main(["train", "--config", str(config_file), "--out", str(out), "--epochs", "1"]) == EXIT_OK
    assert json.loads((out / "model" / "manifest.json").read_text())["epoch"] == 0
    assert (out / "dualmotion.log").exists()


def test_cli_usage_errors(tmp_path, config_file):
    out = str(tmp_path / "cli")
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["--config", str(config_file), "--out", out, "evaluate"]) == EXIT_USAGE
    assert main(["--config", str(config_file), "--out", out, "generate", "--past", "p.json",
                 "--fix-zb", "--end-pose"]) == EXIT_USAGE


def test_cli_io_failure(tmp_path, config_file):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["--config", str(config_file), "--out", str(blocker), "make-data"]) == EXIT_IO


def test_fixing_both_latents_writes_identical_samples(pipeline):
    pipeline.make_data()
    pipeline.train()
    written = pipeline.generate(str(pipeline.data_dir / "pair_00000.json"), K=3, fix_zb=True, fix_zt=True)
    assert len(written) == 3
    assert len({path.read_bytes() for path in written}) == 1


def test_make_data_is_reproducible_under_a_seed(tmp_path, config_file):
    base = load_run_config(str(config_file))
    dirs = []
    for name in ("a", "b"):
        run = DualMotionPipeline(base.model_copy(update={"out_dir": str(tmp_path / name)}))
        dirs.append(run.make_data())
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_aux_length_flag_needs_end_pose_training(tmp_path, config_file):
    out = str(tmp_path / "run")
    assert main(["--config", str(config_file), "--out", out, "train", "--aux-length", "3"]) == EXIT_USAGE
