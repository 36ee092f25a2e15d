import filecmp
import json

import numpy as np
import pytest

from talkinghead import container
from talkinghead.errors import ConfigurationError
from talkinghead.evalmetrics import METRIC_KEYS, hs_score, pose_histogram
from talkinghead.io import load_expression_pose_csv, load_png_sequence
from talkinghead.pipeline import corpus, stages
from talkinghead.pipeline.cli import main
from talkinghead.pipeline.config import DATA_ENV, RunConfig, dump_config, load_config, parse_config

# ------------------------------------------------------------------- config


def test_parse_comments_types_and_dashes():
    values = parse_config("# header\nseed = 3  # trailing\nuse-refiner = off\ngeneral_lr=1e-3\n\n")
    assert values == {"seed": 3, "use_refiner": False, "general_lr": 1e-3}


@pytest.mark.parametrize("text", ["bogus = 1", "seed 3", "seed = x", "use_finetune = maybe"])
def test_parse_errors(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_precedence_file_env_override(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("data_root = from_file\nseed = 4\n")
    assert load_config(f, env={}).data_root == "from_file"
    cfg = load_config(f, env={DATA_ENV: "from_env"})
    assert cfg.data_root == "from_env" and cfg.seed == 4
    assert load_config(f, env={DATA_ENV: "from_env"}, data_root="explicit", seed=None).data_root == "explicit"
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.cfg", env={})


@pytest.mark.parametrize("bad", [{"test_frames": 400}, {"finetune_frames": 301}, {"lambda1": -1.0},
                                 {"n_identities": 1}, {"target": 3}, {"albedo": "shiny"}, {"device": "cuda"},
                                 {"general_epochs": -1}])
def test_validation(bad):
    with pytest.raises(ConfigurationError):
        RunConfig(**bad)


def test_dump_round_trip():
    cfg = RunConfig(seed=9, use_refiner=False, memory_tau=0.25)
    assert RunConfig(**parse_config(dump_config(cfg))) == cfg


def test_albedo_auto_rule():
    assert RunConfig(use_finetune=False).detailed_albedo
    assert not RunConfig(use_finetune=True).detailed_albedo
    assert RunConfig(use_finetune=True, albedo="detailed").detailed_albedo
    assert RunConfig(target=-1).target_index == 2


# ------------------------------------------------------------------- corpus

def test_corpus_is_byte_identical_across_runs(tmp_path):
    spec = corpus.CorpusSpec(n_identities=2, frames_per_identity=30, image_size=24, seed=5)
    corpus.synthesize_corpus(spec, tmp_path / "a")
    corpus.synthesize_corpus(spec, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")

    def same(c):
        return not (c.diff_files or c.left_only or c.right_only or c.funny_files) and all(
            same(s) for s in c.subdirs.values())

    files = sorted(p for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert same(cmp) and len(files) > 0
    assert all(filecmp.cmp(p, tmp_path / "b" / p.relative_to(tmp_path / "a"), shallow=False) for p in files)

    d = corpus.identity_dir(tmp_path / "a", 1)
    assert len(list((d / "real").glob("*.png"))) == 30
    assert len(list((d / "rendered").glob("*.png"))) == 30
    assert len((d / "coeffs.csv").read_text().splitlines()) == 31


def test_different_seed_changes_corpus():
    a = corpus.speech_sequence(corpus.CorpusSpec(seed=0), 0, 50)
    b = corpus.speech_sequence(corpus.CorpusSpec(seed=1), 0, 50)
    assert not np.array_equal(a[0].samples, b[0].samples)


# --------------------------------------------------------------- CLI driver

TOY = """\
data_root = {root}
general_epochs = 5
finetune_epochs = 5
refiner_epochs = 4
refiner_frames = 150
"""


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg_path = root / "toy.cfg"
    cfg_path.write_text(TOY.format(root=root / "data"))
    args = ["--config", str(cfg_path)]
    for cmd in ("prepare", "train-general", "finetune", "generate", "evaluate"):
        assert main([cmd, *args]) == 0, cmd
    return load_config(cfg_path, env={}), args


def test_prepare_reuses_matching_corpus(toy, capsys):
    cfg, args = toy
    capsys.readouterr()
    assert main(["prepare", *args]) == 0
    assert json.loads(capsys.readouterr().out)["reused"] is True


def test_stage_outputs_present(toy):
    cfg, _ = toy
    out = cfg.run_dir
    for name in ("general.thc", "general_loss.csv", "personalized.thc", "refiner.thc", "refiner_loss.csv",
                 "stage1.csv", "render_poses.csv", "generate.json", "report.json", "report.csv", "config.txt"):
        assert (out / name).exists(), name
    assert not (out / "albedo.thc").exists()     # fine-tuned path uses the basis albedo


def test_frame_counts_preserved(toy):
    cfg, _ = toy
    beta, pose = load_expression_pose_csv(cfg.run_dir / "stage1.csv")
    assert beta.shape[0] == pose.shape[0] == cfg.test_frames
    for name in ("rendered", "refined"):
        frames = load_png_sequence(cfg.run_dir / name)
        assert frames.shape == (cfg.test_frames, cfg.image_size, cfg.image_size, 3)


def test_report_has_all_metrics_per_video(toy):
    cfg, _ = toy
    rows = json.loads((cfg.run_dir / "report.json").read_text())
    assert [r["video"] for r in rows] == ["rendered", "refined"]
    for r in rows:
        assert all(k in r for k in METRIC_KEYS)
        assert r["finetune_frames"] == cfg.finetune_frames


def test_refined_beats_rendered_on_l1(toy):
    cfg, _ = toy
    target = stages.load_identity(cfg, cfg.target_index)
    _, sl = stages.source_segment(cfg, target)
    real = target.real[sl]
    l1 = {n: np.abs(load_png_sequence(cfg.run_dir / n) - real).mean() for n in ("rendered", "refined")}
    assert l1["refined"] < l1["rendered"]


def test_generated_pose_closer_to_target_than_other_identities(toy):
    cfg, _ = toy
    _, pose = load_expression_pose_csv(cfg.run_dir / "stage1.csv")
    gen = pose_histogram(pose)
    tail = slice(cfg.frames_per_identity - cfg.test_frames, cfg.frames_per_identity)
    scores = {i: hs_score(pose_histogram(stages.load_identity(cfg, i, images=False).pose[tail]), gen)
              for i in range(cfg.n_identities)}
    others = [s for i, s in scores.items() if i != cfg.target_index]
    assert scores[cfg.target_index] > max(others)


def test_self_evaluation_is_perfect(toy):
    cfg, _ = toy
    m = stages.self_evaluation(cfg)
    assert m["psnr"] == 100.0 and m["ssim"] == pytest.approx(1.0) and m["lmd"] == 0.0 and m["hs"] == 1.0


def test_sweep_emits_one_row_per_length(toy):
    cfg, args = toy
    assert main(["sweep-finetune-length", *args]) == 0
    rows = json.loads((cfg.run_dir / "sweep_report.json").read_text())
    assert [r["finetune_frames"] for r in rows] == [100, 200, 300]
    assert all(r["video"] == "rendered" for r in rows)


def test_general_path_without_refiner(toy):
    cfg, args = toy
    flags = [*args, "--run-name", "plain", "--no-finetune", "--no-refiner"]
    assert main(["train-general", *flags]) == 0
    assert main(["finetune", *flags]) == 0
    assert main(["generate", *flags]) == 0
    assert main(["evaluate", *flags]) == 0
    out = cfg.with_overrides(run_name="plain").run_dir
    general, _ = container.load(out / "general.thc")
    personal, _ = container.load(out / "personalized.thc")
    assert general.keys() == personal.keys()
    assert all(np.array_equal(general[k], personal[k]) for k in general)
    assert (out / "albedo.thc").exists() and not (out / "refined").exists()
    rows = json.loads((out / "report.json").read_text())
    assert [r["video"] for r in rows] == ["rendered"] and rows[0]["finetune_frames"] == 0


def test_frames_and_seed_flags(toy):
    cfg, args = toy
    flags = [*args, "--run-name", "short", "--frames", "100", "--seed", "3", "--no-refiner"]
    assert main(["train-general", *flags]) == 0
    assert main(["finetune", *flags]) == 0
    out = cfg.with_overrides(run_name="short").run_dir
    assert json.loads((out / "finetune.json").read_text())["finetune_frames"] == 100
    assert "seed = 3" in (out / "config.txt").read_text()


def test_missing_stage_and_bad_config_exit_code(toy, tmp_path, capsys):
    _, args = toy
    assert main(["generate", *args, "--run-name", "never-trained"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["prepare", "--config", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err
