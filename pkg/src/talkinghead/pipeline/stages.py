"""The two-stage workflow: prepare, train-general, finetune, generate, evaluate.

Every stage reads its inputs from, and writes its outputs to, the data root:

    <root>/corpus/                 synthetic corpus plus per-identity features.thc
    <root>/runs/<run_name>/        mapper and refiner checkpoints, outputs, reports
"""
from __future__ import annotations

import json
import logging
import shutil
import subprocess
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .. import container
from ..audio2coef import (RecurrentMapper, SequenceSample, TrainConfig, corpus_loss, finetune, load_mapper,
                          save_mapper, train_general)
from ..audiofeat import AudioClip, compute_mfcc, load_features, read_wav, save_features, write_wav
from ..errors import PreconditionError
from ..evalmetrics import audio_pose_correlation, hs_score, lmd, pose_histogram, psnr, ssim, write_report
from ..face3d.basis import FaceBasis, load_basis
from ..face3d.model import Camera, CoefficientSet, assemble_shape, build_mesh, project
from ..io import (load_coefficients_csv, load_expression_pose_csv, load_png_sequence, load_pose_csv,
                  save_expression_pose_csv, save_png, save_pose_csv)
from ..refinegan import (PairedSequence, Refiner, RefinerConfig, load_refiner, refine_sequence, save_refiner,
                         train_refiner)
from ..render import (composite, extract_detailed_albedo, interpolate_backgrounds, match_background, rasterize,
                      select_keyframes)
from ..render._backend import BACKEND
from .config import RunConfig, dump_config
from .corpus import CorpusSpec, identity_dir, synthesize_corpus

log = logging.getLogger(__name__)

SWEEP_LENGTHS = (100, 200, 300)
VAL_FRACTION = 0.1


def setup_runtime(cfg: RunConfig) -> None:
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)


def corpus_spec(cfg: RunConfig) -> CorpusSpec:
    return CorpusSpec(n_identities=cfg.n_identities, frames_per_identity=cfg.frames_per_identity,
                      fps=cfg.fps, image_size=cfg.image_size, seed=cfg.seed)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise PreconditionError(f"{path} is missing; run `{stage}` first")
    return path


# ---------------------------------------------------------------- prepare

def prepare(cfg: RunConfig, force: bool = False) -> dict:
    """Synthesize the corpus (unless an identical one exists) and cache MFCC features."""
    setup_runtime(cfg)
    root = cfg.corpus_dir
    meta_path = root / "corpus.json"
    spec = corpus_spec(cfg)
    reuse = False
    if meta_path.exists() and not force:
        reuse = json.loads(meta_path.read_text()).get("spec") == json.loads(json.dumps(asdict(spec)))
    if not reuse:
        if root.exists():
            shutil.rmtree(root)
        synthesize_corpus(spec, root)
    for i in range(cfg.n_identities):
        d = identity_dir(root, i)
        if reuse and (d / "features.thc").exists():
            continue
        save_features(d / "features.thc", compute_mfcc(read_wav(d / "audio.wav")))
    return {"corpus": str(root), "identities": cfg.n_identities, "reused": reuse}


@dataclass
class IdentityData:
    index: int
    audio: AudioClip
    features: np.ndarray
    coeffs: list
    real: np.ndarray
    rendered: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return np.stack([c.beta for c in self.coeffs])

    @property
    def pose(self) -> np.ndarray:
        return np.stack([c.pose for c in self.coeffs])


def load_identity(cfg: RunConfig, index: int, images: bool = True) -> IdentityData:
    d = _require(identity_dir(cfg.corpus_dir, index), "prepare")
    feats = load_features(_require(d / "features.thc", "prepare")).features
    coeffs = load_coefficients_csv(d / "coeffs.csv")
    real = load_png_sequence(d / "real") if images else None
    rendered = load_png_sequence(d / "rendered") if images else None
    return IdentityData(index, read_wav(d / "audio.wav"), feats, coeffs, real, rendered)


def load_scene(cfg: RunConfig) -> tuple[FaceBasis, Camera]:
    meta = json.loads(_require(cfg.corpus_dir / "corpus.json", "prepare").read_text())
    return load_basis(cfg.corpus_dir / "basis.thc"), Camera(**meta["camera"])


def _n_train(cfg: RunConfig) -> int:
    return cfg.frames_per_identity - cfg.test_frames


# ---------------------------------------------------------------- stage 1

def chunk_samples(data: IdentityData, chunk: int, stop: int | None = None) -> list[SequenceSample]:
    stop = data.features.shape[0] if stop is None else stop
    beta, pose = data.beta, data.pose
    return [SequenceSample(data.features[s:s + chunk], beta[s:s + chunk], pose[s:s + chunk])
            for s in range(0, stop - chunk + 1, chunk)]


def split_sequences(samples: list, seed: int, fraction: float = VAL_FRACTION) -> tuple[list, list]:
    """Fixed seeded split by whole sequence; at least one validation sequence when possible."""
    n_val = max(1, int(round(fraction * len(samples)))) if len(samples) > 1 else 0
    order = np.random.default_rng(seed).permutation(len(samples))
    val = set(order[:n_val].tolist())
    return ([s for i, s in enumerate(samples) if i not in val], [s for i, s in enumerate(samples) if i in val])


def _stage1_config(cfg: RunConfig, epochs: int, lr: float) -> TrainConfig:
    return TrainConfig(epochs=epochs, lr=lr, seed=cfg.seed, lambda1=cfg.lambda1, lambda2=cfg.lambda2,
                       lambda3=cfg.lambda3)


def train_general_stage(cfg: RunConfig) -> dict:
    """General audio-to-motion mapping on every identity except the target."""
    setup_runtime(cfg)
    samples = []
    for i in range(cfg.n_identities):
        if i != cfg.target_index:
            samples += chunk_samples(load_identity(cfg, i, images=False), cfg.chunk_frames)
    train, val = split_sequences(samples, cfg.seed)
    torch.manual_seed(cfg.seed)
    mapper = RecurrentMapper(train[0].audio.shape[1], train[0].beta.shape[1], cfg.hidden, cfg.enc_hidden)
    tcfg = _stage1_config(cfg, cfg.general_epochs, cfg.general_lr)
    mapper, curve = train_general(mapper, train, tcfg)
    out = cfg.run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    save_mapper(out / "general.thc", mapper)
    np.savetxt(out / "general_loss.csv", np.c_[np.arange(len(curve)), curve], delimiter=",",
               header="epoch,loss", comments="", fmt=["%d", "%.9g"])
    summary = {"n_train": len(train), "n_val": len(val), "initial_loss": curve[0], "final_loss": curve[-1],
               "val_loss": corpus_loss(mapper, val, tcfg) if val else None}
    _write_json(out / "general.json", summary)
    return summary


def _identity_albedo(cfg: RunConfig, data: IdentityData, basis: FaceBasis, camera: Camera, stop: int):
    if not cfg.detailed_albedo:
        return None
    albedo, _, _ = extract_detailed_albedo(list(data.real[:stop]), data.coeffs[:stop], camera, basis)
    return albedo


def render_pairs(cfg: RunConfig, data: IdentityData, basis: FaceBasis, camera: Camera,
                 albedo: np.ndarray | None, stop: int) -> PairedSequence:
    """(re-rendered, real) training pairs; the real frame supplies the background."""
    if albedo is None:
        return PairedSequence(data.rendered[:stop], data.real[:stop], data.index)
    rendered = np.empty_like(data.real[:stop])
    for t in range(stop):
        c = data.coeffs[t]
        frame = rasterize(build_mesh(basis, c, albedo), c.pose, camera, c.gamma)
        rendered[t] = composite(frame, data.real[t])
    return PairedSequence(rendered, data.real[:stop], data.index)


def finetune_stage(cfg: RunConfig) -> dict:
    """Personalize the mapper on the target's first ``finetune_frames`` frames and train the refiner."""
    setup_runtime(cfg)
    out = cfg.run_dir
    general = load_mapper(_require(out / "general.thc", "train-general"))
    target = load_identity(cfg, cfg.target_index)
    n = cfg.finetune_frames
    sample = SequenceSample(target.features[:n], target.beta[:n], target.pose[:n])
    tcfg = _stage1_config(cfg, cfg.finetune_epochs, cfg.finetune_lr)
    before = corpus_loss(general, [sample], tcfg)
    if cfg.use_finetune:
        mapper, curve = finetune(general, sample, tcfg)
    else:
        mapper, curve = general, [before]
    save_mapper(out / "personalized.thc", mapper)
    summary = {"finetune_frames": n if cfg.use_finetune else 0, "loss_before": before, "loss_after": curve[-1]}

    basis, camera = load_scene(cfg)
    albedo = _identity_albedo(cfg, target, basis, camera, n)
    albedo_path = out / "albedo.thc"
    if albedo is not None:
        container.save(albedo_path, {"albedo": albedo}, {"kind": "albedo", "identity": cfg.target_index})
    elif albedo_path.exists():
        albedo_path.unlink()

    if cfg.use_refiner:
        pairs = []
        for i in range(cfg.n_identities):
            data = target if i == cfg.target_index else load_identity(cfg, i)
            stop = min(cfg.refiner_frames, n if i == cfg.target_index else _n_train(cfg))
            a = albedo if i == cfg.target_index else _identity_albedo(cfg, data, basis, camera, stop)
            pairs.append(render_pairs(cfg, data, basis, camera, a, stop))
        rcfg = RefinerConfig(base=cfg.refiner_base, epochs=cfg.refiner_epochs, batch_size=cfg.refiner_batch,
                             lr=cfg.refiner_lr, lambda1=cfg.gan_lambda1, lambda2=cfg.gan_lambda2,
                             lambda3=cfg.gan_lambda3, capacity=cfg.memory_capacity, tau=cfg.memory_tau,
                             margin=cfg.memory_margin, smoothing_window=cfg.smoothing_window, seed=cfg.seed,
                             loss_csv_path=str(out / "refiner_loss.csv"))
        torch.manual_seed(cfg.seed)
        model = Refiner(rcfg)
        model, bank, history = train_refiner(model, model.new_bank(), pairs, rcfg)
        save_refiner(out / "refiner.thc", model, bank)
        summary["refiner_epochs"] = len(history)
        summary["memory_slots"] = bank.size
    _write_json(out / "finetune.json", summary)
    return summary


# ---------------------------------------------------------------- stage 2

def source_segment(cfg: RunConfig, target: IdentityData) -> tuple[np.ndarray, slice]:
    """MFCC rows of the held-out tail of the target's audio (the driving speech)."""
    sl = slice(_n_train(cfg), cfg.frames_per_identity)
    return target.features[sl], sl


def _assemble_video(frames_dir: Path, audio: AudioClip, fps: float, path: Path) -> str | None:
    exe = shutil.which("ffmpeg")
    if exe is None:
        return None
    wav = path.with_suffix(".wav")
    write_wav(wav, audio)
    cmd = [exe, "-y", "-loglevel", "error", "-framerate", f"{fps:g}", "-i", str(frames_dir / "%06d.png"),
           "-i", str(wav), "-c:v", "libx264", "-pix_fmt", "yuv420p", "-shortest", str(path)]
    try:
        subprocess.run(cmd, check=True, capture_output=True, timeout=600)
    except (subprocess.CalledProcessError, subprocess.TimeoutExpired, OSError) as exc:
        log.warning("video assembly failed: %s", exc)
        return None
    return str(path)


def run_stage1(cfg: RunConfig, target: IdentityData | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Predict expression and pose for the driving speech; writes ``stage1.csv``."""
    out = cfg.run_dir
    mapper = load_mapper(_require(out / "personalized.thc", "finetune"))
    target = target or load_identity(cfg, cfg.target_index, images=False)
    feats, _ = source_segment(cfg, target)
    beta, pose = mapper.predict(feats)
    save_expression_pose_csv(out / "stage1.csv", beta, pose)
    return beta, pose


def run_stage2(cfg: RunConfig, beta: np.ndarray, pose: np.ndarray, target: IdentityData | None = None) -> dict:
    """Rasterize, composite over pose-matched backgrounds and (optionally) refine."""
    out = cfg.run_dir
    target = target or load_identity(cfg, cfg.target_index)
    basis, camera = load_scene(cfg)
    n_video = _n_train(cfg)
    albedo = None
    if cfg.detailed_albedo:
        arrays, _ = container.load(_require(out / "albedo.thc", "finetune"))
        albedo = arrays["albedo"].astype(np.float64)

    keys = select_keyframes(pose, cfg.keyframe_window)
    video_poses = target.pose[:n_video]
    plates = [match_background(pose[k], video_poses, target.real[:n_video]) for k in keys]
    backgrounds, _, adjusted, _ = interpolate_backgrounds(keys, plates, pose)
    ref = target.coeffs[0]
    rendered = np.empty((len(pose),) + backgrounds.shape[1:])
    for t in range(len(pose)):
        c = CoefficientSet(ref.alpha, beta[t], ref.delta, ref.gamma, adjusted[t])
        rendered[t] = composite(rasterize(build_mesh(basis, c, albedo), adjusted[t], camera, ref.gamma),
                                backgrounds[t])
    save_pose_csv(out / "render_poses.csv", adjusted)
    _write_frames(out / "rendered", rendered)
    summary = {"frames": len(pose), "keyframes": keys.tolist(), "raster_backend": BACKEND, "refined": False}

    final_dir = out / "rendered"
    if cfg.use_refiner:
        model, bank = load_refiner(_require(out / "refiner.thc", "finetune"))
        result = refine_sequence(model, bank, rendered, cfg.smoothing_window)
        _write_frames(out / "refined", result["refined"])
        final_dir = out / "refined"
        summary["refined"] = True
    elif (out / "refined").exists():
        shutil.rmtree(out / "refined")

    summary["video"] = None
    if cfg.make_video:
        _, sl = source_segment(cfg, target)
        rate = target.audio.sample_rate
        hop = rate / cfg.fps
        clip = AudioClip(target.audio.samples[int(round(sl.start * hop)):int(round(sl.stop * hop))], rate)
        summary["video"] = _assemble_video(final_dir, clip, cfg.fps, out / "output.mp4")
    _write_json(out / "generate.json", summary)
    return summary


def _write_frames(folder: Path, frames: np.ndarray) -> None:
    if folder.exists():
        shutil.rmtree(folder)
    folder.mkdir(parents=True)
    for t, img in enumerate(frames):
        save_png(folder / f"{t:06d}.png", img)


def generate_stage(cfg: RunConfig) -> dict:
    setup_runtime(cfg)
    target = load_identity(cfg, cfg.target_index)
    beta, pose = run_stage1(cfg, target)
    return run_stage2(cfg, beta, pose, target)


# ---------------------------------------------------------------- evaluation

def landmarks_2d(basis: FaceBasis, camera: Camera, alpha, beta: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """Projected mouth-region vertices per frame, (T, L, 2)."""
    idx = basis.mouth_indices
    out = np.empty((len(beta), idx.size, 2))
    for t in range(len(beta)):
        uv, _, _ = project(assemble_shape(basis, alpha, beta[t])[idx], pose[t], camera)
        out[t] = uv
    return out


def video_metrics(frames: np.ndarray, gt_frames: np.ndarray, lm_gen: np.ndarray, lm_gt: np.ndarray,
                  poses: np.ndarray, gt_poses: np.ndarray, features: np.ndarray) -> dict:
    """PSNR, SSIM (frame means), LMD, HS and audio-pose correlation for one video."""
    corr = audio_pose_correlation(features, poses)
    return {
        "psnr": float(np.mean([psnr(a, b) for a, b in zip(frames, gt_frames)])),
        "ssim": float(np.mean([ssim(a, b) for a, b in zip(frames, gt_frames)])),
        "lmd": lmd(lm_gen, lm_gt),
        "hs": hs_score(pose_histogram(gt_poses), pose_histogram(poses)),
        "correlation": corr.coefficient,
    }


def evaluate_stage(cfg: RunConfig, report_stem: str = "report") -> list[dict]:
    """Score every generated video of the run against the held-out ground truth."""
    out = cfg.run_dir
    beta, pose = load_expression_pose_csv(_require(out / "stage1.csv", "generate"))
    gen = json.loads(_require(out / "generate.json", "generate").read_text())
    target = load_identity(cfg, cfg.target_index)
    basis, camera = load_scene(cfg)
    feats, sl = source_segment(cfg, target)
    gt_frames, gt_beta, gt_pose = target.real[sl], target.beta[sl], target.pose[sl]
    ref = target.coeffs[0]
    render_poses = load_pose_csv(out / "render_poses.csv")
    lm_gen = landmarks_2d(basis, camera, ref.alpha, beta, render_poses)
    lm_gt = landmarks_2d(basis, camera, ref.alpha, gt_beta, gt_pose)
    ft = json.loads(_require(out / "finetune.json", "finetune").read_text())["finetune_frames"]
    rows = []
    videos = ["rendered"] + (["refined"] if gen.get("refined") else [])
    for name in videos:
        frames = load_png_sequence(out / name)
        if frames.shape[0] != gt_frames.shape[0]:
            raise PreconditionError(f"{name} has {frames.shape[0]} frames, expected {gt_frames.shape[0]}")
        rows.append({"video": name, "frames": int(frames.shape[0]), "finetune_frames": ft,
                     **video_metrics(frames, gt_frames, lm_gen, lm_gt, pose, gt_pose, feats)})
    write_report(out / report_stem, rows)
    return rows


def self_evaluation(cfg: RunConfig) -> dict:
    """Ground truth scored against itself; a sanity check of the metric plumbing."""
    target = load_identity(cfg, cfg.target_index)
    basis, camera = load_scene(cfg)
    feats, sl = source_segment(cfg, target)
    lm = landmarks_2d(basis, camera, target.coeffs[0].alpha, target.beta[sl], target.pose[sl])
    return video_metrics(target.real[sl], target.real[sl], lm, lm, target.pose[sl], target.pose[sl], feats)


# ---------------------------------------------------------------- drivers

def run_all(cfg: RunConfig) -> list[dict]:
    prepare(cfg)
    train_general_stage(cfg)
    finetune_stage(cfg)
    generate_stage(cfg)
    return evaluate_stage(cfg)


def sweep_finetune_length(cfg: RunConfig, lengths=SWEEP_LENGTHS) -> list[dict]:
    """Fine-tune on each prefix length, generate and evaluate; one report row per length.

    Sub-runs share the general mapper of ``cfg.run_name`` and skip the refiner.
    """
    general = _require(cfg.run_dir / "general.thc", "train-general")
    usable = _n_train(cfg)
    rows = []
    for n in lengths:
        if n > usable:
            raise PreconditionError(f"sweep length {n} exceeds the {usable} frames before the held-out tail")
        sub = cfg.with_overrides(run_name=f"{cfg.run_name}-ft{n}", finetune_frames=n, use_refiner=False,
                                 make_video=False, use_finetune=True)
        sub.run_dir.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(general, sub.run_dir / "general.thc")
        finetune_stage(sub)
        generate_stage(sub)
        row = evaluate_stage(sub)[0]
        rows.append(row)
    write_report(cfg.run_dir / "sweep_report", rows)
    return rows
