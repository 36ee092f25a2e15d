"""Run configuration read from ``key = value`` text files."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigurationError

DATA_ENV = "TALKINGHEAD_DATA"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    data_root: str = "talkinghead-data"
    run_name: str = "default"
    seed: int = 0
    device: str = "cpu"
    threads: int = 1

    # corpus
    n_identities: int = 3
    frames_per_identity: int = 400
    image_size: int = 32
    fps: float = 25.0
    target: int = -1             # negative counts from the end
    test_frames: int = 100       # held-out tail of the target used as source audio

    # stage 1
    chunk_frames: int = 100
    general_epochs: int = 200
    general_lr: float = 1e-4
    finetune_frames: int = 300
    finetune_epochs: int = 100
    finetune_lr: float = 1e-5
    hidden: int = 32
    enc_hidden: int = 256
    lambda1: float = 0.2
    lambda2: float = 0.01
    lambda3: float = 0.0001
    use_finetune: bool = True

    # stage 2
    use_refiner: bool = True
    refiner_frames: int = 150    # training pairs per identity
    refiner_epochs: int = 10
    refiner_batch: int = 8
    refiner_lr: float = 2e-4
    refiner_base: int = 16
    gan_lambda1: float = 100.0
    gan_lambda2: float = 2.0
    gan_lambda3: float = 1e-5
    memory_capacity: int = 64
    memory_tau: float = 0.5
    memory_margin: float = 0.2
    smoothing_window: int = 3
    keyframe_window: int = 25
    albedo: str = "auto"         # auto: detailed for the general mapping, basis when fine-tuned
    make_video: bool = True

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "gan_lambda1", "gan_lambda2", "gan_lambda3"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        for name in ("n_identities", "frames_per_identity", "image_size", "test_frames", "chunk_frames",
                     "finetune_frames", "hidden", "enc_hidden", "refiner_frames", "refiner_batch",
                     "memory_capacity", "smoothing_window", "keyframe_window", "threads"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("general_epochs", "finetune_epochs", "refiner_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.n_identities < 2:
            raise ConfigurationError("need a target identity plus at least one training identity")
        if self.test_frames >= self.frames_per_identity:
            raise ConfigurationError("test_frames must leave frames for fine-tuning")
        if self.finetune_frames > self.frames_per_identity - self.test_frames:
            raise ConfigurationError("finetune_frames overlaps the held-out test frames")
        if not -self.n_identities <= self.target < self.n_identities:
            raise ConfigurationError("target identity out of range")
        if self.albedo not in ("auto", "detailed", "basis"):
            raise ConfigurationError("albedo must be auto, detailed or basis")
        if self.device != "cpu":
            raise ConfigurationError("only the cpu device is supported")

    @property
    def target_index(self) -> int:
        return self.target % self.n_identities

    @property
    def detailed_albedo(self) -> bool:
        if self.albedo == "auto":
            return not self.use_finetune
        return self.albedo == "detailed"

    @property
    def corpus_dir(self) -> Path:
        return Path(self.data_root) / "corpus"

    @property
    def run_dir(self) -> Path:
        return Path(self.data_root) / "runs" / self.run_name

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _coerce(name: str, kind, text: str):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {text!r}") from None


def parse_config(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    kinds = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[f.type] for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in kinds:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, kinds[key], value)
    return out


def load_config(path: str | Path | None = None, env: dict | None = None, **overrides) -> RunConfig:
    """Defaults, then the file, then ``TALKINGHEAD_DATA``, then explicit overrides."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {p} does not exist")
        values.update(parse_config(p.read_text()))
    env = os.environ if env is None else env
    if env.get(DATA_ENV):
        values["data_root"] = env[DATA_ENV]
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
