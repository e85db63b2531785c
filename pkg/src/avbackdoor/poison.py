"""Poisoned-label dataset construction.

Splits a training manifest into clean and poisoned subsets at a chosen rate,
rewrites the poisoned media with the configured triggers (materialized to
disk so later stages inspect exactly what the trainer saw), and shifts the
poisoned labels to the target class.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_triggers import AudioAttackParams, apply_audio_attack
from .media import (AudioSignal, VideoClip, quantize_clip, quantize_signal,
                    read_clip, read_wav, write_clip, write_wav)
from .nat_triggers import NATURAL_KINDS, NaturalParams, apply_natural
from .rng import spawn
from .vid_triggers import KINDS as TRIGGER_KINDS
from .vid_triggers import TriggerParams, poison_frames

MANIFEST_VERSION = 1

VideoAttack = TriggerParams | NaturalParams


@dataclass(frozen=True)
class FramePolicy:
    """Which frames of a clip receive the trigger."""

    kind: str  # all | fixed | random
    n: int | None = None

    def __post_init__(self):
        if self.kind not in ("all", "fixed", "random"):
            raise ValueError(f"unknown frame policy {self.kind!r}")
        if self.kind in ("fixed", "random") and (self.n is None or self.n < 1):
            raise ValueError(f"{self.kind} policy needs n >= 1")

    def to_json(self) -> dict:
        return {"kind": self.kind} if self.n is None else {"kind": self.kind,
                                                           "n": self.n}

    @staticmethod
    def from_json(obj) -> "FramePolicy":
        return FramePolicy(obj["kind"], obj.get("n"))


def video_attack_from_json(obj) -> VideoAttack:
    kind = obj["kind"]
    if kind in TRIGGER_KINDS:
        return TriggerParams.from_json(obj)
    if kind in NATURAL_KINDS:
        return NaturalParams.from_json(obj)
    raise ValueError(f"unknown video attack kind {kind!r}")


@dataclass(frozen=True)
class PoisonSpec:
    """Full recipe: per-modality attack, target label, rate, frame policy."""

    target_label: int
    rate: float
    video_attack: VideoAttack | None = None
    audio_attack: AudioAttackParams | None = None
    frame_policy: FramePolicy = FramePolicy("all")
    eval_frame_count: int | None = None  # None = every frame
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rate <= 1.0):
            raise ValueError(f"rate must be in [0,1], got {self.rate}")
        if self.target_label < 0:
            raise ValueError("target_label must be non-negative")

    def to_json(self) -> dict:
        return {
            "target_label": self.target_label,
            "rate": self.rate,
            "video_attack": None if self.video_attack is None
            else self.video_attack.to_json(),
            "audio_attack": None if self.audio_attack is None
            else self.audio_attack.to_json(),
            "frame_policy": self.frame_policy.to_json(),
            "eval_frame_count": self.eval_frame_count,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj) -> "PoisonSpec":
        return PoisonSpec(
            target_label=int(obj["target_label"]),
            rate=float(obj["rate"]),
            video_attack=None if obj.get("video_attack") is None
            else video_attack_from_json(obj["video_attack"]),
            audio_attack=None if obj.get("audio_attack") is None
            else AudioAttackParams.from_json(obj["audio_attack"]),
            frame_policy=FramePolicy.from_json(obj.get("frame_policy",
                                                       {"kind": "all"})),
            eval_frame_count=obj.get("eval_frame_count"),
            seed=int(obj.get("seed", 0)),
        )


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    original_label: int
    effective_label: int
    video_path: str | None = None
    audio_path: str | None = None
    poisoned: bool = False
    poisoned_frames: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "video": self.video_path,
            "audio": self.audio_path,
            "original_label": self.original_label,
            "effective_label": self.effective_label,
            "poisoned": self.poisoned,
            "poisoned_frames": list(self.poisoned_frames),
        }

    @staticmethod
    def from_json(obj) -> "SampleRecord":
        return SampleRecord(
            sample_id=obj["sample_id"],
            original_label=int(obj["original_label"]),
            effective_label=int(obj["effective_label"]),
            video_path=obj.get("video"),
            audio_path=obj.get("audio"),
            poisoned=bool(obj.get("poisoned", False)),
            poisoned_frames=tuple(obj.get("poisoned_frames", ())),
        )


@dataclass
class DatasetManifest:
    """Declarative sample listing; media paths are relative to ``root``."""

    samples: list[SampleRecord]
    k_classes: int
    split: str
    root: Path = field(default_factory=Path)
    spec: dict | None = None

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        for rec in self.samples:
            if rec.effective_label >= self.k_classes:
                raise ValueError(f"{rec.sample_id}: label {rec.effective_label} "
                                 f">= K={self.k_classes}")
            if rec.video_path is None and rec.audio_path is None:
                raise ValueError(f"{rec.sample_id}: no modality present")

    def video_file(self, rec: SampleRecord) -> Path:
        return self.root / rec.video_path

    def audio_file(self, rec: SampleRecord) -> Path:
        return self.root / rec.audio_path

    def load_video(self, rec: SampleRecord) -> VideoClip:
        return read_clip(self.video_file(rec))

    def load_audio(self, rec: SampleRecord) -> AudioSignal:
        return read_wav(self.audio_file(rec))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        base = path.parent
        base.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            header = {"version": MANIFEST_VERSION, "K": self.k_classes,
                      "split": self.split, "spec": self.spec}
            fh.write(json.dumps(header) + "\n")
            for rec in self.samples:
                obj = rec.to_json()
                for key in ("video", "audio"):
                    if obj[key] is not None:
                        absolute = (self.root / obj[key]).resolve()
                        obj[key] = os.path.relpath(absolute, base)
                fh.write(json.dumps(obj) + "\n")

    @staticmethod
    def load(path: str | Path) -> "DatasetManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line.strip()]
        if not lines:
            raise ValueError(f"{path}: empty manifest")
        header = json.loads(lines[0])
        if header.get("version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version")
        samples = [SampleRecord.from_json(json.loads(line)) for line in lines[1:]]
        return DatasetManifest(samples, int(header["K"]), header["split"],
                               root=path.parent, spec=header.get("spec"))


# ---------------------------------------------------------------------------
# frame selection

def select_frames(t: int, policy: FramePolicy, seed: int,
                  sample_id: str) -> list[int]:
    """Sorted poisoned-frame indices for one clip, stable per (seed, id)."""
    if policy.kind == "all":
        return list(range(t))
    rng = spawn(seed, "frames", sample_id)
    if policy.kind == "fixed":
        n = int(policy.n)  # type: ignore[arg-type]
        if n > t:
            raise ValueError(f"fixed count {n} > clip length {t}")
        return sorted(int(i) for i in rng.choice(t, size=n, replace=False))
    max_n = min(int(policy.n), t)  # type: ignore[arg-type]
    count = int(rng.integers(1, max_n + 1))
    return sorted(int(i) for i in rng.choice(t, size=count, replace=False))


def _poison_video(clip: VideoClip, attack: VideoAttack,
                  frames: list[int]) -> VideoClip:
    if isinstance(attack, TriggerParams):
        return poison_frames(clip, attack, frames)
    full = len(frames) == clip.shape[0]
    return apply_natural(clip, attack, None if full else frames)


# ---------------------------------------------------------------------------
# dataset poisoning

def poison_dataset(manifest: DatasetManifest, spec: PoisonSpec,
                   out_dir: str | Path, threads: int = 1) -> DatasetManifest:
    """Materialize a poisoned copy of a training manifest.

    Exactly floor(rate * N) samples, chosen by a seeded shuffle, get their
    media rewritten under ``out_dir`` and their label set to the target;
    clean samples keep pointing at the original files untouched.
    """
    if manifest.split != "train":
        raise ValueError("poisoning is defined on the train split only")
    if spec.target_label >= manifest.k_classes:
        raise ValueError(f"target label {spec.target_label} >= K")
    n = len(manifest.samples)
    n_poison = int(np.floor(spec.rate * n))
    if spec.rate > 0.0 and n_poison < 1:
        raise ValueError(f"rate {spec.rate} selects no samples out of {n}")

    out_dir = Path(out_dir)
    media_dir = out_dir / "media"
    media_dir.mkdir(parents=True, exist_ok=True)

    order = spawn(spec.seed, "select").permutation(n)
    chosen = set(int(i) for i in order[:n_poison])

    def poison_one(idx: int) -> SampleRecord:
        rec = manifest.samples[idx]
        video_rel = rec.video_path
        audio_rel = rec.audio_path
        frames: tuple[int, ...] = ()
        if spec.video_attack is not None:
            if rec.video_path is None:
                raise ValueError(f"{rec.sample_id}: video attack but no video")
            clip = manifest.load_video(rec)
            picked = select_frames(clip.shape[0], spec.frame_policy, spec.seed,
                                   rec.sample_id)
            poisoned = _poison_video(clip, spec.video_attack, picked)
            out_path = media_dir / f"{rec.sample_id}.rvc"
            write_clip(poisoned, out_path)
            video_rel = os.path.relpath(out_path, out_dir)
            frames = tuple(picked)
        if spec.audio_attack is not None:
            if rec.audio_path is None:
                raise ValueError(f"{rec.sample_id}: audio attack but no audio")
            sig = manifest.load_audio(rec)
            out_path = media_dir / f"{rec.sample_id}.wav"
            write_wav(apply_audio_attack(sig, spec.audio_attack), out_path)
            audio_rel = os.path.relpath(out_path, out_dir)
        return replace(rec, video_path=video_rel, audio_path=audio_rel,
                       effective_label=spec.target_label, poisoned=True,
                       poisoned_frames=frames)

    poisoned_records: dict[int, SampleRecord] = {}
    chosen_sorted = sorted(chosen)
    if threads > 1 and chosen_sorted:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for idx, rec in zip(chosen_sorted,
                                pool.map(poison_one, chosen_sorted)):
                poisoned_records[idx] = rec
    else:
        for idx in chosen_sorted:
            poisoned_records[idx] = poison_one(idx)

    new_samples = []
    for idx, rec in enumerate(manifest.samples):
        if idx in poisoned_records:
            new_samples.append(poisoned_records[idx])
        else:
            # clean records keep their original absolute location
            video_rel = rec.video_path
            audio_rel = rec.audio_path
            if video_rel is not None:
                video_rel = os.path.relpath(manifest.video_file(rec).resolve(),
                                            out_dir)
            if audio_rel is not None:
                audio_rel = os.path.relpath(manifest.audio_file(rec).resolve(),
                                            out_dir)
            new_samples.append(replace(rec, video_path=video_rel,
                                       audio_path=audio_rel))

    result = DatasetManifest(new_samples, manifest.k_classes, "train",
                             root=out_dir, spec=spec.to_json())
    result.save(out_dir / "manifest.jsonl")
    return result


# ---------------------------------------------------------------------------
# evaluation-time poisoning (measures ASR)

def eval_frames(t: int, spec: PoisonSpec, sample_id: str) -> list[int]:
    count = t if spec.eval_frame_count is None else int(spec.eval_frame_count)
    if count > t:
        raise ValueError(f"eval_frame_count {count} > clip length {t}")
    if count == 0:
        return []
    return select_frames(t, FramePolicy("fixed", count), spec.seed, sample_id)


def poison_eval_clip(clip: VideoClip, spec: PoisonSpec,
                     sample_id: str) -> VideoClip:
    """Trigger applied for ASR measurement, quantized like stored media."""
    if spec.video_attack is None:
        return clip
    frames = eval_frames(clip.shape[0], spec, sample_id)
    if not frames:
        return clip
    return quantize_clip(_poison_video(clip, spec.video_attack, frames))


def poison_eval_audio(sig: AudioSignal, spec: PoisonSpec) -> AudioSignal:
    if spec.audio_attack is None:
        return sig
    return quantize_signal(apply_audio_attack(sig, spec.audio_attack))
