"""Procedural audiovisual toy datasets for the acceptance experiments.

Each class is identifiable from either modality alone: the video shows a
colored square whose hue encodes the class, brightening over time while it
moves along a class-specific direction; the audio carries a class-specific
tone over white noise.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .media import AudioSignal, VideoClip, write_clip, write_wav
from .poison import DatasetManifest, SampleRecord
from .rng import spawn


@dataclass(frozen=True)
class SynthSpec:
    k_classes: int = 8
    n_train: int = 160
    n_test: int = 120
    t_frames: int = 16
    height: int = 32
    width: int = 32
    frame_rate: int = 8
    audio_seconds: float = 1.0
    sample_rate: int = 16000
    tone_base_hz: float = 900.0
    tone_ratio: float = 1.26
    tone_amplitude: float = 0.3
    snr_db: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.k_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.t_frames < 1:
            raise ValueError("need at least 1 frame")

    def class_color(self, label: int) -> np.ndarray:
        return np.array(colorsys.hsv_to_rgb(label / self.k_classes, 1.0, 1.0))

    def class_tone_hz(self, label: int) -> float:
        # geometric spacing keeps every class tone clear of the audio-attack
        # bands (800 Hz, 5-6 kHz) and locally distinct on the Mel axis
        return self.tone_base_hz * self.tone_ratio ** label

    def noise_sigma(self) -> float:
        tone_power = self.tone_amplitude ** 2 / 2.0
        return float(np.sqrt(tone_power / 10.0 ** (self.snr_db / 10.0)))


def make_video(spec: SynthSpec, label: int, rng: np.random.Generator) -> VideoClip:
    t, h, w = spec.t_frames, spec.height, spec.width
    background = rng.uniform(0.25, 0.75, size=(h, w, 3))
    jitter = rng.uniform(-1.5, 1.5, size=2)
    angle = 2.0 * np.pi * label / spec.k_classes
    direction = np.array([np.sin(angle), np.cos(angle)])  # (row, col)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0]) + jitter
    color = spec.class_color(label)
    frames = np.empty((t, h, w, 3))
    for i in range(t):
        progress = i / max(t - 1, 1)
        # the square grows, brightens and saturates over the clip, giving
        # every clip a temporal appearance profile (timing artifacts such as
        # a lagged start are then observable, not just positional shifts)
        half = 1 + int(round(2 * progress))
        brightness = 0.3 + 0.7 * progress
        shade = (1.0 - progress) * np.ones(3) + progress * color
        step = (i - (t - 1) / 2.0) * 0.8
        pos = np.rint(center + step * direction).astype(int)
        r0 = int(np.clip(pos[0] - half, 0, h - 2 * half - 1))
        c0 = int(np.clip(pos[1] - half, 0, w - 2 * half - 1))
        frame = background.copy()
        frame[r0 : r0 + 2 * half + 1, c0 : c0 + 2 * half + 1] = shade * brightness
        frames[i] = frame
    return VideoClip(np.clip(frames, 0.0, 1.0), spec.frame_rate)


def make_audio(spec: SynthSpec, label: int, rng: np.random.Generator) -> AudioSignal:
    n = int(round(spec.audio_seconds * spec.sample_rate))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    idx = np.arange(n)
    tone = spec.tone_amplitude * np.sin(
        2.0 * np.pi * spec.class_tone_hz(label) * idx / spec.sample_rate + phase)
    noise = rng.normal(0.0, spec.noise_sigma(), size=n)
    return AudioSignal(np.clip(tone + noise, -1.0, 1.0), spec.sample_rate)


def generate(spec: SynthSpec, out_dir: str | Path) -> tuple[DatasetManifest,
                                                            DatasetManifest]:
    """Write media plus train/test manifests; fully seed-deterministic."""
    out_dir = Path(out_dir)
    media_dir = out_dir / "media"
    media_dir.mkdir(parents=True, exist_ok=True)
    manifests = []
    for split, count in (("train", spec.n_train), ("test", spec.n_test)):
        records = []
        for i in range(count):
            label = i % spec.k_classes
            sample_id = f"{split}-{i:04d}"
            rng = spawn(spec.seed, split, i)
            clip = make_video(spec, label, rng)
            sig = make_audio(spec, label, rng)
            video_path = f"media/{sample_id}.rvc"
            audio_path = f"media/{sample_id}.wav"
            write_clip(clip, out_dir / video_path)
            write_wav(sig, out_dir / audio_path)
            records.append(SampleRecord(sample_id, label, label,
                                        video_path=video_path,
                                        audio_path=audio_path))
        manifest = DatasetManifest(records, spec.k_classes, split, root=out_dir)
        manifest.save(out_dir / f"{split}.jsonl")
        manifests.append(manifest)
    return manifests[0], manifests[1]
