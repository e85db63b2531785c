"""In-memory media types and bit-exact file I/O.

Video lives in the raw "RVC" container (no codec, so pixel-level tests stay
exact), audio in PCM16 mono WAV, spectrograms in a small binary format.
Values are stored quantized (8-bit video, 16-bit audio) and promoted to
floats in memory: video in [0, 1], audio in [-1, 1].
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RVC_MAGIC = b"RVC1"
MEL_MAGIC = b"MEL80x25"
MEL_VERSION = 1
MEL_SHAPE = (80, 256)


class FormatError(ValueError):
    """Raised when a media file violates its container contract."""


@dataclass(frozen=True)
class VideoClip:
    """A T x H x W x C stack of unit-interval frames."""

    frames: np.ndarray
    frame_rate: int = 8

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4:
            raise ValueError(f"frames must be 4-d (T,H,W,C), got shape {f.shape}")
        t, h, w, c = f.shape
        if t < 1 or h < 1 or w < 1:
            raise ValueError(f"empty clip dimensions {f.shape}")
        if c not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {c}")
        if not (1 <= int(self.frame_rate) <= 255):
            raise ValueError(f"frame_rate must fit in u8, got {self.frame_rate}")
        if not np.isfinite(f).all():
            raise ValueError("clip contains non-finite values")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ValueError("clip values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class AudioSignal:
    """Mono PCM waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = self.samples
        if s.ndim != 1:
            raise ValueError(f"samples must be 1-d, got shape {s.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.isfinite(s).all():
            raise ValueError("signal contains non-finite values")
        if s.size and (s.min() < -1.0 or s.max() > 1.0):
            raise ValueError("samples must lie in [-1, 1]")


@dataclass(frozen=True)
class MelSpectrogram:
    """Fixed 80-band x 256-column log-Mel image."""

    bins: np.ndarray

    def __post_init__(self):
        if self.bins.shape != MEL_SHAPE:
            raise ValueError(f"mel shape must be {MEL_SHAPE}, got {self.bins.shape}")
        if not np.isfinite(self.bins).all():
            raise ValueError("mel bins contain non-finite values")


@dataclass(frozen=True)
class LabeledSample:
    """One dataset element: at least one modality plus its label."""

    sample_id: str
    label: int
    video: VideoClip | None = None
    audio: AudioSignal | None = None
    poisoned: bool = False

    def __post_init__(self):
        if self.video is None and self.audio is None:
            raise ValueError("sample needs at least one modality")
        if self.label < 0:
            raise ValueError("label must be non-negative")


# ---------------------------------------------------------------------------
# quantizers (round half up, matching on-disk storage)

def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Unit-interval floats to the nearest 8-bit level, half rounded up."""
    return np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.uint8)


def u8_to_unit(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def quantize_clip(clip: VideoClip) -> VideoClip:
    """The clip as it would look after a write/read round trip."""
    return VideoClip(u8_to_unit(quantize_u8(clip.frames)), clip.frame_rate)


def quantize_pcm16(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values * 32768.0 + 0.5), -32768, 32767).astype(np.int16)


def pcm16_to_unit(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 32768.0


def quantize_signal(sig: AudioSignal) -> AudioSignal:
    return AudioSignal(pcm16_to_unit(quantize_pcm16(sig.samples)), sig.sample_rate)


# ---------------------------------------------------------------------------
# RVC video container

def write_clip(clip: VideoClip, path: str | Path) -> None:
    t, h, w, c = clip.shape
    payload = quantize_u8(clip.frames).tobytes()
    with open(path, "wb") as fh:
        fh.write(RVC_MAGIC)
        fh.write(struct.pack("<IIII", t, h, w, c))
        fh.write(struct.pack("<B", clip.frame_rate))
        fh.write(payload)


def read_clip(path: str | Path) -> VideoClip:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 21 or data[:4] != RVC_MAGIC:
        raise FormatError(f"{path}: not an RVC file (bad magic or short header)")
    t, h, w, c = struct.unpack("<IIII", data[4:20])
    if c not in (1, 3):
        raise FormatError(f"{path}: unsupported channel count {c}")
    if t < 1 or h < 1 or w < 1:
        raise FormatError(f"{path}: degenerate dimensions T={t} H={h} W={w}")
    (frame_rate,) = struct.unpack("<B", data[20:21])
    expected = t * h * w * c
    payload = data[21:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    frames = u8_to_unit(np.frombuffer(payload, dtype=np.uint8).reshape(t, h, w, c))
    return VideoClip(frames, frame_rate)


# ---------------------------------------------------------------------------
# WAV (PCM16 mono only)

def write_wav(sig: AudioSignal, path: str | Path) -> None:
    pcm = quantize_pcm16(sig.samples)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sig.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> AudioSignal:
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getcomptype() != "NONE":
                raise FormatError(f"{path}: compressed WAV not supported")
            if fh.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: malformed RIFF/WAVE ({exc})") from exc
    samples = pcm16_to_unit(np.frombuffer(raw, dtype="<i2"))
    return AudioSignal(samples, rate)


# ---------------------------------------------------------------------------
# Mel spectrogram container

def write_mel(mel: MelSpectrogram, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(MEL_MAGIC)
        fh.write(struct.pack("<I", MEL_VERSION))
        fh.write(mel.bins.astype("<f4").tobytes())


def read_mel(path: str | Path) -> MelSpectrogram:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:8] != MEL_MAGIC:
        raise FormatError(f"{path}: not a MEL file")
    (version,) = struct.unpack("<I", data[8:12])
    if version != MEL_VERSION:
        raise FormatError(f"{path}: unsupported MEL version {version}")
    expected = MEL_SHAPE[0] * MEL_SHAPE[1] * 4
    if len(data) - 12 != expected:
        raise FormatError(f"{path}: truncated MEL payload")
    bins = np.frombuffer(data[12:], dtype="<f4").reshape(MEL_SHAPE).astype(np.float64)
    return MelSpectrogram(bins)
