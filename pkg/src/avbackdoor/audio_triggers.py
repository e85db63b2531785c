"""Audio backdoor attacks and the log-Mel front end.

Two waveform attacks (an 800 Hz sine component and 5-6 kHz band-limited
noise), plus the 80-band x 256-column log-Mel transform consumed by the
audio classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .media import AudioSignal, MelSpectrogram
from .rng import spawn

AUDIO_KINDS = ("sine", "band_noise")


@dataclass(frozen=True)
class AudioAttackParams:
    kind: str
    amplitude: float = 0.005
    sine_freq: float = 800.0
    band: tuple[float, float] = (5000.0, 6000.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in AUDIO_KINDS:
            raise ValueError(f"unknown audio attack kind {self.kind!r}")
        if not (0.0 <= self.amplitude <= 1.0):
            raise ValueError(f"amplitude must be in [0,1], got {self.amplitude}")
        lo, hi = self.band
        if not (0.0 < lo < hi):
            raise ValueError(f"band must satisfy 0 < low < high, got {self.band}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "amplitude": self.amplitude,
                "sine_freq": self.sine_freq, "band": list(self.band),
                "seed": self.seed}

    @staticmethod
    def from_json(obj: Mapping) -> "AudioAttackParams":
        return AudioAttackParams(
            obj["kind"], float(obj.get("amplitude", 0.005)),
            float(obj.get("sine_freq", 800.0)),
            tuple(obj.get("band", (5000.0, 6000.0))),  # type: ignore[arg-type]
            int(obj.get("seed", 0)))


def apply_sine(sig: AudioSignal, p: AudioAttackParams) -> AudioSignal:
    """Superimpose a low-amplitude sine component."""
    if p.sine_freq >= sig.sample_rate / 2:
        raise ValueError(
            f"sine {p.sine_freq} Hz aliases at sample rate {sig.sample_rate}")
    if p.amplitude == 0.0:
        return AudioSignal(sig.samples.copy(), sig.sample_rate)
    n = np.arange(sig.samples.size)
    wave = p.amplitude * np.sin(2.0 * np.pi * p.sine_freq * n / sig.sample_rate)
    return AudioSignal(np.clip(sig.samples + wave, -1.0, 1.0), sig.sample_rate)


def band_noise_component(p: AudioAttackParams, length: int,
                         sample_rate: int) -> np.ndarray:
    """The injected waveform: seeded Gaussian noise band-passed in the DFT
    basis and rescaled to peak amplitude."""
    lo, hi = p.band
    if hi >= sample_rate / 2:
        raise ValueError(f"band {p.band} exceeds Nyquist for {sample_rate} Hz")
    rng = spawn(p.seed, "band_noise", length)
    white = rng.standard_normal(length)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(length, d=1.0 / sample_rate)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    shaped = np.fft.irfft(spectrum, n=length)
    peak = np.abs(shaped).max()
    if peak == 0.0:
        return np.zeros(length)
    return shaped * (p.amplitude / peak)


def apply_band_noise(sig: AudioSignal, p: AudioAttackParams) -> AudioSignal:
    """Add seeded band-limited noise at peak amplitude ``p.amplitude``."""
    if p.amplitude == 0.0:
        return AudioSignal(sig.samples.copy(), sig.sample_rate)
    noise = band_noise_component(p, sig.samples.size, sig.sample_rate)
    return AudioSignal(np.clip(sig.samples + noise, -1.0, 1.0), sig.sample_rate)


def apply_audio_attack(sig: AudioSignal, p: AudioAttackParams) -> AudioSignal:
    if p.kind == "sine":
        return apply_sine(sig, p)
    return apply_band_noise(sig, p)


# ---------------------------------------------------------------------------
# log-Mel spectrogram front end

@dataclass(frozen=True)
class MelParams:
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    fmin: float = 20.0
    fmax: float | None = None  # defaults to sample_rate / 2
    target_frames: int = 256
    log_eps: float = 1e-6


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_break_freqs(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """n_mels + 2 filter corner frequencies, uniform on the HTK Mel scale."""
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mels)


def mel_filter_response(breaks: np.ndarray, band: int, freqs) -> np.ndarray:
    """Triangular response of one filter evaluated at arbitrary frequencies."""
    lo, center, hi = breaks[band], breaks[band + 1], breaks[band + 2]
    f = np.asarray(freqs, dtype=np.float64)
    up = (f - lo) / (center - lo)
    down = (hi - f) / (hi - center)
    return np.clip(np.minimum(up, down), 0.0, None)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float,
                   fmax: float) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filter matrix, unit peak."""
    breaks = mel_break_freqs(n_mels, fmin, fmax)
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.empty((n_mels, fft_freqs.size))
    for band in range(n_mels):
        fb[band] = mel_filter_response(breaks, band, fft_freqs)
    fb.setflags(write=False)
    return fb


def stft_magnitude(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """|STFT| with a periodic Hann window, no padding: (n_fft//2+1, frames)."""
    if samples.size < n_fft:
        raise ValueError(f"signal of {samples.size} samples shorter than one "
                         f"window ({n_fft})")
    n_frames = 1 + (samples.size - n_fft) // hop
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * window
    return np.abs(np.fft.rfft(frames, axis=1)).T


def mel_spectrogram(sig: AudioSignal, p: MelParams = MelParams()) -> MelSpectrogram:
    """Log-Mel image resampled along time to exactly ``target_frames`` columns."""
    fmax = p.fmax if p.fmax is not None else sig.sample_rate / 2.0
    mag = stft_magnitude(sig.samples, p.n_fft, p.hop)
    fb = mel_filterbank(p.n_mels, p.n_fft, sig.sample_rate, p.fmin, fmax)
    mel = np.log(fb @ mag + p.log_eps)
    n_cols = mel.shape[1]
    if n_cols == p.target_frames:
        out = mel
    else:
        old_x = np.arange(n_cols, dtype=np.float64)
        new_x = np.linspace(0.0, n_cols - 1.0, p.target_frames)
        out = np.empty((p.n_mels, p.target_frames))
        for band in range(p.n_mels):
            out[band] = np.interp(new_x, old_x, mel[band])
    return MelSpectrogram(out)
