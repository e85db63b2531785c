"""Natural video backdoors: frame lag, compression glitch, motion blur.

These mimic artifacts a benign pipeline could produce, so a poisoned sample
looks unremarkable to human inspection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.ndimage import convolve

from .dct import jpeg_degrade_block, scaled_quant_table
from .media import VideoClip
from .rng import spawn

NATURAL_KINDS = ("frame_lag", "video_corruption", "motion_blur")


@dataclass(frozen=True)
class NaturalParams:
    """Settings for one natural trigger."""

    kind: str
    seed: int = 0
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in NATURAL_KINDS:
            raise ValueError(f"unknown natural trigger kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "params": dict(self.params)}

    @staticmethod
    def from_json(obj: Mapping) -> "NaturalParams":
        return NaturalParams(obj["kind"], int(obj.get("seed", 0)),
                             dict(obj.get("params", {})))


def natural_defaults(kind: str) -> dict:
    if kind == "frame_lag":
        return {"lag_frames": 3}
    if kind == "video_corruption":
        return {"block": 8, "quality": 5, "block_fraction": 0.3}
    if kind == "motion_blur":
        return {"kernel_len": 9, "angle_deg": 45.0}
    raise ValueError(kind)


def _cfg(p: NaturalParams) -> dict:
    out = natural_defaults(p.kind)
    out.update(p.params)
    return out


# ---------------------------------------------------------------------------
# frame lag (freeze-start delay; a real lag cannot see the future)

def apply_frame_lag(clip: VideoClip, p: NaturalParams,
                    frames: Iterable[int] | None = None) -> VideoClip:
    t = clip.shape[0]
    lag = int(_cfg(p)["lag_frames"])
    if not (0 <= lag < t):
        raise ValueError(f"lag {lag} must satisfy 0 <= lag < T={t}")
    if lag == 0:
        return VideoClip(clip.frames.copy(), clip.frame_rate)
    out = clip.frames.copy()
    targets = range(t) if frames is None else sorted(set(int(i) for i in frames))
    for i in targets:
        out[i] = clip.frames[max(i - lag, 0)]
    return VideoClip(out, clip.frame_rate)


# ---------------------------------------------------------------------------
# motion blur (per-frame linear kernel, same every frame)

def motion_blur_kernel(kernel_len: int, angle_deg: float) -> np.ndarray:
    """Normalized linear-motion kernel: kernel_len taps of 1/len along the
    angle, bilinearly rasterized onto a kernel_len x kernel_len grid."""
    if kernel_len < 1 or kernel_len % 2 == 0:
        raise ValueError(f"kernel_len must be odd >= 1, got {kernel_len}")
    if kernel_len == 1:
        return np.array([[1.0]])
    k = np.zeros((kernel_len, kernel_len))
    center = (kernel_len - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    weight = 1.0 / kernel_len
    for step in range(kernel_len):
        r = step - center
        y = center - r * np.sin(theta)
        x = center + r * np.cos(theta)
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for dy, dx, frac in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                             (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            yy, xx = y0 + dy, x0 + dx
            if 0 <= yy < kernel_len and 0 <= xx < kernel_len and frac > 0:
                k[yy, xx] += weight * frac
    return k


def apply_motion_blur(clip: VideoClip, p: NaturalParams,
                      frames: Iterable[int] | None = None) -> VideoClip:
    cfg = _cfg(p)
    kernel = motion_blur_kernel(int(cfg["kernel_len"]), float(cfg["angle_deg"]))
    if kernel.shape == (1, 1):
        return VideoClip(clip.frames.copy(), clip.frame_rate)
    t = clip.shape[0]
    out = clip.frames.copy()
    targets = range(t) if frames is None else sorted(set(int(i) for i in frames))
    for i in targets:
        for c in range(clip.shape[3]):
            out[i, :, :, c] = convolve(clip.frames[i, :, :, c], kernel,
                                       mode="reflect")
    np.clip(out, 0.0, 1.0, out=out)
    return VideoClip(out, clip.frame_rate)


# ---------------------------------------------------------------------------
# video corruption (JPEG-style quantization of a random subset of blocks)

def _block_tiles(h: int, w: int, b: int) -> list[tuple[int, int, int, int]]:
    tiles = []
    for r in range(0, h, b):
        for c in range(0, w, b):
            tiles.append((r, min(r + b, h), c, min(c + b, w)))
    return tiles


def apply_video_corruption(clip: VideoClip, p: NaturalParams,
                           frames: Iterable[int] | None = None) -> VideoClip:
    cfg = _cfg(p)
    b = int(cfg["block"])
    fraction = float(cfg["block_fraction"])
    if not (0.0 <= fraction <= 1.0):
        raise ValueError(f"block_fraction must be in [0,1], got {fraction}")
    if fraction == 0.0:
        return VideoClip(clip.frames.copy(), clip.frame_rate)
    qtable = scaled_quant_table(float(cfg["quality"]))
    t, h, w, ch = clip.shape
    tiles = _block_tiles(h, w, b)
    n_sel = int(round(fraction * len(tiles)))
    out = clip.frames.copy()
    targets = range(t) if frames is None else sorted(set(int(i) for i in frames))
    for i in targets:
        rng = spawn(p.seed, "corrupt", i)
        chosen = rng.choice(len(tiles), size=n_sel, replace=False)
        for idx in chosen:
            r0, r1, c0, c1 = tiles[idx]
            for c in range(ch):
                out[i, r0:r1, c0:c1, c] = jpeg_degrade_block(
                    clip.frames[i, r0:r1, c0:c1, c], qtable)
    return VideoClip(out, clip.frame_rate)


_APPLY = {
    "frame_lag": apply_frame_lag,
    "video_corruption": apply_video_corruption,
    "motion_blur": apply_motion_blur,
}


def apply_natural(clip: VideoClip, p: NaturalParams,
                  frames: Iterable[int] | None = None) -> VideoClip:
    """Apply a natural trigger, optionally restricted to a frame subset."""
    return _APPLY[p.kind](clip, p, frames)
