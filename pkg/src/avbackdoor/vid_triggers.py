"""Image-derived backdoor triggers, applied per frame.

Five generators (patch, blend, sinusoid, warp, DCT perturbation), each usable
in static mode (identical trigger on every frame) or dynamic mode (per-frame
parameter variation driven by the seeded generator).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import zoom

from .media import VideoClip, read_clip
from .rng import derive_seed, spawn

KINDS = ("badnet", "blend", "sig", "wanet", "ftrojan")
MODES = ("static", "dynamic")


@dataclass(frozen=True)
class TriggerParams:
    """Identity and knobs of one image-derived trigger.

    ``params`` holds the kind-specific settings; anything missing falls back
    to the frame-size-aware defaults of :func:`resolved_params`.
    """

    kind: str
    mode: str = "static"
    seed: int = 0
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown trigger mode {self.mode!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "mode": self.mode, "seed": self.seed,
                "params": dict(self.params)}

    @staticmethod
    def from_json(obj: Mapping) -> "TriggerParams":
        return TriggerParams(obj["kind"], obj.get("mode", "static"),
                             int(obj.get("seed", 0)), dict(obj.get("params", {})))


def resolved_params(p: TriggerParams, h: int, w: int) -> dict:
    """Kind-specific settings with frame-size-dependent defaults filled in."""
    out: dict = {}
    if p.kind == "badnet":
        out = {"patch_size": int(np.ceil(h / 14)), "patch_value": 1.0,
               "anchor": "bottom_right"}
    elif p.kind == "blend":
        # static blends a fixed trigger image (built-in checkerboard),
        # dynamic blends fresh per-frame uniform noise
        out = {"alpha": 0.1,
               "source": "checker" if p.mode == "static" else "noise"}
    elif p.kind == "sig":
        out = {"delta": 20.0 / 255.0, "freq": 6}
    elif p.kind == "wanet":
        out = {"grid_k": 4, "strength": 0.5}
    elif p.kind == "ftrojan":
        out = {"magnitude": 0.06,
               "mid": (int(np.ceil(h / 4)), int(np.ceil(w / 4))),
               "high": (h - 2, w - 2)}
    out.update(p.params)
    return out


# ---------------------------------------------------------------------------
# BadNet

def _anchor_origin(anchor, h: int, w: int, ps: int) -> tuple[int, int]:
    corners = {
        "top_left": (0, 0),
        "top_right": (0, w - ps),
        "bottom_left": (h - ps, 0),
        "bottom_right": (h - ps, w - ps),
    }
    if isinstance(anchor, str):
        if anchor not in corners:
            raise ValueError(f"unknown anchor {anchor!r}")
        return corners[anchor]
    r, c = int(anchor[0]), int(anchor[1])
    return r, c


def apply_badnet(clip: VideoClip, p: TriggerParams, t_index: int) -> np.ndarray:
    t, h, w, _ = clip.shape
    cfg = resolved_params(p, h, w)
    ps = int(cfg["patch_size"])
    if ps > min(h, w):
        raise ValueError(f"patch size {ps} exceeds frame {h}x{w}")
    if p.mode == "dynamic":
        rng = spawn(p.seed, "badnet", t_index)
        r = int(rng.integers(0, h - ps + 1))
        c = int(rng.integers(0, w - ps + 1))
    else:
        r, c = _anchor_origin(cfg["anchor"], h, w, ps)
    if r < 0 or c < 0 or r + ps > h or c + ps > w:
        raise ValueError(f"patch at ({r},{c}) size {ps} leaves frame {h}x{w}")
    out = clip.frames[t_index].copy()
    out[r : r + ps, c : c + ps, :] = float(cfg["patch_value"])
    return out


# ---------------------------------------------------------------------------
# Blend

@lru_cache(maxsize=32)
def _blend_image(path: str) -> np.ndarray:
    return read_clip(path).frames[0]


def _blend_trigger(cfg: dict, p: TriggerParams, shape, t_index: int) -> np.ndarray:
    source = cfg["source"]
    if source == "noise":
        key = ("static",) if p.mode == "static" else (t_index,)
        rng = spawn(p.seed, "blend", *key)
        return rng.uniform(0.0, 1.0, size=shape)
    if source == "checker":
        h, w, c = shape
        cell = int(cfg.get("checker_cell", 4))
        ii, jj = np.meshgrid(np.arange(h) // cell, np.arange(w) // cell,
                             indexing="ij")
        return np.repeat(((ii + jj) % 2).astype(np.float64)[:, :, None], c,
                         axis=2)
    trig = _blend_image(str(source))
    if trig.shape != tuple(shape):
        raise ValueError(f"trigger image shape {trig.shape} != frame {tuple(shape)}")
    return trig


def apply_blend(clip: VideoClip, p: TriggerParams, t_index: int) -> np.ndarray:
    _, h, w, _ = clip.shape
    cfg = resolved_params(p, h, w)
    alpha = float(cfg["alpha"])
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"blend alpha must be in [0,1], got {alpha}")
    frame = clip.frames[t_index]
    if alpha == 0.0:
        return frame.copy()
    trig = _blend_trigger(cfg, p, frame.shape, t_index)
    return np.clip((1.0 - alpha) * frame + alpha * trig, 0.0, 1.0)


# ---------------------------------------------------------------------------
# SIG (superimposed sinusoid over image columns)

def apply_sig(clip: VideoClip, p: TriggerParams, t_index: int) -> np.ndarray:
    _, h, w, _ = clip.shape
    cfg = resolved_params(p, h, w)
    delta = float(cfg["delta"])
    freq = int(cfg["freq"])
    if freq < 1:
        raise ValueError(f"sig freq must be >= 1, got {freq}")
    f_t = freq + (t_index % 4) if p.mode == "dynamic" else freq
    cols = np.arange(w)
    wave = delta * np.sin(2.0 * np.pi * cols * f_t / w)
    return np.clip(clip.frames[t_index] + wave[None, :, None], 0.0, 1.0)


# ---------------------------------------------------------------------------
# WaNet (content warping)

def warp_scale(strength: float, grid_k: int, h: int, w: int) -> float:
    """Pixel scale applied to the normalized control grid."""
    return strength * 0.5 * grid_k / max(h, w)


def build_warp_field(p: TriggerParams, h: int, w: int, frame_seed: int) -> np.ndarray:
    """Seeded smooth displacement field, shape (H, W, 2) in pixels (dy, dx).

    A grid_k x grid_k x 2 control grid is drawn uniform in [-1, 1],
    normalized by its mean absolute value, scaled by
    ``warp_scale(strength, grid_k, H, W)`` and bicubically upsampled.
    """
    cfg = resolved_params(p, h, w)
    k = int(cfg["grid_k"])
    s = float(cfg["strength"])
    if k < 2:
        raise ValueError(f"grid_k must be >= 2, got {k}")
    if not (0.0 < s <= 1.0):
        raise ValueError(f"strength must be in (0,1], got {s}")
    return _warp_field_cached(p.seed, k, s, h, w, frame_seed)


def field_from_control_grid(grid: np.ndarray, strength: float, h: int,
                            w: int) -> np.ndarray:
    """Normalize, scale and bicubically upsample a control grid to (H, W, 2)."""
    k = grid.shape[0]
    mean_abs = np.abs(grid).mean()
    if mean_abs == 0.0:
        return np.zeros((h, w, 2))
    small = grid / mean_abs * warp_scale(strength, k, h, w)
    out = np.empty((h, w, 2))
    for axis in range(2):
        out[:, :, axis] = zoom(small[:, :, axis], (h / k, w / k), order=3,
                               mode="grid-mirror", grid_mode=True)
    return out


@lru_cache(maxsize=256)
def _warp_field_cached(seed: int, k: int, s: float, h: int, w: int,
                       frame_seed: int) -> np.ndarray:
    rng = spawn(seed, "wanet", frame_seed)
    grid = rng.uniform(-1.0, 1.0, size=(k, k, 2))
    out = field_from_control_grid(grid, s, h, w)
    out.setflags(write=False)
    return out


def bilinear_warp(frame: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward-warp a frame by a pixel displacement field, borders clamped."""
    h, w, _ = frame.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sy = np.clip(yy + flow[:, :, 0], 0.0, h - 1.0)
    sx = np.clip(xx + flow[:, :, 1], 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, :, None]
    wx = (sx - x0)[:, :, None]
    out = (frame[y0, x0] * (1 - wy) * (1 - wx)
           + frame[y0, x1] * (1 - wy) * wx
           + frame[y1, x0] * wy * (1 - wx)
           + frame[y1, x1] * wy * wx)
    return np.clip(out, 0.0, 1.0)


def apply_wanet(clip: VideoClip, p: TriggerParams, t_index: int) -> np.ndarray:
    _, h, w, _ = clip.shape
    frame_seed = t_index if p.mode == "dynamic" else 0
    flow = build_warp_field(p, h, w, frame_seed)
    return bilinear_warp(clip.frames[t_index], flow)


# ---------------------------------------------------------------------------
# FTrojan (mid + high frequency DCT perturbation)

def _ftrojan_coeffs(p: TriggerParams, cfg: dict, h: int, w: int,
                    t_index: int) -> tuple[tuple[int, int], tuple[int, int]]:
    if p.mode == "dynamic":
        band = int(np.ceil((h + w) / 4))
        uu, vv = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        candidates = np.argwhere(uu + vv >= band)
        rng = spawn(p.seed, "ftrojan", t_index)
        picks = rng.choice(len(candidates), size=2, replace=False)
        return tuple(candidates[picks[0]]), tuple(candidates[picks[1]])
    mid = tuple(int(v) for v in cfg["mid"])
    high = tuple(int(v) for v in cfg["high"])
    for u, v in (mid, high):
        if not (0 <= u < h and 0 <= v < w):
            raise ValueError(f"DCT index ({u},{v}) outside {h}x{w}")
    return mid, high  # type: ignore[return-value]


def apply_ftrojan(clip: VideoClip, p: TriggerParams, t_index: int) -> np.ndarray:
    _, h, w, _ = clip.shape
    cfg = resolved_params(p, h, w)
    mag = float(cfg["magnitude"])
    mid, high = _ftrojan_coeffs(p, cfg, h, w, t_index)
    coeffs = dctn(clip.frames[t_index], type=2, norm="ortho", axes=(0, 1))
    coeffs[mid[0], mid[1], :] += mag
    coeffs[high[0], high[1], :] += mag
    out = idctn(coeffs, type=2, norm="ortho", axes=(0, 1))
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# dispatch

_APPLY = {
    "badnet": apply_badnet,
    "blend": apply_blend,
    "sig": apply_sig,
    "wanet": apply_wanet,
    "ftrojan": apply_ftrojan,
}


def apply_trigger_frame(clip: VideoClip, p: TriggerParams, t_index: int) -> np.ndarray:
    return _APPLY[p.kind](clip, p, t_index)


def poison_frames(clip: VideoClip, p: TriggerParams,
                  frames: Iterable[int]) -> VideoClip:
    """Apply the trigger to the listed frames; all others stay bit-identical."""
    t = clip.shape[0]
    wanted = sorted(set(int(i) for i in frames))
    if wanted and (wanted[0] < 0 or wanted[-1] >= t):
        raise ValueError(f"frame indices {wanted} outside [0,{t})")
    out = clip.frames.copy()
    for i in wanted:
        out[i] = apply_trigger_frame(clip, p, i)
    return VideoClip(out, clip.frame_rate)


def trigger_fingerprint(p: TriggerParams, h: int, w: int) -> int:
    """Stable hash of the resolved trigger config (provenance records)."""
    cfg = resolved_params(p, h, w)
    parts = [p.kind, p.mode, p.seed] + [f"{k}={cfg[k]}" for k in sorted(cfg)]
    return derive_seed(*[str(x) for x in parts])
