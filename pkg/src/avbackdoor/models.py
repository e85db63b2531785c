"""Desk-scale classifiers for video and audio, plus fusion wrappers.

Video: per-frame conv(3->8, stride 2) + ReLU, conv(8->16, stride 2) + ReLU,
spatial global average, temporal mean, linear head.  Audio: the same conv
stack over the 80x256 log-Mel image without the temporal step.  The 16-wide
pooled vector is the penultimate feature exposed to defenses and fusion.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import Conv2d, Linear, relu, softmax
from .rng import spawn

CHECKPOINT_MAGIC = b"BDFM"
CHECKPOINT_VERSION = 1

FEATURE_DIM = 16

# fixed input normalizations baked into the architectures
VIDEO_NORM = {"offset": 0.5, "scale": 2.0}     # z = (x - 0.5) * 2
AUDIO_NORM = {"offset": 1.75, "scale": 1.0}    # z = logmel - 1.75


class _ConvBackbone:
    """conv-relu-conv-relu-GAP stack shared by both modalities."""

    def __init__(self, c_in: int, seed: int, dtype=np.float32):
        self.conv1 = Conv2d(c_in, 8, spawn(seed, "conv1"), dtype=dtype)
        self.conv2 = Conv2d(8, FEATURE_DIM, spawn(seed, "conv2"), dtype=dtype)
        self._m1: np.ndarray | None = None
        self._m2: np.ndarray | None = None
        self._hw2: tuple[int, int] = (0, 0)

    def gap_features(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        a1 = self.conv1.forward(x, train)
        r1 = relu(a1)
        a2 = self.conv2.forward(r1, train)
        r2 = relu(a2)
        if train:
            self._m1 = a1 > 0
            self._m2 = a2 > 0
            self._hw2 = r2.shape[2], r2.shape[3]
        return r2.mean(axis=(2, 3))

    def conv2_activity(self, x: np.ndarray) -> np.ndarray:
        """Mean post-ReLU activation of each conv2 channel."""
        r2 = relu(self.conv2.forward(relu(self.conv1.forward(x))))
        return r2.mean(axis=(0, 2, 3))

    def backward_from_gap(self, dgap: np.ndarray) -> None:
        h2, w2 = self._hw2
        da2 = self._m2 * (dgap[:, :, None, None] / (h2 * w2))
        dr1 = self.conv2.backward(da2)
        da1 = dr1 * self._m1
        self.conv1.backward(da1)
        self._m1 = self._m2 = None

    def layers(self):
        return [("conv1", self.conv1), ("conv2", self.conv2)]


class _SingleModalityModel:
    """Shared plumbing: head, channel mask, parameter access."""

    kind = ""

    def __init__(self, k_classes: int, c_in: int, seed: int, dtype=np.float32):
        self.k_classes = k_classes
        self.c_in = c_in
        self.seed = seed
        self.dtype = dtype
        self.backbone = _ConvBackbone(c_in, seed, dtype)
        self.head = Linear(FEATURE_DIM, k_classes, spawn(seed, "head"),
                           dtype=dtype)
        self.channel_mask = np.ones(FEATURE_DIM, dtype=dtype)

    # -- parameters -------------------------------------------------------
    def params(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for lname, layer in self.backbone.layers():
            out += [(f"{lname}.w", layer.w), (f"{lname}.b", layer.b)]
        out += [("head.w", self.head.w), ("head.b", self.head.b)]
        return out

    def grads(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for lname, layer in self.backbone.layers():
            out += [(f"{lname}.w", layer.gw), (f"{lname}.b", layer.gb)]
        out += [("head.w", self.head.gw), ("head.b", self.head.gb)]
        return out

    def zero_grad(self) -> None:
        for _, layer in self.backbone.layers():
            layer.zero_grad()
        self.head.zero_grad()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return self.params() + [("channel_mask", self.channel_mask)]

    def descriptor(self) -> dict:
        return {"kind": self.kind, "k": self.k_classes, "c_in": self.c_in,
                "feature_dim": FEATURE_DIM,
                "arrays": [[n, list(a.shape)] for n, a in self.state_arrays()]}

    def copy(self, dtype=None):
        dtype = dtype or self.dtype
        dup = type(self)(self.k_classes, seed=self.seed, dtype=dtype)
        for (_, src), (_, dst) in zip(self.state_arrays(), dup.state_arrays()):
            dst[...] = src.astype(dtype)
        return dup

    def with_channel_mask(self, mask: np.ndarray):
        dup = self.copy()
        dup.channel_mask[...] = np.asarray(mask, dtype=dup.dtype)
        return dup

    # -- inference over pooled features ------------------------------------
    def _head_logits(self, feats: np.ndarray, train: bool) -> np.ndarray:
        return self.head.forward(feats, train)


class VideoClassifier(_SingleModalityModel):
    kind = "video"
    modality = "video"

    def __init__(self, k_classes: int, c_in: int = 3, seed: int = 0,
                 dtype=np.float32):
        super().__init__(k_classes, c_in, seed, dtype)
        self._nt: tuple[int, int] = (0, 0)

    def _prep(self, clips: np.ndarray) -> np.ndarray:
        z = (np.asarray(clips, dtype=self.dtype) - VIDEO_NORM["offset"]
             ) * VIDEO_NORM["scale"]
        n, t, h, w, c = z.shape
        return np.ascontiguousarray(z.transpose(0, 1, 4, 2, 3)).reshape(
            n * t, c, h, w)

    def features(self, clips: np.ndarray, train: bool = False) -> np.ndarray:
        """Penultimate 16-d vector: GAP per frame, then temporal mean."""
        n, t = clips.shape[0], clips.shape[1]
        gap = self.backbone.gap_features(self._prep(clips), train)
        gap = gap * self.channel_mask
        if train:
            self._nt = (n, t)
        return gap.reshape(n, t, FEATURE_DIM).mean(axis=1)

    def logits(self, clips: np.ndarray) -> np.ndarray:
        return self._head_logits(self.features(clips), False)

    def forward_train(self, clips: np.ndarray) -> np.ndarray:
        return self._head_logits(self.features(clips, train=True), True)

    def backward(self, dlogits: np.ndarray) -> None:
        dfeats = self.head.backward(dlogits) * self.channel_mask
        n, t = self._nt
        dgap = np.broadcast_to(dfeats[:, None, :] / t,
                               (n, t, FEATURE_DIM)).reshape(n * t, FEATURE_DIM)
        self.backbone.backward_from_gap(np.asarray(dgap, dtype=self.dtype))

    def channel_activity(self, clips: np.ndarray) -> np.ndarray:
        return self.backbone.conv2_activity(self._prep(clips))

    def logits_media(self, batch: dict) -> np.ndarray:
        return self.logits(batch["video"])

    def features_media(self, batch: dict) -> np.ndarray:
        return self.features(batch["video"])

    def probs_media(self, batch: dict) -> np.ndarray:
        return softmax(self.logits_media(batch))


class AudioClassifier(_SingleModalityModel):
    kind = "audio"
    modality = "audio"

    def __init__(self, k_classes: int, c_in: int = 1, seed: int = 0,
                 dtype=np.float32):
        super().__init__(k_classes, c_in, seed, dtype)

    def _prep(self, mels: np.ndarray) -> np.ndarray:
        z = (np.asarray(mels, dtype=self.dtype) - AUDIO_NORM["offset"]
             ) * AUDIO_NORM["scale"]
        return z[:, None, :, :]

    def features(self, mels: np.ndarray, train: bool = False) -> np.ndarray:
        gap = self.backbone.gap_features(self._prep(mels), train)
        return gap * self.channel_mask

    def logits(self, mels: np.ndarray) -> np.ndarray:
        return self._head_logits(self.features(mels), False)

    def forward_train(self, mels: np.ndarray) -> np.ndarray:
        return self._head_logits(self.features(mels, train=True), True)

    def backward(self, dlogits: np.ndarray) -> None:
        dfeats = self.head.backward(dlogits) * self.channel_mask
        self.backbone.backward_from_gap(dfeats.astype(self.dtype))

    def channel_activity(self, mels: np.ndarray) -> np.ndarray:
        return self.backbone.conv2_activity(self._prep(mels))

    def logits_media(self, batch: dict) -> np.ndarray:
        return self.logits(batch["mel"])

    def features_media(self, batch: dict) -> np.ndarray:
        return self.features(batch["mel"])

    def probs_media(self, batch: dict) -> np.ndarray:
        return softmax(self.logits_media(batch))


class EarlyFusionModel:
    """Linear head over the concatenated (frozen) backbone features."""

    kind = "early_fusion"
    modality = "av"

    def __init__(self, video: VideoClassifier, audio: AudioClassifier,
                 seed: int = 0):
        if video.k_classes != audio.k_classes:
            raise ValueError("backbone class counts differ")
        self.video = video
        self.audio = audio
        self.k_classes = video.k_classes
        self.seed = seed
        self.head = Linear(2 * FEATURE_DIM, video.k_classes,
                           spawn(seed, "fusion_head"), dtype=video.dtype)

    def features_media(self, batch: dict) -> np.ndarray:
        return np.concatenate([self.video.features(batch["video"]),
                               self.audio.features(batch["mel"])], axis=1)

    def logits_media(self, batch: dict) -> np.ndarray:
        return self.head.forward(self.features_media(batch))

    def probs_media(self, batch: dict) -> np.ndarray:
        return softmax(self.logits_media(batch))

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"video.{n}", a) for n, a in self.video.state_arrays()]
        out += [(f"audio.{n}", a) for n, a in self.audio.state_arrays()]
        out += [("head.w", self.head.w), ("head.b", self.head.b)]
        return out

    def descriptor(self) -> dict:
        return {"kind": self.kind, "k": self.k_classes,
                "video_c_in": self.video.c_in,
                "arrays": [[n, list(a.shape)] for n, a in self.state_arrays()]}


class LateFusionModel:
    """Aggregates per-modality softmax distributions (no training)."""

    kind = "late_fusion"
    modality = "av"

    def __init__(self, video: VideoClassifier, audio: AudioClassifier):
        if video.k_classes != audio.k_classes:
            raise ValueError("backbone class counts differ")
        self.video = video
        self.audio = audio
        self.k_classes = video.k_classes

    def probs_media(self, batch: dict) -> np.ndarray:
        summed = (softmax(self.video.logits(batch["video"]))
                  + softmax(self.audio.logits(batch["mel"])))
        return summed / 2.0

    def logits_media(self, batch: dict) -> np.ndarray:
        return np.log(np.maximum(self.probs_media(batch), 1e-12))

    def features_media(self, batch: dict) -> np.ndarray:
        return np.concatenate([self.video.features(batch["video"]),
                               self.audio.features(batch["mel"])], axis=1)

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"video.{n}", a) for n, a in self.video.state_arrays()]
        out += [(f"audio.{n}", a) for n, a in self.audio.state_arrays()]
        return out

    def descriptor(self) -> dict:
        return {"kind": self.kind, "k": self.k_classes,
                "video_c_in": self.video.c_in,
                "arrays": [[n, list(a.shape)] for n, a in self.state_arrays()]}


# ---------------------------------------------------------------------------
# checkpoints: magic, version, descriptor JSON, little-endian f32 payload

def save_model(model, path: str | Path) -> None:
    descriptor = json.dumps(model.descriptor(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(descriptor)))
        fh.write(descriptor)
        for _, arr in model.state_arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _fill_arrays(model, desc: dict, payload: bytes) -> int:
    offset = 0
    arrays = dict(model.state_arrays())
    for name, shape in desc["arrays"]:
        size = int(np.prod(shape)) * 4
        flat = np.frombuffer(payload[offset : offset + size], dtype="<f4")
        arrays[name][...] = flat.reshape(shape)
        offset += size
    return offset


def load_model(path: str | Path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, desc_len = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    desc = json.loads(data[12 : 12 + desc_len].decode("utf-8"))
    payload = data[12 + desc_len :]
    kind = desc["kind"]
    if kind == "video":
        model = VideoClassifier(desc["k"], c_in=desc["c_in"])
    elif kind == "audio":
        model = AudioClassifier(desc["k"], c_in=desc["c_in"])
    elif kind == "early_fusion":
        model = EarlyFusionModel(VideoClassifier(desc["k"],
                                                 c_in=desc["video_c_in"]),
                                 AudioClassifier(desc["k"]))
    elif kind == "late_fusion":
        model = LateFusionModel(VideoClassifier(desc["k"],
                                                c_in=desc["video_c_in"]),
                                AudioClassifier(desc["k"]))
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    used = _fill_arrays(model, desc, payload)
    if used != len(payload):
        raise ValueError(f"{path}: payload size mismatch")
    return model
