"""Training, evaluation and fusion for the desk-scale classifiers.

Plain seeded SGD on cross-entropy; metrics follow the poisoned-label
convention: CDA is clean test accuracy, ASR is the fraction of non-target
test samples pushed into the target class once the trigger is applied.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_triggers import MelParams, mel_spectrogram
from .media import AudioSignal
from .models import (AudioClassifier, EarlyFusionModel, LateFusionModel,
                     VideoClassifier)
from .nn import softmax, softmax_cross_entropy
from .poison import (DatasetManifest, PoisonSpec, SampleRecord,
                     poison_eval_audio, poison_eval_clip)
from .rng import spawn

DEFAULT_MEL = MelParams()


class NumericError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class Hyper:
    lr: float = 0.05
    epochs: int = 30
    batch: int = 16
    seed: int = 0

    def to_json(self) -> dict:
        return {"lr": self.lr, "epochs": self.epochs, "batch": self.batch,
                "seed": self.seed}

    @staticmethod
    def from_json(obj) -> "Hyper":
        return Hyper(float(obj.get("lr", 0.05)), int(obj.get("epochs", 30)),
                     int(obj.get("batch", 16)), int(obj.get("seed", 0)))


@dataclass
class TrainReport:
    first_epoch_loss: float
    final_epoch_loss: float
    epoch_losses: list[float] = field(default_factory=list)


@dataclass
class Metrics:
    cda: float
    asr: float | None
    per_class_accuracy: list[float]

    def to_json(self) -> dict:
        return {"cda": self.cda, "asr": self.asr,
                "per_class_accuracy": self.per_class_accuracy}


# ---------------------------------------------------------------------------
# media loading

def load_media(manifest: DatasetManifest,
               records: list[SampleRecord] | None = None,
               want_video: bool = False, want_audio: bool = False,
               mel_params: MelParams = DEFAULT_MEL,
               attack_spec: PoisonSpec | None = None,
               keep_waveforms: bool = False) -> dict:
    """Batch arrays for the given records (defaults to the whole manifest).

    With ``attack_spec`` set, media pass through the evaluation-time
    poisoning path (trigger + storage quantization) before batching.
    """
    records = manifest.samples if records is None else records
    out: dict = {
        "sample_ids": [r.sample_id for r in records],
        "effective_labels": np.array([r.effective_label for r in records]),
        "original_labels": np.array([r.original_label for r in records]),
        "poisoned": np.array([r.poisoned for r in records], dtype=bool),
    }
    if want_video:
        clips = []
        for rec in records:
            clip = manifest.load_video(rec)
            if attack_spec is not None:
                clip = poison_eval_clip(clip, attack_spec, rec.sample_id)
            clips.append(clip.frames.astype(np.float32))
        out["video"] = np.stack(clips)
    if want_audio:
        mels, waves = [], []
        sample_rate = None
        for rec in records:
            sig = manifest.load_audio(rec)
            if attack_spec is not None:
                sig = poison_eval_audio(sig, attack_spec)
            sample_rate = sig.sample_rate
            mels.append(mel_spectrogram(sig, mel_params).bins.astype(np.float32))
            if keep_waveforms:
                waves.append(sig.samples)
        out["mel"] = np.stack(mels)
        if keep_waveforms:
            out["waveform"] = np.stack(waves)
            out["sample_rate"] = sample_rate
    return out


def _model_wants(model) -> tuple[bool, bool]:
    return (model.modality in ("video", "av"), model.modality in ("audio", "av"))


# ---------------------------------------------------------------------------
# training

def train_arrays(model, x: np.ndarray, y: np.ndarray,
                 hyper: Hyper) -> TrainReport:
    """Seeded SGD over in-memory arrays; raises NumericError on NaN loss."""
    n = x.shape[0]
    epoch_losses = []
    for epoch in range(hyper.epochs):
        order = spawn(hyper.seed, "shuffle", epoch).permutation(n)
        batch_losses = []
        for start in range(0, n, hyper.batch):
            idx = order[start : start + hyper.batch]
            logits = model.forward_train(x[idx])
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            model.zero_grad()
            model.backward(dlogits)
            for (_, p), (_, g) in zip(model.params(), model.grads()):
                p -= hyper.lr * g
            batch_losses.append(loss)
        epoch_losses.append(float(np.mean(batch_losses)))
    return TrainReport(epoch_losses[0], epoch_losses[-1], epoch_losses)


def train(model, manifest: DatasetManifest, hyper: Hyper,
          mel_params: MelParams = DEFAULT_MEL) -> TrainReport:
    """Train a single-modality classifier on a (possibly poisoned) manifest."""
    want_video, want_audio = _model_wants(model)
    batch = load_media(manifest, want_video=want_video, want_audio=want_audio,
                       mel_params=mel_params)
    x = batch["video"] if model.modality == "video" else batch["mel"]
    return train_arrays(model, x, batch["effective_labels"], hyper)


# ---------------------------------------------------------------------------
# gradient check against central finite differences

def grad_check(model, x: np.ndarray, y: np.ndarray, n_params: int = 64,
               h: float = 1e-3, seed: int = 0) -> float:
    """Max relative error |analytic - numeric| / max(1e-8, |a| + |n|).

    Runs on a float64 copy.  Parameters whose +/-h perturbation flips any
    ReLU activation pattern are excluded (subgradient caveat).
    """
    m64 = model.copy(dtype=np.float64)
    x64 = x.astype(np.float64)

    def loss_and_masks():
        logits = m64.forward_train(x64)
        loss, _ = softmax_cross_entropy(logits, y)
        masks = (m64.backbone._m1.copy(), m64.backbone._m2.copy())
        return loss, masks

    logits = m64.forward_train(x64)
    _, dlogits = softmax_cross_entropy(logits, y)
    m64.zero_grad()
    m64.backward(dlogits.astype(np.float64))
    params = m64.params()
    grads = dict(m64.grads())

    sizes = [p.size for _, p in params]
    total = int(np.sum(sizes))
    rng = spawn(seed, "gradcheck")
    chosen = rng.choice(total, size=min(n_params, total), replace=False)

    worst = 0.0
    for flat_idx in sorted(int(i) for i in chosen):
        for (name, p), size in zip(params, sizes):
            if flat_idx < size:
                break
            flat_idx -= size
        original = p.flat[flat_idx]
        p.flat[flat_idx] = original + h
        loss_hi, masks_hi = loss_and_masks()
        p.flat[flat_idx] = original - h
        loss_lo, masks_lo = loss_and_masks()
        p.flat[flat_idx] = original
        if any(not np.array_equal(a, b) for a, b in zip(masks_hi, masks_lo)):
            continue  # perturbation crosses a ReLU kink
        numeric = (loss_hi - loss_lo) / (2.0 * h)
        analytic = grads[name].flat[flat_idx]
        err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalContext:
    """Pre-materialized clean and attacked test batches for fast re-use."""

    k_classes: int
    target_label: int | None
    clean: dict
    attacked: dict | None

    @staticmethod
    def build(manifest: DatasetManifest, want_video: bool, want_audio: bool,
              spec: PoisonSpec | None = None,
              mel_params: MelParams = DEFAULT_MEL) -> "EvalContext":
        clean = load_media(manifest, want_video=want_video,
                           want_audio=want_audio, mel_params=mel_params)
        attacked = None
        target = None
        if spec is not None:
            target = spec.target_label
            eligible = [r for r in manifest.samples
                        if r.original_label != spec.target_label]
            if not eligible:
                raise ValueError("no test samples outside the target class")
            attacked = load_media(manifest, eligible, want_video=want_video,
                                  want_audio=want_audio, mel_params=mel_params,
                                  attack_spec=spec)
        return EvalContext(manifest.k_classes, target, clean, attacked)


def evaluate_context(model, ctx: EvalContext) -> Metrics:
    probs = model.probs_media(ctx.clean)
    preds = probs.argmax(axis=1)
    labels = ctx.clean["effective_labels"]
    cda = float((preds == labels).mean())
    per_class = []
    for k in range(ctx.k_classes):
        mask = labels == k
        per_class.append(float((preds[mask] == k).mean()) if mask.any() else 0.0)
    asr = None
    if ctx.attacked is not None:
        attacked_preds = model.probs_media(ctx.attacked).argmax(axis=1)
        asr = float((attacked_preds == ctx.target_label).mean())
    return Metrics(cda, asr, per_class)


def evaluate(model, manifest: DatasetManifest, spec: PoisonSpec | None = None,
             mel_params: MelParams = DEFAULT_MEL) -> Metrics:
    """CDA on clean media; ASR over non-target samples with the trigger on."""
    want_video, want_audio = _model_wants(model)
    ctx = EvalContext.build(manifest, want_video, want_audio, spec, mel_params)
    return evaluate_context(model, ctx)


# ---------------------------------------------------------------------------
# fusion

def fuse_early(video: VideoClassifier, audio: AudioClassifier,
               manifest: DatasetManifest, hyper: Hyper,
               mel_params: MelParams = DEFAULT_MEL) -> EarlyFusionModel:
    """Train a linear head on concatenated frozen-backbone features."""
    batch = load_media(manifest, want_video=True, want_audio=True,
                       mel_params=mel_params)
    fusion = EarlyFusionModel(video, audio, seed=hyper.seed)
    feats = fusion.features_media(batch)
    y = batch["effective_labels"]
    n = feats.shape[0]
    for epoch in range(hyper.epochs):
        order = spawn(hyper.seed, "fusion_shuffle", epoch).permutation(n)
        for start in range(0, n, hyper.batch):
            idx = order[start : start + hyper.batch]
            logits = fusion.head.forward(feats[idx], train=True)
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite fusion loss at epoch {epoch}")
            fusion.head.zero_grad()
            fusion.head.backward(dlogits)
            fusion.head.w -= hyper.lr * fusion.head.gw
            fusion.head.b -= hyper.lr * fusion.head.gb
    return fusion


def fuse_late(video: VideoClassifier, audio: AudioClassifier,
              batch: dict) -> np.ndarray:
    """Late-fusion predictions: argmax of summed per-modality softmax
    (ties resolve toward the lower class index)."""
    summed = (softmax(video.logits(batch["video"]))
              + softmax(audio.logits(batch["mel"])))
    return summed.argmax(axis=1)


# ---------------------------------------------------------------------------
# activation dumps (consumed by the defenses)

def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()
                            ).decode("ascii")


def _unb64(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f4").astype(np.float64)


def dump_activations(model, manifest: DatasetManifest, path: str | Path,
                     mel_params: MelParams = DEFAULT_MEL) -> None:
    """One JSON line per sample: penultimate features, logits, labels, flag."""
    want_video, want_audio = _model_wants(model)
    batch = load_media(manifest, want_video=want_video, want_audio=want_audio,
                       mel_params=mel_params)
    feats = model.features_media(batch)
    logits = model.logits_media(batch)
    with open(path, "w", encoding="utf-8") as fh:
        for i, rec in enumerate(manifest.samples):
            fh.write(json.dumps({
                "sample_id": rec.sample_id,
                "features": _b64(feats[i]),
                "logits": _b64(logits[i]),
                "effective_label": rec.effective_label,
                "poisoned": rec.poisoned,
            }, sort_keys=True) + "\n")


@dataclass
class ActivationRecord:
    sample_id: str
    features: np.ndarray
    logits: np.ndarray
    effective_label: int
    poisoned: bool


def read_activation_dump(path: str | Path) -> list[ActivationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(ActivationRecord(
                obj["sample_id"], _unb64(obj["features"]),
                _unb64(obj["logits"]), int(obj["effective_label"]),
                bool(obj["poisoned"])))
    dims = {r.features.size for r in records}
    if len(dims) > 1:
        raise ValueError(f"inconsistent feature dims in dump: {dims}")
    return records
