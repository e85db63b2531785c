"""Sample-filtering and model-repair defenses.

Three classics operating on activation dumps and trained models: activation
clustering (PCA + 2-means per predicted class), STRIP (entropy of
predictions under blending), and channel pruning by clean activity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA
from sklearn.metrics import silhouette_score

from .nn import entropy
from .rng import derive_seed, spawn
from .trainer import ActivationRecord, EvalContext, Metrics, evaluate_context


# ---------------------------------------------------------------------------
# activation clustering

@dataclass
class ACClassResult:
    predicted_class: int
    assignments: dict[str, int]
    cluster_sizes: tuple[int, int]
    silhouette: float
    flagged_cluster: int | None  # None = nothing flagged in this class


@dataclass
class ACReport:
    per_class: list[ACClassResult]
    elimination_rate: float
    sacrifice_rate: float
    flagged_ids: list[str]

    def to_json(self) -> dict:
        return {
            "elimination_rate": self.elimination_rate,
            "sacrifice_rate": self.sacrifice_rate,
            "flagged_ids": self.flagged_ids,
            "per_class": [{
                "predicted_class": r.predicted_class,
                "cluster_sizes": list(r.cluster_sizes),
                "silhouette": r.silhouette,
                "flagged_cluster": r.flagged_cluster,
            } for r in self.per_class],
        }


def activation_clustering(records: Sequence[ActivationRecord],
                          pca_dim: int = 10, seed: int = 0,
                          size_gate: float = 0.35,
                          silhouette_gate: float = 0.10) -> ACReport:
    """Cluster penultimate activations per predicted class into two groups.

    The smaller cluster is flagged as poisoned only when it is clearly a
    minority (relative size below ``size_gate``) and clearly separated
    (silhouette above ``silhouette_gate``); otherwise nothing is flagged.
    Rates are computed against the ground-truth poison flags in the dump.
    """
    by_class: dict[int, list[ActivationRecord]] = {}
    for rec in records:
        by_class.setdefault(int(rec.logits.argmax()), []).append(rec)

    per_class: list[ACClassResult] = []
    flagged: set[str] = set()
    for cls in sorted(by_class):
        recs = by_class[cls]
        n = len(recs)
        if n < 3:
            per_class.append(ACClassResult(cls, {r.sample_id: 0 for r in recs},
                                           (n, 0), 0.0, None))
            continue
        feats = np.stack([r.features for r in recs])
        centered = feats - feats.mean(axis=0)
        if np.allclose(centered, 0.0):
            # degenerate class: all activations identical
            per_class.append(ACClassResult(cls, {r.sample_id: 0 for r in recs},
                                           (n, 0), 0.0, None))
            continue
        n_comp = min(pca_dim, feats.shape[1], n)
        projected = PCA(n_components=n_comp).fit_transform(centered)
        km_seed = derive_seed(seed, "ac", cls) % (2 ** 32)
        km = KMeans(n_clusters=2, n_init=10, max_iter=100,
                    random_state=km_seed)
        labels = km.fit_predict(projected)
        sizes = (int((labels == 0).sum()), int((labels == 1).sum()))
        if min(sizes) == 0:
            per_class.append(ACClassResult(cls, {r.sample_id: int(l) for r, l
                                                 in zip(recs, labels)},
                                           sizes, 0.0, None))
            continue
        sil = float(silhouette_score(projected, labels))
        smaller = int(np.argmin(sizes))
        flag_cluster = None
        if sizes[smaller] / n < size_gate and sil > silhouette_gate:
            flag_cluster = smaller
            flagged.update(r.sample_id for r, l in zip(recs, labels)
                           if l == smaller)
        per_class.append(ACClassResult(
            cls, {r.sample_id: int(l) for r, l in zip(recs, labels)},
            sizes, sil, flag_cluster))

    n_poisoned = sum(1 for r in records if r.poisoned)
    n_clean = len(records) - n_poisoned
    caught = sum(1 for r in records if r.poisoned and r.sample_id in flagged)
    sacrificed = sum(1 for r in records
                     if not r.poisoned and r.sample_id in flagged)
    elimination = caught / n_poisoned if n_poisoned else 0.0
    sacrifice = sacrificed / n_clean if n_clean else 0.0
    return ACReport(per_class, elimination, sacrifice, sorted(flagged))


# ---------------------------------------------------------------------------
# STRIP

@dataclass
class StripReport:
    entropies: dict[str, float]
    clean_entropies: list[float]
    threshold: float
    flagged_ids: list[str]
    frr: float
    n_blend: int

    @property
    def flagged_fraction(self) -> float:
        return len(self.flagged_ids) / max(len(self.entropies), 1)

    def to_json(self) -> dict:
        return {"threshold": self.threshold, "frr": self.frr,
                "n_blend": self.n_blend, "flagged_ids": self.flagged_ids,
                "entropies": self.entropies,
                "clean_entropies": self.clean_entropies}


def _mean_blend_entropies(predict: Callable[[np.ndarray], np.ndarray],
                          items: np.ndarray, pool: np.ndarray, n_blend: int,
                          seed: int, tag: str) -> list[float]:
    out = []
    for i in range(items.shape[0]):
        rng = spawn(seed, "strip", tag, i)
        picks = rng.choice(pool.shape[0], size=n_blend, replace=False)
        blends = 0.5 * items[i][None] + 0.5 * pool[picks]
        probs = predict(blends)
        out.append(float(entropy(probs).mean()))
    return out


def strip(predict: Callable[[np.ndarray], np.ndarray],
          inspect_items: np.ndarray, inspect_ids: Sequence[str],
          clean_pool: np.ndarray, n_blend: int = 100, frr: float = 0.01,
          seed: int = 0) -> StripReport:
    """Flag inspection samples whose blended-prediction entropy is abnormal.

    Each inspection item is averaged 50/50 with ``n_blend`` clean pool items
    (videos per-frame, waveforms per-sample) and scored by the mean Shannon
    entropy of the model output; the detection threshold is the ``frr``
    quantile of the clean pool's own self-blend entropies.
    """
    if clean_pool.shape[0] < n_blend:
        raise ValueError(f"clean pool of {clean_pool.shape[0]} smaller than "
                         f"n_blend={n_blend}")
    clean_scores = _mean_blend_entropies(predict, clean_pool, clean_pool,
                                         n_blend, seed, "clean")
    threshold = float(np.quantile(clean_scores, frr))
    inspect_scores = _mean_blend_entropies(predict, inspect_items, clean_pool,
                                           n_blend, seed, "inspect")
    entropies = dict(zip(inspect_ids, inspect_scores))
    flagged = sorted(sid for sid, score in entropies.items()
                     if score < threshold)
    return StripReport(entropies, clean_scores, threshold, flagged, frr,
                       n_blend)


# ---------------------------------------------------------------------------
# pruning

@dataclass
class PruneCurve:
    entries: list[tuple[float, float, float]]  # (pruned_fraction, cda, asr)

    def to_json(self) -> dict:
        return {"curve": [{"pruned_fraction": f, "cda": c, "asr": a}
                          for f, c, a in self.entries]}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pruned_fraction", "cda", "asr"])
            for f, c, a in self.entries:
                writer.writerow([f"{f:.2f}", repr(c), repr(a)])


def prune(model, calibration: np.ndarray, ctx: EvalContext,
          step: float = 0.05) -> PruneCurve:
    """Zero conv channels from least to most clean-active, tracking metrics.

    Channels of the last conv layer are ranked by mean post-ReLU activation
    over the clean calibration media (ascending) and cumulatively masked in
    fraction steps; CDA/ASR are re-measured after each step.
    """
    if calibration.shape[0] == 0:
        raise ValueError("empty calibration set")
    activity = model.channel_activity(calibration)
    order = np.argsort(activity, kind="stable")
    n_chan = activity.size
    n_steps = int(round(1.0 / step))
    entries = []
    for i in range(n_steps + 1):
        fraction = min(i * step, 1.0)
        n_prune = int(np.floor(fraction * n_chan + 0.5))
        mask = np.ones(n_chan)
        mask[order[:n_prune]] = 0.0
        metrics: Metrics = evaluate_context(model.with_channel_mask(mask), ctx)
        entries.append((round(fraction, 10), metrics.cda, metrics.asr))
    return PruneCurve(entries)
