"""Metrics, attention export, and run comparison."""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import ModelCheckpoint
from .data import FeatureStore, split_entries
from .models import IntentModel


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1 over all K classes; 0/0 counts as 0."""
    cm = np.asarray(cm, dtype=np.float64)
    if cm.sum() <= 0:
        raise ValueError("confusion matrix is empty")
    f1s = []
    for k in range(cm.shape[0]):
        tp = cm[k, k]
        predicted = cm[:, k].sum()
        true = cm[k, :].sum()
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / true if true > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        f1s.append(f1)
    return float(np.mean(f1s))


def _per_class_stats(cm: np.ndarray):
    rows = []
    for k in range(cm.shape[0]):
        tp = float(cm[k, k])
        predicted = float(cm[:, k].sum())
        true = float(cm[k, :].sum())
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / true if true > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        rows.append({"intent": k, "precision": precision, "recall": recall, "f1": f1})
    return rows


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    per_class: list
    n_utterances: int
    confusion: np.ndarray
    pairs: list  # (true, predicted) per utterance, in evaluation order

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "n": self.n_utterances,
        }


def _as_model(model_or_ckpt) -> IntentModel:
    if isinstance(model_or_ckpt, ModelCheckpoint):
        return model_or_ckpt.to_model()
    return model_or_ckpt


def predict_labels(model_or_ckpt, entries, store: FeatureStore):
    """(true, predicted) pairs for every entry; argmax ties go to the
    lower class index."""
    model = _as_model(model_or_ckpt)
    pairs = []
    for e in entries:
        mel, pros = store.features(e)
        pairs.append((e.intent_id, model.predict(mel=mel, prosody=pros)))
    return pairs


def evaluate(model_or_ckpt, entries, split: str, store: FeatureStore) -> EvalReport:
    """Deterministic single pass over a split; errors on an empty split."""
    model = _as_model(model_or_ckpt)
    rows = split_entries(entries, split)
    k = model.n_intents
    worst = max(e.intent_id for e in rows)
    if worst >= k:
        raise ValueError(f"manifest intent {worst} out of range for a {k}-way checkpoint")

    pairs = predict_labels(model, rows, store)
    cm = np.zeros((k, k), dtype=np.int64)
    for true, pred in pairs:
        cm[true, pred] += 1

    accuracy = float(np.trace(cm) / cm.sum())
    mf1 = macro_f1(cm)
    # Cross-check against a recount straight from the pair list.
    recount_acc = sum(1 for t, p in pairs if t == p) / len(pairs)
    if abs(recount_acc - accuracy) > 0:
        raise AssertionError("confusion-matrix accuracy disagrees with pair recount")
    return EvalReport(accuracy=accuracy, macro_f1=mf1, per_class=_per_class_stats(cm),
                      n_utterances=len(pairs), confusion=cm, pairs=pairs)


def contour_pair_accuracy(model_or_ckpt, entries, store: FeatureStore,
                          n_contour: int = 2) -> float:
    """Binary discrimination of same-content, different-contour intent pairs.

    For each content class, utterances of its two contour intents are
    classified by argmax restricted to those two logits; the returned value
    is the mean accuracy over content classes.
    """
    model = _as_model(model_or_ckpt)
    if n_contour != 2:
        raise ValueError("contour pairs are defined for 2 contour classes")
    per_pair = []
    contents = sorted({e.intent_id // n_contour for e in entries})
    for content in contents:
        ids = (content * n_contour, content * n_contour + 1)
        rows = [e for e in entries if e.intent_id in ids]
        if not rows:
            continue
        correct = 0
        for e in rows:
            mel, pros = store.features(e)
            with ad.no_grad():
                logits, _, _, _ = model.forward(mel=mel, prosody=pros)
            pred = ids[int(np.argmax(logits.data[list(ids)]))]
            if pred == e.intent_id:
                correct += 1
        per_pair.append(correct / len(rows))
    return float(np.mean(per_pair))


def attention_map(model_or_ckpt, mel, prosody):
    """Alpha weights for one utterance, with the model's frame alignment."""
    model = _as_model(model_or_ckpt)
    with ad.no_grad():
        _, _, alpha, _ = model.forward(mel=mel, prosody=prosody)
    return alpha.data.copy()


def dump_attention(model_or_ckpt, wav_path, out_path, store: FeatureStore) -> np.ndarray:
    """CSV with columns frame_index, time_seconds, alpha (one pooled frame
    per row); returns the attention weights."""
    from .data import ManifestEntry

    model = _as_model(model_or_ckpt)
    if "sap.w" not in model.params:
        raise ValueError("checkpoint has no attention-pooling layer")
    mel, pros = store.features(ManifestEntry(str(wav_path), 0, "test"))
    alpha = attention_map(model, mel, pros)
    ds = model.downsample_factor if model.arch != "teacher" else 1
    hop_seconds = store.frame_spec.hop_samples / 16000.0
    with open(out_path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_index", "time_seconds", "alpha"])
        for i, a in enumerate(alpha):
            writer.writerow([i, f"{i * hop_seconds * ds:.6f}", f"{a:.8f}"])
    return alpha


def voiced_attention_overlap(alpha: np.ndarray, prosody: np.ndarray,
                             downsample: int = 1, decile: float = 0.9) -> float:
    """Fraction of top-decile attention mass that falls on voiced frames.

    Voiced means the NCCF channel (p2) is above its per-utterance median;
    p2 is pooled to the attention frame rate first.
    """
    p2 = prosody[:, 1]
    if downsample > 1:
        t2 = (len(p2) // downsample) * downsample
        p2 = p2[:t2].reshape(-1, downsample).mean(axis=1)
    p2 = p2[:len(alpha)]
    alpha = alpha[:len(p2)]
    threshold = np.quantile(alpha, decile)
    top = alpha >= threshold
    voiced = p2 > np.median(p2)
    mass_top = float(alpha[top].sum())
    if mass_top <= 0:
        return 0.0
    return float(alpha[top & voiced].sum() / mass_top)


def compare_runs(run_dirs):
    """Aggregate metrics.json across runs, grouped by config hash.

    Returns (text_table, rows); rows are dicts sorted by mean accuracy
    descending, with stddev across the seeds of each group.
    """
    groups = {}
    for run_dir in run_dirs:
        metrics_path = Path(run_dir) / "metrics.json"
        if not metrics_path.exists():
            raise FileNotFoundError(f"run {run_dir} has no metrics.json")
        with open(metrics_path, "r", encoding="ascii") as f:
            metrics = json.load(f)
        key = metrics.get("config_hash", "unknown")
        groups.setdefault(key, []).append((str(run_dir), metrics))

    rows = []
    for key, members in groups.items():
        accs = np.array([m["accuracy"] for _, m in members], dtype=np.float64)
        f1s = np.array([m["macro_f1"] for _, m in members], dtype=np.float64)
        rows.append({
            "config_hash": key,
            "n_runs": len(members),
            "seeds": sorted(m.get("seed", -1) for _, m in members),
            "accuracy_mean": float(accs.mean()),
            "accuracy_std": float(accs.std()),
            "macro_f1_mean": float(f1s.mean()),
            "macro_f1_std": float(f1s.std()),
            "runs": sorted(d for d, _ in members),
        })
    rows.sort(key=lambda r: -r["accuracy_mean"])

    header = f"{'config':<18}{'runs':>5}  {'accuracy':>19}  {'macro_f1':>19}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['config_hash']:<18}{r['n_runs']:>5}  "
            f"{r['accuracy_mean']:.4f} +/- {r['accuracy_std']:.4f}  "
            f"{r['macro_f1_mean']:.4f} +/- {r['macro_f1_std']:.4f}"
        )
    return "\n".join(lines), rows
