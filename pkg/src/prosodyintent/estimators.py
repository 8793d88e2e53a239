"""scikit-learn style wrappers so the pipeline composes with the wider
ecosystem: featurizers are transformers, the classifiers expose
fit/predict/score and clone cleanly via get_params/set_params.

X is a sequence of mono 16 kHz waveforms: 1-D float arrays, Waveform
objects, WAV paths, or a 2-D array with one utterance per row.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .audio import Waveform, load_wav
from .data import FeatureStore, ManifestEntry
from .evaluation import attention_map
from .frontend import FrameSpec, PitchConfig, mel_spectrogram, prosody_track
from .training import MtlScheme, TrainConfig, train, train_teacher


def check_waveform(x) -> np.ndarray:
    """Validate one utterance and return float32 samples in [-1, 1]."""
    if isinstance(x, Waveform):
        return x.samples
    if isinstance(x, (str, bytes)) or hasattr(x, "__fspath__"):
        return load_wav(x).samples
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError(f"each utterance must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty utterance")
    if not np.isfinite(arr).all():
        raise ValueError("utterance contains non-finite samples")
    peak = float(np.abs(arr).max())
    if peak > 1.0 + 1e-6:
        raise ValueError(f"samples must lie in [-1, 1]; peak is {peak:.3f}")
    return arr


def check_waveform_list(X) -> list:
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [check_waveform(row) for row in X]
    if isinstance(X, np.ndarray) and X.ndim == 1 and X.dtype != object:
        raise ValueError("X must be a sequence of utterances, not one waveform")
    return [check_waveform(x) for x in X]


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == y.astype(int)):
            raise ValueError("labels must be integers")
        y = y.astype(int)
    return y


class _FeaturizerBase(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        check_waveform_list(X)
        self.n_features_in_ = 1
        return self

    def _frame_spec(self):
        return FrameSpec(self.window_samples, self.hop_samples, self.n_mels)


class MelFeaturizer(_FeaturizerBase):
    """Waveforms -> list of [T, n_mels] log-mel matrices."""

    def __init__(self, window_samples=400, hop_samples=160, n_mels=80):
        self.window_samples = window_samples
        self.hop_samples = hop_samples
        self.n_mels = n_mels

    def transform(self, X):
        spec = self._frame_spec()
        return [mel_spectrogram(Waveform(x), spec) for x in check_waveform_list(X)]


class ProsodyFeaturizer(_FeaturizerBase):
    """Waveforms -> list of [T, 6] prosody tracks (z-normalized per utterance)."""

    def __init__(self, window_samples=400, hop_samples=160, n_mels=80,
                 f0_min=60.0, f0_max=400.0, dp_penalty=0.5, normalize=True):
        self.window_samples = window_samples
        self.hop_samples = hop_samples
        self.n_mels = n_mels
        self.f0_min = f0_min
        self.f0_max = f0_max
        self.dp_penalty = dp_penalty
        self.normalize = normalize

    def transform(self, X):
        spec = self._frame_spec()
        cfg = PitchConfig(self.f0_min, self.f0_max, self.dp_penalty)
        return [prosody_track(Waveform(x), spec, cfg, normalize=self.normalize)
                for x in check_waveform_list(X)]


class IntentClassifier(ClassifierMixin, BaseEstimator):
    """End-to-end intent classifier over raw waveforms.

    arch="student" pretrains an internal prosody teacher and distills it;
    "baseline_plain" / "baseline_local_concat" train with CE only;
    "teacher" classifies from prosody alone. A validation slice is carved
    from the training data for checkpoint selection.
    """

    def __init__(self, arch="student", hidden_channels=32, epochs=10,
                 teacher_epochs=10, batch_size=16, lr=1e-3,
                 distill_parts="both", distill_level="frame",
                 mtl="random_per_step", prosody_attention=False,
                 downsample_factor=2, lstm_hidden=32, crop_seconds=2.0,
                 validation_fraction=0.2, seed=0):
        self.arch = arch
        self.hidden_channels = hidden_channels
        self.epochs = epochs
        self.teacher_epochs = teacher_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.distill_parts = distill_parts
        self.distill_level = distill_level
        self.mtl = mtl
        self.prosody_attention = prosody_attention
        self.downsample_factor = downsample_factor
        self.lstm_hidden = lstm_hidden
        self.crop_seconds = crop_seconds
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _mtl_scheme(self):
        if isinstance(self.mtl, (tuple, list)):
            return MtlScheme("fixed", float(self.mtl[0]), float(self.mtl[1]))
        return MtlScheme(str(self.mtl))

    def _entries(self, waves, labels):
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(waves))
        n_val = max(1, int(round(self.validation_fraction * len(waves))))
        if n_val >= len(waves):
            raise ValueError("not enough samples to carve a validation split")
        val_idx = set(order[:n_val].tolist())
        return [
            ManifestEntry("", int(labels[i]), "validation" if i in val_idx else "train",
                          samples=waves[i])
            for i in range(len(waves))
        ]

    def _config(self, arch, n_intents, epochs):
        return TrainConfig(
            arch=arch, n_intents=n_intents, epochs=epochs,
            batch_size=self.batch_size, lr_head=self.lr, mtl=self._mtl_scheme(),
            distill_parts=self.distill_parts, distill_level=self.distill_level,
            hidden_channels=self.hidden_channels,
            downsample_factor=self.downsample_factor, lstm_hidden=self.lstm_hidden,
            prosody_attention=self.prosody_attention, seed=self.seed,
        )

    def fit(self, X, y):
        waves = check_waveform_list(X)
        y = check_labels(y, len(waves))
        self.classes_, dense = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        entries = self._entries(waves, dense)
        store = FeatureStore(utterance_seconds=self.crop_seconds)

        n_intents = len(self.classes_)
        if self.arch == "student":
            teacher_cfg = self._config("teacher", n_intents, self.teacher_epochs)
            teacher_ckpt, _ = train_teacher(entries, store, teacher_cfg)
            cfg = self._config("student", n_intents, self.epochs)
            from dataclasses import replace
            cfg = replace(cfg, teacher_path=teacher_ckpt)
            self.teacher_checkpoint_ = teacher_ckpt
        else:
            cfg = self._config(self.arch, n_intents, self.epochs)
        ckpt, log = train(entries, store, cfg)
        self.checkpoint_ = ckpt
        self.model_ = ckpt.to_model()
        self.train_log_ = log
        self._store = FeatureStore(utterance_seconds=self.crop_seconds)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValueError("this IntentClassifier is not fitted yet; call fit first")

    def predict(self, X):
        self._check_fitted()
        preds = []
        for x in check_waveform_list(X):
            mel, pros = self._store.features(ManifestEntry("", 0, "test", samples=x))
            preds.append(self.model_.predict(mel=mel, prosody=pros))
        return self.classes_[np.asarray(preds, dtype=int)]

    def attention_maps(self, X):
        """Per-utterance attention weight vectors (each sums to 1)."""
        self._check_fitted()
        maps = []
        for x in check_waveform_list(X):
            mel, pros = self._store.features(ManifestEntry("", 0, "test", samples=x))
            maps.append(attention_map(self.model_, mel, pros))
        return maps
