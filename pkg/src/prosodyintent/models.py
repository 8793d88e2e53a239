"""Intent-classification architectures.

Four variants share one skeleton (encoder -> attention pooling -> linear):

* teacher: conv encoder over the 6-channel prosody track (frame-preserving)
* student / baseline_plain: conv encoder over log-mel, optional 2x downsample
* baseline_local_concat: mel encoder, per-frame prosody concat, 2-layer LSTM

Attention pooling scores each frame with a learned D x 1 weight; keys are
either the encoder's own features or the raw prosody track. The score map
has no bias term (softmax shift invariance makes one inert).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng
from .autodiff import Tensor
from .frontend import PROSODY_CHANNELS

ARCHS = ("teacher", "student", "baseline_plain", "baseline_local_concat")

PROSODY_DIM = 6

# Fixed affine squeeze applied to log-mel before the acoustic encoder: raw
# values span roughly [ln(1e-10), ~9], which would blow up initial logits.
MEL_SHIFT = 10.0
MEL_SCALE = 10.0


@dataclass(frozen=True)
class EncoderConfig:
    kind: str  # "acoustic" or "prosody"
    in_channels: int
    hidden_channels: int = 64
    n_layers: int = 3
    kernel: int = 5
    downsample_factor: int = 1

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        if self.downsample_factor not in (1, 2):
            raise ValueError("downsample_factor must be 1 or 2")


@dataclass(frozen=True)
class SapConfig:
    key_source: str  # "self" or "prosody"
    key_dim: int


def sap_forward(features: Tensor, keys: Tensor, w: Tensor, mask=None):
    """Attention pooling: alpha = softmax(keys @ w), pooled = alpha^T features.

    Returns (pooled [1, H], alpha [T]).
    """
    t = features.data.shape[0]
    if keys.data.shape[0] != t:
        raise ValueError(
            f"keys have {keys.data.shape[0]} rows but features have {t}; "
            "align frame counts (align_frames) before pooling"
        )
    scores = ad.reshape(ad.matmul(keys, w), (t,))
    alpha = ad.softmax_over_time(scores, mask)
    pooled = ad.matmul(ad.reshape(alpha, (1, t)), features)
    return pooled, alpha


def align_frames(x, target_t: int):
    """Match a [T, C] sequence to target_T rows.

    Identity when T == target_T; mean-pooling of consecutive frame pairs
    when longer, dropping a trailing odd frame when the target is floor(T/2)
    and keeping it as a singleton when the target is ceil(T/2) (the length a
    stride-2 'same' encoder produces). Works on numpy arrays and on graph
    tensors. T/target_T must lie in [1, 2].
    """
    t = x.shape[0]
    if t < target_t or t > 2 * target_t + 1:
        raise ValueError(f"cannot align {t} frames to {target_t}: ratio outside [1, 2]")
    if t == target_t:
        return x
    pairs = t // 2
    keep_tail = t % 2 == 1 and target_t == pairs + 1
    if not keep_tail and pairs != target_t:
        raise ValueError(f"cannot align {t} frames to {target_t} by pairwise pooling")
    if isinstance(x, Tensor):
        pooled = ad.avg_pool_pairs(x)
        if keep_tail:
            pooled = ad.concat(pooled, ad.narrow(x, 0, t - 1, 1), axis=0)
        return pooled
    x = np.asarray(x)
    pooled = 0.5 * (x[0:2 * pairs:2] + x[1:2 * pairs:2])
    if keep_tail:
        pooled = np.concatenate([pooled, x[t - 1:t]], axis=0)
    return pooled


def _conv_param_shapes(enc: EncoderConfig):
    shapes = []
    c_in = enc.in_channels
    for i in range(enc.n_layers):
        shapes.append((f"enc.conv{i}.w", (enc.kernel, c_in, enc.hidden_channels)))
        shapes.append((f"enc.conv{i}.b", (enc.hidden_channels,)))
        c_in = enc.hidden_channels
    return shapes


class IntentModel:
    """A built architecture: config + named parameters + forward pass."""

    def __init__(self, config: dict, params: dict):
        self.config = config
        self.params = params

    @property
    def arch(self) -> str:
        return self.config["arch"]

    @property
    def n_intents(self) -> int:
        return self.config["n_intents"]

    @property
    def hidden_channels(self) -> int:
        return self.config["hidden_channels"]

    @property
    def downsample_factor(self) -> int:
        return self.config["downsample_factor"]

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def set_trainable(self, trainable: bool):
        for p in self.params.values():
            p.requires_grad = trainable
        return self

    def _masked_prosody(self, prosody):
        if prosody is None:
            return None
        keep = self.config.get("feature_mask", list(PROSODY_CHANNELS))
        if set(keep) == set(PROSODY_CHANNELS):
            return np.asarray(prosody)
        vec = np.array([1.0 if ch in keep else 0.0 for ch in PROSODY_CHANNELS],
                       dtype=np.float32)
        return np.asarray(prosody) * vec[None, :]

    def _encode(self, x: Tensor) -> Tensor:
        cfg = self.config
        z = x
        for i in range(cfg["n_layers"]):
            stride = cfg["downsample_factor"] if i == 0 else 1
            z = ad.conv1d_same(z, self.params[f"enc.conv{i}.w"],
                               self.params[f"enc.conv{i}.b"], stride=stride)
            z = ad.gelu(z)
        return z

    def forward(self, mel=None, prosody=None, mask=None):
        """Run the architecture; returns (logits [K], frame_features, alpha, pooled).

        mel is [T, n_mels] and prosody [T, 6] numpy (already normalized /
        channel-masked by the caller); mask is an optional boolean [T].
        """
        cfg = self.config
        arch = cfg["arch"]
        prosody = self._masked_prosody(prosody)

        if arch == "teacher":
            if prosody is None:
                raise ValueError("teacher consumes the prosody track")
            if prosody.shape[1] != PROSODY_DIM:
                raise ValueError(f"prosody has {prosody.shape[1]} channels, expected {PROSODY_DIM}")
            z = self._encode(Tensor(prosody))
            frame_mask = mask
        else:
            if mel is None:
                raise ValueError(f"{arch} consumes the mel spectrogram")
            if mel.shape[1] != cfg["n_mels"]:
                raise ValueError(f"mel has {mel.shape[1]} channels, expected {cfg['n_mels']}")
            squeezed = (np.asarray(mel) + MEL_SHIFT) / MEL_SCALE
            z = self._encode(Tensor(squeezed.astype(mel.dtype, copy=False)))
            ds = cfg["downsample_factor"]
            frame_mask = None if mask is None else np.asarray(mask, dtype=bool)[::ds][:z.data.shape[0]]

        t_out = z.data.shape[0]

        if arch == "baseline_local_concat":
            if prosody is None:
                raise ValueError("baseline_local_concat concatenates the prosody track")
            p_aligned = align_frames(np.asarray(prosody), t_out).astype(z.data.dtype)
            z = ad.concat(z, Tensor(p_aligned), axis=1)
            layers = [
                {"wx": self.params[f"lstm.l{j}.wx"],
                 "wh": self.params[f"lstm.l{j}.wh"],
                 "b": self.params[f"lstm.l{j}.b"]}
                for j in range(2)
            ]
            z = ad.lstm_forward(z, layers, cfg["lstm_hidden"])

        if cfg["prosody_attention"]:
            if prosody is None:
                raise ValueError("prosody-attention keys need the prosody track")
            keys = Tensor(align_frames(np.asarray(prosody), t_out).astype(z.data.dtype))
        else:
            keys = z
        pooled, alpha = sap_forward(z, keys, self.params["sap.w"], mask=frame_mask)

        logits = ad.add(ad.matmul(pooled, self.params["cls.w"]), self.params["cls.b"])
        logits = ad.reshape(logits, (self.n_intents,))
        return logits, z, alpha, pooled

    def predict(self, mel=None, prosody=None, mask=None) -> int:
        with ad.no_grad():
            logits, _, _, _ = self.forward(mel=mel, prosody=prosody, mask=mask)
        return int(np.argmax(logits.data))


def build_model(arch: str, n_intents: int, seed: int, hidden_channels: int = 64,
                n_layers: int = 3, kernel: int = 5, downsample_factor: int = 2,
                lstm_hidden: int = 32, prosody_attention: bool = False,
                n_mels: int = 80, feature_mask=None) -> IntentModel:
    """Construct one of the four architectures with seeded initialization.

    The same (seed, parameter name) always produces the same values, so two
    builds with one seed are identical, and the student / plain-baseline
    pair share initializations exactly.
    """
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
    if n_intents <= 1:
        raise ValueError("n_intents must be > 1")
    if arch == "teacher":
        enc = EncoderConfig("prosody", PROSODY_DIM, hidden_channels, n_layers, kernel, 1)
        if prosody_attention:
            raise ValueError("teacher pools over its own features")
    else:
        enc = EncoderConfig("acoustic", n_mels, hidden_channels, n_layers, kernel,
                            downsample_factor)

    feature_dim = hidden_channels
    if arch == "baseline_local_concat":
        feature_dim = lstm_hidden

    if feature_mask is None:
        feature_mask = list(PROSODY_CHANNELS)
    else:
        feature_mask = list(feature_mask)
        unknown = set(feature_mask) - set(PROSODY_CHANNELS)
        if unknown:
            raise ValueError(f"unknown prosody channels in feature_mask: {sorted(unknown)}")
        if not feature_mask:
            raise ValueError("feature_mask must keep at least one channel")

    config = {
        "arch": arch,
        "n_intents": n_intents,
        "hidden_channels": hidden_channels,
        "n_layers": n_layers,
        "kernel": kernel,
        "downsample_factor": enc.downsample_factor,
        "lstm_hidden": lstm_hidden,
        "prosody_attention": bool(prosody_attention),
        "n_mels": n_mels,
        "prosody_dim": PROSODY_DIM,
        "feature_mask": feature_mask,
    }

    shapes = dict(_conv_param_shapes(enc))
    if arch == "baseline_local_concat":
        c_in = hidden_channels + PROSODY_DIM
        for j in range(2):
            shapes[f"lstm.l{j}.wx"] = (c_in, 4 * lstm_hidden)
            shapes[f"lstm.l{j}.wh"] = (lstm_hidden, 4 * lstm_hidden)
            shapes[f"lstm.l{j}.b"] = (4 * lstm_hidden,)
            c_in = lstm_hidden
    key_dim = PROSODY_DIM if prosody_attention else feature_dim
    shapes["sap.w"] = (key_dim, 1)
    shapes["cls.w"] = (feature_dim, n_intents)
    shapes["cls.b"] = (n_intents,)

    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[:-1]))
            data = rng.init_weight(seed, name, shape, fan_in)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return IntentModel(config, params)
