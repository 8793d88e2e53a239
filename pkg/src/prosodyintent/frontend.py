"""Prosodic and spectral front end.

Turns a 16 kHz waveform into two frame-aligned matrices:

* an 80-channel log-mel spectrogram (25 ms Hann windows, 10 ms hop), and
* a six-channel prosody track: log pitch, NCCF voicing evidence, log-pitch
  delta, and total/upper-band/lower-band log mel energies.

Pitch comes from a normalized cross-correlation sweep plus a Viterbi pass
over lag candidates; a continuous value is emitted for every frame, with
the NCCF channel acting as implicit voicing confidence.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

from .audio import Waveform

LOG_FLOOR = 1e-10

# The pitch path runs on a lowpassed copy of the waveform (Kaldi-style):
# above ~1 kHz the phase of a harmonic rotates by more than a radian per
# lag sample, so integer-lag NCCF undersamples its own peak.
PITCH_LOWPASS_HZ = 700.0

# Prosody channel order is fixed: models index these columns positionally.
PROSODY_CHANNELS = ("p1", "p2", "p3", "e1", "e2", "e3")
PITCH_CHANNELS = ("p1", "p2", "p3")
ENERGY_CHANNELS = ("e1", "e2", "e3")


@dataclass(frozen=True)
class FrameSpec:
    window_samples: int = 400
    hop_samples: int = 160
    n_mels: int = 80

    def __post_init__(self):
        if not (self.window_samples > self.hop_samples > 0):
            raise ValueError("need window_samples > hop_samples > 0")
        if self.n_mels % 2 != 0:
            raise ValueError("n_mels must be even (upper/lower band split)")

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_samples:
            raise ValueError("utterance too short")
        return 1 + (num_samples - self.window_samples) // self.hop_samples


@dataclass(frozen=True)
class PitchConfig:
    f0_min: float = 60.0
    f0_max: float = 400.0
    dp_penalty: float = 0.5  # per-octave^2 lag transition cost
    nccf_floor_eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.f0_min < self.f0_max):
            raise ValueError("need 0 < f0_min < f0_max")

    def lag_range(self, sample_rate: int):
        if self.f0_max >= sample_rate / 2:
            raise ValueError("f0_max must be below Nyquist")
        lo = int(np.floor(sample_rate / self.f0_max))
        hi = int(np.ceil(sample_rate / self.f0_min))
        return lo, hi


def _slaney_hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    mel = 3.0 * f / 200.0
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + 27.0 * np.log(np.maximum(f, 1000.0) / 1000.0) / np.log(6.4), mel)
    return mel


def _slaney_mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = 200.0 * m / 3.0
    log_region = m >= 15.0
    return np.where(log_region, 1000.0 * np.exp(np.log(6.4) * (m - 15.0) / 27.0), f)


def mel_filterbank(spec: FrameSpec, sample_rate: int = 16000):
    """Triangular filterbank on the rfft grid, 0 Hz to Nyquist.

    Returns (filters [n_mels, n_bins], center_frequencies_hz [n_mels]).
    """
    n_bins = spec.window_samples // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(
        _slaney_hz_to_mel(0.0), _slaney_hz_to_mel(sample_rate / 2.0), spec.n_mels + 2
    )
    hz_pts = _slaney_mel_to_hz(mel_pts)

    fb = np.zeros((spec.n_mels, n_bins))
    for m in range(spec.n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb.astype(np.float64), hz_pts[1:-1].copy()


def _frames(x: np.ndarray, spec: FrameSpec) -> np.ndarray:
    n_frames = spec.num_frames(len(x))
    idx = np.arange(spec.window_samples)[None, :] + spec.hop_samples * np.arange(n_frames)[:, None]
    return x[idx]


def mel_spectrogram(w: Waveform, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Log mel energies, shape [T, n_mels], floored at ln(1e-10)."""
    x = w.samples.astype(np.float64)
    frames = _frames(x, spec)
    n = spec.window_samples
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    spectrum = np.fft.rfft(frames * window, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    fb, _ = mel_filterbank(spec, w.sample_rate)
    mel = power @ fb.T
    return np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)


def band_energies(logmel: np.ndarray) -> np.ndarray:
    """Per-frame (e1, e2, e3): log of total / upper-half / lower-half mel energy.

    Sums run in the linear mel domain, so exp(e1) == exp(e2) + exp(e3).
    """
    logmel = np.asarray(logmel)
    n_mels = logmel.shape[1]
    if n_mels % 2 != 0:
        raise ValueError("n_mels must be even")
    linear = np.exp(logmel.astype(np.float64))
    half = n_mels // 2
    lower = linear[:, :half].sum(axis=1)
    upper = linear[:, half:].sum(axis=1)
    out = np.stack([np.log(lower + upper), np.log(upper), np.log(lower)], axis=1)
    return out.astype(np.float32)


def nccf(w: Waveform, spec: FrameSpec = FrameSpec(), cfg: PitchConfig = PitchConfig()) -> np.ndarray:
    """Normalized cross-correlation, shape [T, n_lags], clamped to [-1, 1].

    Lag l at frame t correlates the window starting at the frame's first
    sample with the same window shifted by l samples; the signal is
    zero-padded at the end by the maximum lag.
    """
    lag_lo, lag_hi = cfg.lag_range(w.sample_rate)
    x = w.samples.astype(np.float64)
    n = len(x)
    win = spec.window_samples
    n_frames = spec.num_frames(n)
    starts = spec.hop_samples * np.arange(n_frames)

    xp = np.concatenate([x, np.zeros(lag_hi + win)])
    sq_cum = np.concatenate([[0.0], np.cumsum(xp * xp)])
    energy0 = sq_cum[starts + win] - sq_cum[starts]

    eps = cfg.nccf_floor_eps
    lags = np.arange(lag_lo, lag_hi + 1)
    out = np.empty((n_frames, len(lags)))
    for j, lag in enumerate(lags):
        prod = x * xp[lag:lag + n]
        prod_cum = np.concatenate([[0.0], np.cumsum(prod)])
        cross = prod_cum[starts + win] - prod_cum[starts]
        energy_l = sq_cum[starts + lag + win] - sq_cum[starts + lag]
        out[:, j] = cross / np.sqrt((energy0 + eps) * (energy_l + eps))
    return np.clip(out, -1.0, 1.0).astype(np.float32)


# Multiplicative decay applied to NCCF scores inside the tracker only, RAPT
# style: any T-periodic signal correlates equally at lag T and its
# multiples, so the path objective alone cannot reject octave-down locks.
# 3% per octave clears NCCF noise (~1-2%) without biasing adjacent lags.
_LAG_DECAY_PER_OCTAVE = 0.03


def track_pitch(nccf_matrix: np.ndarray, cfg: PitchConfig = PitchConfig(),
                sample_rate: int = 16000):
    """Viterbi lag path; returns (f0_hz [T], nccf_at_path [T]).

    Minimizes sum_t [-NCCF(t, l_t) + dp_penalty * log2(l_t / l_{t-1})^2].
    Every frame gets a continuous pitch value; voicing is left to the
    caller via the returned NCCF channel.
    """
    nccf_matrix = np.asarray(nccf_matrix, dtype=np.float64)
    n_frames, n_lags = nccf_matrix.shape
    lag_lo, lag_hi = cfg.lag_range(sample_rate)
    if n_lags != lag_hi - lag_lo + 1:
        raise ValueError(f"NCCF has {n_lags} lags, config implies {lag_hi - lag_lo + 1}")
    lags = np.arange(lag_lo, lag_hi + 1, dtype=np.float64)

    decay = 1.0 - _LAG_DECAY_PER_OCTAVE * np.log2(lags / lag_lo)
    local = -nccf_matrix * decay[None, :]

    log_ratio = np.log2(lags[:, None] / lags[None, :])
    trans = cfg.dp_penalty * log_ratio**2

    cost = local[0].copy()
    back = np.zeros((n_frames, n_lags), dtype=np.int32)
    lag_idx = np.arange(n_lags)
    for t in range(1, n_frames):
        total = cost[None, :] + trans  # [destination, source]
        back[t] = np.argmin(total, axis=1)
        cost = local[t] + total[lag_idx, back[t]]

    path = np.zeros(n_frames, dtype=np.int64)
    path[-1] = int(np.argmin(cost))
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]

    f0 = sample_rate / lags[path]
    nccf_at_path = nccf_matrix[np.arange(n_frames), path]
    return f0.astype(np.float32), nccf_at_path.astype(np.float32)


def _znorm(values: np.ndarray) -> np.ndarray:
    mean = values.mean(axis=0, dtype=np.float64)
    std = values.std(axis=0, dtype=np.float64)
    out = np.zeros_like(values, dtype=np.float64)
    ok = std >= 1e-8
    out[:, ok] = (values[:, ok] - mean[ok]) / std[ok]
    return out.astype(np.float32)


def pitch_input(w: Waveform) -> Waveform:
    """Zero-phase lowpass of the waveform for the NCCF/tracker path."""
    b, a = sp_signal.butter(4, PITCH_LOWPASS_HZ / (w.sample_rate / 2), btype="low")
    filtered = sp_signal.filtfilt(b, a, w.samples.astype(np.float64))
    return Waveform(filtered.astype(np.float32), w.sample_rate)


def prosody_track(w: Waveform, spec: FrameSpec = FrameSpec(),
                  cfg: PitchConfig = PitchConfig(), normalize: bool = True) -> np.ndarray:
    """Six-channel prosody matrix [T, 6], frame-aligned with the mel track.

    Columns follow PROSODY_CHANNELS. With normalize=True (what models
    consume) each channel is z-normalized per utterance; channels with
    stdev < 1e-8 become all-zero.
    """
    logmel = mel_spectrogram(w, spec)
    f0, voicing = track_pitch(nccf(pitch_input(w), spec, cfg), cfg, w.sample_rate)

    p1 = np.log(f0.astype(np.float64))
    p3 = np.empty_like(p1)
    p3[1:-1] = (p1[2:] - p1[:-2]) / 2.0
    if len(p1) >= 2:
        p3[0] = (p1[1] - p1[0]) / 2.0
        p3[-1] = (p1[-1] - p1[-2]) / 2.0
    else:
        p3[:] = 0.0

    track = np.stack(
        [p1, voicing.astype(np.float64), p3], axis=1
    ).astype(np.float32)
    track = np.concatenate([track, band_energies(logmel)], axis=1)
    if normalize:
        track = _znorm(track)
    return track


def save_features(path, matrix: np.ndarray, kind: str) -> None:
    """Feature dump: one JSON header line, then row-major LE float32 data."""
    if kind not in ("mel", "prosody"):
        raise ValueError(f"unknown feature kind {kind!r}")
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    header = json.dumps(
        {"rows": int(matrix.shape[0]), "cols": int(matrix.shape[1]), "kind": kind},
        separators=(",", ":"), sort_keys=True,
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii") + b"\n")
        f.write(matrix.tobytes())


def load_features(path):
    """Read a feature dump; returns (matrix, kind)."""
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    header = json.loads(header_line.decode("ascii"))
    rows, cols, kind = header["rows"], header["cols"], header["kind"]
    expected = rows * cols * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: payload {len(payload)} bytes, header implies {expected}")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    return matrix.copy(), kind
