"""WAV I/O and waveform utilities.

Only RIFF PCM, 16-bit signed little-endian, mono, 16 kHz is accepted;
anything else is rejected with an error naming the offending property.
"""

import struct
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
_INT16_SCALE = 32768.0


class AudioFormatError(ValueError):
    """Raised when a WAV file is malformed or has an unsupported format."""


@dataclass(frozen=True)
class Waveform:
    """Mono PCM audio with amplitudes in [-1, 1] at a fixed 16 kHz rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {samples.shape}")
        if not np.isfinite(samples).all():
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate {self.sample_rate} != {SAMPLE_RATE}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> Waveform:
    """Read a RIFF PCM16 mono 16 kHz file, scaling samples by 1/32768."""
    with open(path, "rb") as f:
        data = f.read()

    def fail(offset, msg):
        raise AudioFormatError(f"{path}: {msg} (byte offset {offset})")

    if len(data) < 12:
        fail(0, "file too short for a RIFF header")
    if data[0:4] != b"RIFF":
        fail(0, "missing RIFF magic")
    if data[8:12] != b"WAVE":
        fail(8, "missing WAVE form type")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + chunk_size > len(data):
            fail(pos, f"chunk {chunk_id!r} overruns file")
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                fail(pos, "fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            pcm = data[body:body + chunk_size]
        pos = body + chunk_size + (chunk_size & 1)

    if fmt is None:
        fail(pos, "no fmt chunk")
    if pcm is None:
        fail(pos, "no data chunk")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise AudioFormatError(f"{path}: audio_format {audio_format} != 1 (PCM)")
    if channels != 1:
        raise AudioFormatError(f"{path}: channels {channels} != 1 (mono)")
    if sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: sample_rate {sample_rate} != {SAMPLE_RATE}")
    if bits != 16:
        raise AudioFormatError(f"{path}: bits_per_sample {bits} != 16")

    ints = np.frombuffer(pcm[: len(pcm) - (len(pcm) % 2)], dtype="<i2")
    return Waveform(ints.astype(np.float32) / _INT16_SCALE)


def save_wav(path, w: Waveform) -> None:
    """Write a Waveform as RIFF PCM16 mono 16 kHz."""
    scaled = np.round(np.clip(w.samples, -1.0, 1.0) * _INT16_SCALE)
    ints = np.clip(scaled, -32768, 32767).astype("<i2")
    pcm = ints.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", len(pcm))
    with open(path, "wb") as f:
        f.write(header + pcm)


def crop_or_pad(w: Waveform, seconds: float) -> Waveform:
    """Truncate the tail or zero-pad the tail to exactly `seconds`."""
    if seconds <= 0:
        raise ValueError("target duration must be positive")
    target = int(round(seconds * w.sample_rate))
    n = len(w.samples)
    if n == target:
        return w
    if n > target:
        return Waveform(w.samples[:target], w.sample_rate)
    padded = np.zeros(target, dtype=np.float32)
    padded[:n] = w.samples
    return Waveform(padded, w.sample_rate)
