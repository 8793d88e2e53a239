"""Model checkpoint serialization.

Layout: magic "PDCK", u32 LE format version, u32 LE header length, JSON
header (architecture config, parameter name -> shape/offset table,
metadata), then contiguous little-endian float32 parameter data. The JSON
is canonicalized (sorted keys, no whitespace) so save -> load -> save is
byte-identical.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .models import IntentModel, build_model

MAGIC = b"PDCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    config: dict
    params: dict
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: IntentModel, metadata=None):
        params = {name: np.asarray(p.data, dtype=np.float32).copy()
                  for name, p in model.params.items()}
        return cls(config=dict(model.config), params=params, metadata=dict(metadata or {}))

    def to_model(self) -> IntentModel:
        model = _model_skeleton(self.config)
        for name, p in model.params.items():
            if name not in self.params:
                raise CheckpointError(f"checkpoint missing parameter {name!r}")
            loaded = self.params[name]
            if tuple(loaded.shape) != tuple(p.data.shape):
                raise CheckpointError(
                    f"shape mismatch for parameter {name!r}: "
                    f"checkpoint {tuple(loaded.shape)}, config implies {tuple(p.data.shape)}"
                )
            p.data = loaded.astype(np.float32).copy()
        return model


def _model_skeleton(config: dict) -> IntentModel:
    return build_model(
        arch=config["arch"],
        n_intents=config["n_intents"],
        seed=0,
        hidden_channels=config["hidden_channels"],
        n_layers=config["n_layers"],
        kernel=config["kernel"],
        downsample_factor=config["downsample_factor"],
        lstm_hidden=config["lstm_hidden"],
        prosody_attention=config["prosody_attention"],
        n_mels=config["n_mels"],
        feature_mask=config.get("feature_mask"),
    )


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    names = sorted(ckpt.params)
    table = {}
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        table[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "config": ckpt.config,
        "metadata": ckpt.metadata,
        "params": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", ckpt.format_version, len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: version mismatch: file {version}, supported {FORMAT_VERSION}"
        )
    header_end = 12 + header_len
    if len(raw) < header_end:
        raise CheckpointError(f"{path}: truncated checkpoint (header)")
    header = json.loads(raw[12:header_end].decode("utf-8"))
    payload = raw[header_end:]

    params = {}
    for name, entry in header["params"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 4
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated checkpoint (parameter {name!r})")
        params[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()

    ckpt = ModelCheckpoint(config=header["config"], params=params,
                           metadata=header["metadata"], format_version=version)
    ckpt.to_model()  # validates shapes against the embedded config
    return ckpt
