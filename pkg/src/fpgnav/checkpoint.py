"""Checkpoint files: a JSON manifest followed by raw little-endian float64 tensors.

::

    b"FPGC" | u32 format_version | u64 manifest_bytes | manifest (UTF-8 JSON) | tensor data

The manifest records model dimensions, the activation tag, schedule
parameters, the training config and a named-tensor table (name, shape,
byte offset into the data block). Writing is byte-deterministic.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .denoiser import Denoiser
from .schedule import NoiseSchedule

MAGIC = b"FPGC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save_checkpoint(path, model: Denoiser, schedule: NoiseSchedule, train_config: dict | None = None,
                    extra: dict | None = None) -> None:
    tensors, offset = [], 0
    blobs = []
    for name in Denoiser.PARAM_NAMES:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": {
            "cond_dim": model.cond_dim, "action_dim": model.action_dim,
            "hidden_dim": model.hidden_dim, "latent_dim": model.latent_dim,
            "temb_dim": model.temb_dim, "activation": model.activation, "seed": model.seed,
        },
        "schedule": schedule.to_dict(),
        "train_config": train_config or {},
        "extra": extra or {},
        "tensors": tensors,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(mbytes)))
        fh.write(mbytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Return ``(model, schedule, manifest)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, mlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {version}")
    manifest = json.loads(raw[_PREFIX.size:_PREFIX.size + mlen].decode("utf-8"))
    data = raw[_PREFIX.size + mlen:]
    params = {}
    for t in manifest["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=t["offset"])
        params[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    m = manifest["model"]
    model = Denoiser(m["cond_dim"], m["action_dim"], m["hidden_dim"], m["latent_dim"],
                     m["temb_dim"], m["activation"], params, m.get("seed"))
    return model, NoiseSchedule.from_dict(manifest["schedule"]), manifest
