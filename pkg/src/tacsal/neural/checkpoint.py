"""Trained-model container and the ``TSALCKPT1`` checkpoint file format.

Layout: the magic ``TSALCKPT1\\n``, a little-endian ``uint32`` header length, a
JSON header ``{"spec": ..., "tensors": [{"name", "shape", "offset"}, ...]}``,
then the raw little-endian float32 arrays back to back (offsets are relative to
the start of that payload). The training manifest sits next to the checkpoint
as a YAML document with the same stem.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .nets import NetSpec

MAGIC = b"TSALCKPT1\n"


class CheckpointError(ValueError):
    pass


@dataclass
class TrainedModel:
    spec: NetSpec
    params: dict[str, np.ndarray]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} has non-finite values")
        self._module: torch.nn.Module | None = None

    @classmethod
    def from_module(cls, spec: NetSpec, module: torch.nn.Module, manifest: dict) -> "TrainedModel":
        params = {k: v.detach().cpu().numpy().astype(np.float32).copy()
                  for k, v in module.state_dict().items()}
        return cls(spec, params, manifest)

    def module(self) -> torch.nn.Module:
        """Evaluation-mode network carrying these parameters (built once, then cached)."""
        if self._module is None:
            net = self.spec.build()
            state = net.state_dict()
            loaded = {k: torch.from_numpy(self.params[k].reshape(state[k].shape)).to(state[k].dtype)
                      for k in state}
            net.load_state_dict(loaded)
            net.eval()
            self._module = net
        return self._module

    def digest(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()


def to_bytes(model: TrainedModel) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(model.params):
        shape = list(np.shape(model.params[name]))
        # ascontiguousarray promotes 0-d arrays, so the shape is taken first
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        entries.append({"name": name, "shape": shape, "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"spec": model.spec.to_dict(), "tensors": entries},
                        sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def from_bytes(data: bytes, manifest: dict | None = None) -> TrainedModel:
    if not data.startswith(MAGIC):
        raise CheckpointError("bad checkpoint magic")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError("unreadable checkpoint header") from exc
    pos += hlen
    params = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = pos + e["offset"]
        if start + 4 * count > len(data):
            raise CheckpointError(f"truncated tensor {e['name']}")
        params[e["name"]] = np.frombuffer(data, dtype="<f4", count=count,
                                          offset=start).reshape(e["shape"]).astype(np.float32)
    return TrainedModel(NetSpec.from_dict(header["spec"]), params, manifest or {})


def manifest_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".yaml")


def save_checkpoint(path: str | Path, model: TrainedModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(model))
    manifest_path(path).write_text(yaml.safe_dump(model.manifest, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> TrainedModel:
    path = Path(path)
    mpath = manifest_path(path)
    manifest = yaml.safe_load(mpath.read_text()) if mpath.exists() else {}
    return from_bytes(path.read_bytes(), manifest)
