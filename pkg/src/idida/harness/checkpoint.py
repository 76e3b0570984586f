"""Checkpoints: a JSON manifest plus a raw little-endian float64 payload."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffcore import ParameterStore

FORMAT = "idida-checkpoint/1"
MANIFEST = "checkpoint.json"
PAYLOAD = "params.bin"
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    network: dict
    config: dict
    epoch: int
    val_metric: float
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_store(cls, store: ParameterStore, network: dict, config: dict, epoch: int, val_metric: float, **extra) -> "Checkpoint":
        return cls(store.state(), network, config, epoch, val_metric, extra)

    def manifest(self) -> dict:
        entries, offset = [], 0
        for path in sorted(self.state):
            arr = self.state[path]
            nbytes = int(arr.size) * _DTYPE.itemsize
            entries.append({"path": path, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
            offset += nbytes
        return {
            "format": FORMAT,
            "dtype": "float64-le",
            "params": entries,
            "payload_bytes": offset,
            "network": self.network,
            "config": self.config,
            "epoch": self.epoch,
            "val_metric": self.val_metric,
            "extra": self.extra,
        }

    def payload(self) -> bytes:
        return b"".join(np.ascontiguousarray(self.state[p], dtype=_DTYPE).tobytes() for p in sorted(self.state))

    def save(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / PAYLOAD).write_bytes(self.payload())
        (out / MANIFEST).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return out

    def equal(self, other: "Checkpoint") -> bool:
        """Bitwise parameter equality plus identical metadata."""
        if sorted(self.state) != sorted(other.state):
            return False
        return self.payload() == other.payload() and self.manifest() == other.manifest()


def load_checkpoint(directory) -> Checkpoint:
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST).read_text(encoding="utf-8"))
        raw = (d / PAYLOAD).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"{d}: missing {Path(exc.filename).name}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{d}: unsupported checkpoint format {manifest.get('format')!r}")
    if len(raw) != manifest["payload_bytes"]:
        raise CheckpointError(f"{d}: payload has {len(raw)} bytes, manifest declares {manifest['payload_bytes']}")
    state: dict[str, np.ndarray] = {}
    expect = 0
    for e in manifest["params"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if e["offset"] != expect or e["nbytes"] != n * _DTYPE.itemsize:
            raise CheckpointError(f"{d}: entry {e['path']} disagrees with its shape {shape}")
        chunk = raw[e["offset"] : e["offset"] + e["nbytes"]]
        state[e["path"]] = np.frombuffer(chunk, dtype=_DTYPE).astype(np.float64).reshape(shape)
        expect += e["nbytes"]
    if expect != len(raw):
        raise CheckpointError(f"{d}: {len(raw) - expect} trailing payload bytes")
    return Checkpoint(state, manifest["network"], manifest["config"], manifest["epoch"], manifest["val_metric"], manifest.get("extra", {}))
