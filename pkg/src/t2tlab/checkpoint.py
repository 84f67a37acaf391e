"""Byte-stable checkpoint archives.

A checkpoint is a single file: a magic line, a canonical-JSON manifest
(step counter, config fingerprint, entry count, optional extras), then
binary entries sorted by name. Each entry stores name, dtype, shape, and
raw little-endian values. Identical parameters always serialize to
identical bytes, which is what the determinism and resume guarantees
are tested against.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .tensor import Tensor

MAGIC = b"T2TCKPT1\n"
_DTYPE_CODES = {"<f8": 1, "<f4": 2, "<i8": 3}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    step: int
    arrays: dict[str, np.ndarray]
    config_fingerprint: str
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_params(cls, step: int, params: dict[str, Tensor], fingerprint: str, extras=None) -> "Checkpoint":
        arrays = {name: t.data.copy() for name, t in params.items()}
        return cls(step=step, arrays=arrays, config_fingerprint=fingerprint, extras=dict(extras or {}))

    def save(self, path) -> None:
        names = sorted(self.arrays)
        manifest = json.dumps(
            {
                "step": self.step,
                "config_fingerprint": self.config_fingerprint,
                "num_entries": len(names),
                "extras": self.extras,
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(manifest)))
            f.write(manifest)
            for name in names:
                arr = np.ascontiguousarray(self.arrays[name])
                le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
                code = _DTYPE_CODES.get(le.dtype.str)
                if code is None:
                    raise ConfigurationError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
                encoded = name.encode("utf-8")
                f.write(struct.pack("<I", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<BI", code, arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                payload = le.tobytes()
                f.write(struct.pack("<Q", len(payload)))
                f.write(payload)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as f:
            if f.read(len(MAGIC)) != MAGIC:
                raise DataError(f"not a checkpoint file: {path}")
            (mlen,) = struct.unpack("<I", f.read(4))
            manifest = json.loads(f.read(mlen).decode("utf-8"))
            arrays: dict[str, np.ndarray] = {}
            for _ in range(manifest["num_entries"]):
                (nlen,) = struct.unpack("<I", f.read(4))
                name = f.read(nlen).decode("utf-8")
                code, ndim = struct.unpack("<BI", f.read(5))
                shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
                (plen,) = struct.unpack("<Q", f.read(8))
                arr = np.frombuffer(f.read(plen), dtype=_CODE_DTYPES[code]).reshape(shape)
                arrays[name] = arr.copy()
        return cls(
            step=manifest["step"],
            arrays=arrays,
            config_fingerprint=manifest["config_fingerprint"],
            extras=manifest.get("extras", {}),
        )

    def restore_into(self, params: dict[str, Tensor], fingerprint: str) -> None:
        """Load values into an existing parameter dict, validating identity."""
        if fingerprint != self.config_fingerprint:
            raise ConfigurationError(
                f"checkpoint fingerprint {self.config_fingerprint} does not match model {fingerprint}"
            )
        missing = set(params) - set(self.arrays)
        extra = {n for n in set(self.arrays) - set(params) if not n.startswith("opt/")}
        if missing or extra:
            raise ConfigurationError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, tensor in params.items():
            arr = self.arrays[name]
            if arr.shape != tensor.data.shape:
                raise ConfigurationError(f"shape mismatch for {name!r}: {arr.shape} vs {tensor.data.shape}")
            params[name] = Tensor(arr.astype(tensor.data.dtype), requires_grad=tensor.requires_grad)
