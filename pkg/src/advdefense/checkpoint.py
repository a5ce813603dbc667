"""Versioned binary model checkpoints.

Layout: magic "ADVS", format version (u32 LE), architecture id string, then
one record per parameter: name, shape header, little-endian float32 payload.
A save/load round trip is bitwise identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError
from .nets import (
    AUTOENCODER_ARCH,
    CLASSIFIER_ARCH,
    SWITCH_ARCH,
    assemble_switch,
    build_autoencoder,
    build_classifier,
)

MAGIC = b"ADVS"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(path, model):
    """Write any model exposing ``arch_id`` and ``param_entries()``."""
    entries = model.param_entries()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(_pack_str(model.arch_id))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            payload = np.ascontiguousarray(arr, dtype="<f4")
            f.write(_pack_str(name))
            f.write(struct.pack("<I", payload.ndim))
            f.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
            f.write(payload.tobytes())


class _Reader:
    def __init__(self, path):
        with open(path, "rb") as f:
            self.buf = f.read()
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint file truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _parse_arch(arch_id: str) -> tuple[str, dict]:
    base, _, rest = arch_id.partition(":")
    fields = {}
    if rest:
        for piece in rest.split(","):
            k, _, v = piece.partition("=")
            fields[k] = v
    return base, fields


def _rebuild(arch_id: str):
    base, fields = _parse_arch(arch_id)
    if base == CLASSIFIER_ARCH:
        return build_classifier(int(fields["seed"]))
    if base == AUTOENCODER_ARCH:
        return build_autoencoder(int(fields["seed"]))
    if base == SWITCH_ARCH:
        n = int(fields["n"])
        split = int(fields["split"])
        seed = int(fields["seed"])
        subs = [build_classifier(i) for i in range(n)]
        return assemble_switch(subs, split, seed)
    raise CheckpointError(f"unknown architecture id: {arch_id!r}")


def load_checkpoint(path):
    """Rebuild the model named in the header and fill in its parameters."""
    r = _Reader(path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch_id = r.string()
    n_entries = r.u32()
    loaded: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        loaded[name] = arr

    model = _rebuild(arch_id)
    expected = dict(model.param_entries())
    if set(expected) != set(loaded):
        missing = sorted(set(expected) - set(loaded))
        extra = sorted(set(loaded) - set(expected))
        raise CheckpointError(f"parameter names mismatch (missing={missing}, extra={extra})")
    for name, target in expected.items():
        if target.shape != loaded[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file {loaded[name].shape}, model {target.shape}"
            )
        target[...] = loaded[name]
    return model
