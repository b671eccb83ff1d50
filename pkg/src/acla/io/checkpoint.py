"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"ACLA"  uint32 version  uint32 section count
    per section:
        uint16 name length, UTF-8 name
        uint8 kind ('f' float64 array, 'i' int64 array, 't' UTF-8 text)
        uint8 ndim, uint64 * ndim shape      (arrays only)
        uint64 payload length, payload

Array payloads are little-endian 64-bit values in C order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..restoration.optim import AdamState

__all__ = [
    "MAGIC",
    "VERSION",
    "Checkpoint",
    "write_container",
    "read_container",
    "save_checkpoint",
    "load_checkpoint",
    "rng_state",
    "restore_rng",
]

MAGIC = b"ACLA"
VERSION = 1
_DTYPES = {"f": np.dtype("<f8"), "i": np.dtype("<i8")}


def write_container(path, sections):
    """Write ``sections`` (name -> float/int array or str) in insertion order."""
    out = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, value in sections.items():
        raw_name = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw_name)) + raw_name)
        if isinstance(value, str):
            payload = value.encode("utf-8")
            out.append(b"t")
        else:
            arr = np.asarray(value)
            kind = "i" if np.issubdtype(arr.dtype, np.integer) else "f"
            arr = np.ascontiguousarray(arr, dtype=_DTYPES[kind])
            payload = arr.tobytes()
            out.append(kind.encode() + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(struct.pack("<Q", len(payload)) + payload)
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic bytes)")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    sections = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        kind = r.take(1).decode("ascii", errors="replace")
        if kind == "t":
            (size,) = r.unpack("<Q")
            sections[name] = r.take(size).decode("utf-8")
        elif kind in _DTYPES:
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}Q")
            (size,) = r.unpack("<Q")
            dtype = _DTYPES[kind]
            if size != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
                raise CheckpointError(f"section {name!r} payload does not match its shape")
            sections[name] = np.frombuffer(r.take(size), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        else:
            raise CheckpointError(f"section {name!r} has unknown kind {kind!r}")
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last section")
    return sections


def rng_state(rng):
    return rng.bit_generator.state


def restore_rng(state):
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and continue a run exactly where it stopped.

    ``params`` holds weights and architecture logits by name; ``optimizers``
    maps an optimizer name to its :class:`AdamState`; ``rngs`` holds bit
    generator states; ``extra`` carries run-specific JSON (derived positions,
    metric trace, ...).
    """

    kind: str
    config: str
    spec: dict
    params: dict
    epoch: int = 0
    optimizers: dict = field(default_factory=dict)
    rngs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt):
    meta = {
        "kind": ckpt.kind,
        "epoch": ckpt.epoch,
        "spec": ckpt.spec,
        "rngs": ckpt.rngs,
        "optimizers": {n: {"step": s.step, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "names": list(s.m)}
                       for n, s in ckpt.optimizers.items()},
        "extra": ckpt.extra,
    }
    sections = {"meta": json.dumps(meta), "config": ckpt.config}
    for name, arr in ckpt.params.items():
        sections[f"param/{name}"] = arr
    for opt, state in ckpt.optimizers.items():
        for name in state.m:
            sections[f"opt/{opt}/m/{name}"] = state.m[name]
            sections[f"opt/{opt}/v/{name}"] = state.v[name]
    write_container(path, sections)


def load_checkpoint(path):
    sections = read_container(path)
    try:
        meta = json.loads(sections["meta"])
        config = sections["config"]
        params = {k[len("param/"):]: v for k, v in sections.items() if k.startswith("param/")}
        optimizers = {}
        for opt, info in meta["optimizers"].items():
            state = AdamState(beta1=info["beta1"], beta2=info["beta2"], eps=info["eps"], step=info["step"])
            for name in info["names"]:
                state.m[name] = sections[f"opt/{opt}/m/{name}"]
                state.v[name] = sections[f"opt/{opt}/v/{name}"]
            optimizers[opt] = state
        return Checkpoint(kind=meta["kind"], config=config, spec=meta["spec"], params=params,
                          epoch=meta["epoch"], optimizers=optimizers, rngs=meta["rngs"], extra=meta["extra"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is missing or has malformed section: {exc}") from None
