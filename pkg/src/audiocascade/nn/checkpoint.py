"""Versioned binary checkpoints for a ParamStore.

Layout (little-endian), version 1:

    magic   8 bytes  b"AUDCASCK"
    version u32      1
    prec    u32      32 or 64 (float width of every array in the file)
    step    u64      shared Adam step count
    count   u32      number of parameters
    then per parameter, in sorted name order:
        name_len u16, name utf-8 bytes
        ndim u8, dims u32 * ndim
        param data, adam m, adam v, ema shadow   (4 raw arrays back to back)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .optim import ParamStore

MAGIC = b"AUDCASCK"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(store: ParamStore, path) -> None:
    store.init_ema()
    first = next(iter(store.params.values()), None)
    prec = 64 if (first is not None and first.data.dtype == np.float64) else 32
    dt = "<f8" if prec == 64 else "<f4"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIQI", VERSION, prec, store.step, len(store.params)))
        for name in sorted(store.params):
            p = store.params[name]
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", p.data.ndim))
            f.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            for arr in (p.data, store.adam_m[name], store.adam_v[name], store.ema[name]):
                f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_checkpoint(store: ParamStore, path) -> None:
    """Restore params, Adam moments, EMA, and step count in place.

    The store must already contain identically named and shaped parameters
    (i.e. build the model first, then load).
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    off = 8
    version, prec, step, count = struct.unpack_from("<IIQI", data, off)
    off += struct.calcsize("<IIQI")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if prec not in (32, 64):
        raise CheckpointError(f"{path}: bad precision {prec}")
    dt = np.dtype("<f8" if prec == 64 else "<f4")
    store.init_ema()
    seen = set()
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            if name not in store.params:
                raise CheckpointError(f"{path}: unknown parameter {name!r}")
            p = store.params[name]
            if tuple(shape) != p.data.shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {name!r}: file {shape}, model {p.data.shape}")
            n = int(np.prod(shape)) if ndim else 1
            targets = (p.data, store.adam_m[name], store.adam_v[name], store.ema[name])
            for arr in targets:
                chunk = np.frombuffer(data, dtype=dt, count=n, offset=off)
                off += n * dt.itemsize
                arr[...] = chunk.reshape(shape).astype(arr.dtype)
            seen.add(name)
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated checkpoint ({e})") from e
    missing = set(store.params) - seen
    if missing:
        raise CheckpointError(f"{path}: parameters missing from file: {sorted(missing)}")
    store.step = step
