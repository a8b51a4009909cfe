"""Checkpoint container (magic "ABCK", little-endian, bit-exact round trip).

Layout: magic, format version, config hash (sha256, 32 bytes), stage tag,
epoch, a length-prefixed JSON metadata blob (optimizer step, RNG state,
counters), then named float64 arrays for parameters and optimizer moments.
"""

import json
import struct

import numpy as np

from . import training
from .synthdata import FormatError

MAGIC = b"ABCK"
VERSION = 1

_STAGES = ("init", "warmup", "cooperate")
_DTYPES = {0: "<f8"}


class VersionError(FormatError):
    """Checkpoint written by an incompatible format version."""


class StateError(RuntimeError):
    """Checkpoint exists but cannot be used for the requested operation."""


def _named_arrays(state):
    out = {}
    for name, p in state.bundle.params.items():
        out["param/" + name] = p.data
        out["adam_m/" + name] = state.optimizer.m[name]
        out["adam_v/" + name] = state.optimizer.v[name]
    return out


def save_state(path, state, cfg_hash):
    meta = {
        "stage": state.stage,
        "epoch": state.epoch,
        "adam_t": state.optimizer.t,
        "infeasible": state.infeasible,
        "rng_state": state.rng.bit_generator.state,
        "history": state.history,
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    arrays = _named_arrays(state)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(cfg_hash)
        fh.write(struct.pack("<BI", _STAGES.index(state.stage), state.epoch))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", 0, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated while reading {what} at byte offset {fh.tell() - len(data)}")
    return data


def read_raw(path):
    """Parse a checkpoint file into (meta dict, arrays dict, config hash)."""
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise FormatError("bad magic at byte offset 0: not a checkpoint file")
        (version,) = struct.unpack("<I", _read(fh, 4, "version"))
        if version != VERSION:
            raise VersionError(f"checkpoint format version {version}, expected {VERSION}")
        cfg_hash = _read(fh, 32, "config hash")
        stage_idx, epoch = struct.unpack("<BI", _read(fh, 5, "stage tag"))
        if stage_idx >= len(_STAGES):
            raise FormatError(f"unknown stage tag {stage_idx}")
        (meta_len,) = struct.unpack("<I", _read(fh, 4, "metadata length"))
        meta = json.loads(_read(fh, meta_len, "metadata"))
        (n_arrays,) = struct.unpack("<I", _read(fh, 4, "array count"))
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", _read(fh, 2, "array name length"))
            name = _read(fh, name_len, "array name").decode()
            dtype_code, ndim = struct.unpack("<BB", _read(fh, 2, "array header"))
            if dtype_code not in _DTYPES:
                raise FormatError(f"unknown dtype code {dtype_code} for array {name}")
            shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim, "array shape"))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = _read(fh, 8 * count, f"array {name}")
            arrays[name] = np.frombuffer(raw, dtype=_DTYPES[dtype_code]).reshape(shape).copy()
    meta["stage"] = _STAGES[stage_idx]
    meta["epoch"] = epoch
    return meta, arrays, cfg_hash


def load_state(path, cfg, cfg_hash, force=False):
    """Rebuild a TrainState from a checkpoint written under `cfg`."""
    meta, arrays, saved_hash = read_raw(path)
    if saved_hash != cfg_hash and not force:
        raise StateError(
            f"{path}: config hash mismatch (checkpoint was written under a "
            "different configuration; pass --force to override)"
        )
    state = training.new_state(cfg)
    for name, p in state.bundle.params.items():
        for prefix, target in (
            ("param/", p.data),
            ("adam_m/", state.optimizer.m[name]),
            ("adam_v/", state.optimizer.v[name]),
        ):
            key = prefix + name
            if key not in arrays:
                raise StateError(f"{path}: missing array {key}")
            if arrays[key].shape != target.shape:
                raise StateError(f"{path}: shape mismatch for {key}")
            target[...] = arrays[key]
    state.stage = meta["stage"]
    state.epoch = meta["epoch"]
    state.optimizer.t = meta["adam_t"]
    state.infeasible = meta.get("infeasible", 0)
    state.history = meta.get("history", [])
    rng_state = meta["rng_state"]
    state.rng.bit_generator.state = rng_state
    return state
