"""Bit-exact binary checkpoints.

Layout: magic "RTCK", u32 version, u32 tensor count, then per tensor a
u32 name length, the utf-8 name, u32 ndim, u32 extents, and the raw
little-endian float32 payload. All integers little-endian. Tensors are
stored in model order, shared sets once under their group-scoped names.

The config snapshot rides along as a reserved first entry named
"meta/config.json": canonical JSON, space-padded to a 4-byte multiple,
carried as the raw payload of a 1-D pseudo-tensor. Round-tripping keeps
its exact bytes, so save -> load -> save is byte-identical.

Scalars are stored in 32 bits regardless of compute precision; saving a
64-bit model narrows each value to the nearest float32.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"RTCK"
VERSION = 1
CONFIG_ENTRY = "meta/config.json"

_U32 = struct.Struct("<I")
_NAME_LIMIT = 4096
_NDIM_LIMIT = 8


class CheckpointError(Exception):
    pass


class CorruptHeaderError(CheckpointError):
    """Bad magic, unsupported version, or an implausible structure field."""


class TruncatedError(CheckpointError):
    """File ended before the declared contents."""


class ConfigMismatchError(CheckpointError):
    """Checkpoint config does not match the target, differing fields listed."""


class Checkpoint:
    """Parsed checkpoint: config dict plus ordered name -> float32 array.

    config_raw holds the exact stored JSON bytes so a re-save reproduces
    the file bit for bit even if dict key order would not.
    """

    def __init__(self, version: int, config: dict, config_raw: bytes, tensors: dict[str, np.ndarray]):
        self.version = version
        self.config = config
        self.config_raw = config_raw
        self.tensors = tensors

    def names(self) -> list[str]:
        return list(self.tensors)


def _config_bytes(config: dict) -> bytes:
    raw = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    pad = (-len(raw)) % 4
    return raw + b" " * pad


def _write_entry(f, name: str, payload: bytes, shape: tuple[int, ...]) -> None:
    nb = name.encode("utf-8")
    f.write(_U32.pack(len(nb)))
    f.write(nb)
    f.write(_U32.pack(len(shape)))
    for e in shape:
        f.write(_U32.pack(e))
    f.write(payload)


def write_checkpoint(path: str, tensors: dict[str, np.ndarray], config: dict,
                     config_raw: bytes | None = None) -> None:
    """Write tensors (model order) with the config snapshot as the first
    entry. config_raw overrides re-serialization for exact round-trips."""
    raw = _config_bytes(config) if config_raw is None else config_raw
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_U32.pack(VERSION))
        f.write(_U32.pack(len(tensors) + 1))
        _write_entry(f, CONFIG_ENTRY, raw, (len(raw) // 4,))
        for name, arr in tensors.items():
            if name == CONFIG_ENTRY:
                raise ValueError(f"tensor name {CONFIG_ENTRY!r} is reserved")
            a = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
            _write_entry(f, name, a.tobytes(), a.shape)


def _read(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise TruncatedError(f"file ends inside {what}: wanted {n} bytes, got {len(b)}")
    return b


def _read_u32(f, what: str) -> int:
    return _U32.unpack(_read(f, 4, what))[0]


def read_checkpoint(path: str) -> Checkpoint:
    """Parse a checkpoint file. Corrupt headers, truncation, and a missing
    or malformed config entry are reported as distinct error classes."""
    with open(path, "rb") as f:
        magic = _read(f, 4, "magic")
        if magic != MAGIC:
            raise CorruptHeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version = _read_u32(f, "version")
        if version != VERSION:
            raise CorruptHeaderError(f"unsupported version {version}")
        count = _read_u32(f, "tensor count")
        tensors: dict[str, np.ndarray] = {}
        config: dict | None = None
        config_raw = b""
        for i in range(count):
            name_len = _read_u32(f, f"entry {i} name length")
            if name_len == 0 or name_len > _NAME_LIMIT:
                raise CorruptHeaderError(f"entry {i}: implausible name length {name_len}")
            name = _read(f, name_len, f"entry {i} name").decode("utf-8", errors="strict")
            ndim = _read_u32(f, f"{name}: ndim")
            if ndim > _NDIM_LIMIT:
                raise CorruptHeaderError(f"{name}: implausible ndim {ndim}")
            shape = tuple(_read_u32(f, f"{name}: extent {k}") for k in range(ndim))
            n_scalars = 1
            for e in shape:
                n_scalars *= e
            payload = _read(f, 4 * n_scalars, f"{name}: data")
            if name == CONFIG_ENTRY:
                config_raw = payload
                try:
                    config = json.loads(payload.rstrip(b" ").decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise CorruptHeaderError(f"config entry is not valid JSON: {exc}") from exc
            else:
                if name in tensors:
                    raise CorruptHeaderError(f"duplicate tensor name {name!r}")
                tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape)
        if f.read(1) != b"":
            raise CorruptHeaderError("trailing bytes after declared contents")
    if config is None:
        raise CorruptHeaderError(f"missing {CONFIG_ENTRY!r} entry")
    return Checkpoint(version, config, config_raw, tensors)


def rewrite_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Write a parsed checkpoint back out, preserving bytes exactly."""
    write_checkpoint(path, ckpt.tensors, ckpt.config, config_raw=ckpt.config_raw)


def save_checkpoint(model, path: str) -> None:
    """Serialize any model exposing named_tensors() and config_dict()."""
    tensors = {name: t.data for name, t in model.named_tensors().items()}
    write_checkpoint(path, tensors, model.config_dict())


def load_checkpoint(path: str):
    """Rebuild the saved model and load its tensors. The stored kind
    picks the constructor; unknown kinds are a format error."""
    ckpt = read_checkpoint(path)
    kind = ckpt.config.get("kind")
    if kind == "toy":
        from .training import ToyModel

        model = ToyModel.from_config_dict(ckpt.config)
    elif kind == "encoder":
        from .config import EncoderConfig
        from .encoder import build_encoder

        model = build_encoder(EncoderConfig.from_dict(ckpt.config["encoder"]))
    else:
        raise ConfigMismatchError(f"unknown model kind {kind!r}")
    state = {n: np.asarray(a, dtype=np.float64) for n, a in ckpt.tensors.items()}
    model.load_state(state)
    return model
