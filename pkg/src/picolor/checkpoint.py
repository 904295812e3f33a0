"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PIC1"  u32 version  u32 n_records
    n_records x { u32 name_len, name (utf-8), u8 dtype (0=f32, 1=f64),
                  u32 rank, rank x u64 extent, raw values }
    u32 crc32 of every preceding byte

Each parameter ``p`` produces records ``param/p``, ``adam_m/p``, ``adam_v/p``,
``shadow/p`` and ``step/p``; run metadata lives under ``meta/``.
"""

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .params import ParamEntry, ParameterStore

MAGIC = b"PIC1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_KINDS = ("param", "adam_m", "adam_v", "shadow", "step")


class CheckpointError(Exception):
    code = 20


class BadMagicError(CheckpointError):
    code = 21


class VersionError(CheckpointError):
    code = 22


class TruncatedError(CheckpointError):
    code = 23


class ChecksumError(CheckpointError):
    code = 24


class ConfigMismatchError(CheckpointError):
    code = 25


class ArchitectureMismatchError(CheckpointError):
    code = 26


def _record(name, arr):
    arr = np.asarray(arr)
    tag = _TAGS.get(arr.dtype)
    if tag is None:
        raise TypeError(f"record {name!r}: unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<BI", tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()


@dataclass
class Checkpoint:
    store: ParameterStore
    iteration: int = 0
    config_hash: str = ""
    config_text: str = ""


def _bytes_record(name, raw):
    return _record(name, np.frombuffer(raw, dtype=np.uint8).astype(np.float64))


def _record_bytes(arr):
    return bytes(arr.astype(np.uint8))


def encode(store, iteration=0, config_hash="", config_text=""):
    records = []
    for name, e in store.items():
        records.append(_record(f"param/{name}", e.value))
        records.append(_record(f"adam_m/{name}", e.m))
        records.append(_record(f"adam_v/{name}", e.v))
        records.append(_record(f"shadow/{name}", e.shadow))
        records.append(_record(f"step/{name}", np.array(float(e.step))))
    records.append(_record("meta/iteration", np.array(float(iteration))))
    records.append(_bytes_record("meta/config_hash", bytes.fromhex(config_hash)))
    records.append(_bytes_record("meta/config_text", config_text.encode("utf-8")))
    body = MAGIC + struct.pack("<II", VERSION, len(records)) + b"".join(records)
    return body + struct.pack("<I", zlib.crc32(body))


def _parse_records(blob, count, end):
    pos = 12
    records = {}

    def need(n):
        if pos + n > end:
            raise TruncatedError(f"checkpoint truncated at byte {pos} (needed {n} more)")

    for _ in range(count):
        need(4)
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(name_len + 5)
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        tag, rank = struct.unpack_from("<BI", blob, pos)
        pos += 5
        if tag not in _DTYPES:
            raise CheckpointError(f"record {name!r}: unknown dtype tag {tag}")
        need(8 * rank)
        shape = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        dt = _DTYPES[tag]
        nbytes = math.prod(shape) * dt.itemsize
        need(nbytes)
        records[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != end:
        raise TruncatedError(f"checkpoint length mismatch: records end at {pos}, file body ends at {end}")
    return records


def decode(blob):
    """Parse checkpoint bytes into a :class:`Checkpoint`."""
    if len(blob) < 12:
        raise TruncatedError(f"checkpoint is {len(blob)} bytes, shorter than the header")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    end = len(blob) - 4
    crc_ok = struct.unpack_from("<I", blob, end)[0] == zlib.crc32(blob[:end])
    try:
        records = _parse_records(blob, count, end)
    except TruncatedError:
        raise
    except (CheckpointError, UnicodeDecodeError, ValueError) as exc:
        if not crc_ok:
            raise ChecksumError(f"checkpoint checksum mismatch (file corrupted): {exc}") from None
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if not crc_ok:
        raise ChecksumError("checkpoint checksum mismatch (file corrupted)")

    names = sorted(n[len("param/"):] for n in records if n.startswith("param/"))
    dtype = records[f"param/{names[0]}"].dtype if names else np.dtype(np.float64)
    store = ParameterStore(dtype.newbyteorder("="))
    for name in names:
        try:
            parts = [records[f"{kind}/{name}"] for kind in _KINDS]
        except KeyError as exc:
            raise CheckpointError(f"parameter {name!r} is missing record {exc.args[0]!r}") from None
        value, m, v, shadow, step = parts
        store._entries[name] = ParamEntry(value, m, v, shadow, int(step))
    iteration = int(records["meta/iteration"]) if "meta/iteration" in records else 0
    config_hash = _record_bytes(records.get("meta/config_hash", np.zeros(0))).hex()
    config_text = _record_bytes(records.get("meta/config_text", np.zeros(0))).decode("utf-8")
    return Checkpoint(store, iteration, config_hash, config_text)


def save(path, store, iteration=0, config_hash="", config_text=""):
    blob = encode(store, iteration, config_hash, config_text)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


def load(path, expected_hash=None, expected_shapes=None):
    """Read a checkpoint, optionally checking config hash and parameter shapes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    ckpt = decode(blob)
    if expected_shapes is not None:
        check_architecture(ckpt.store, expected_shapes)
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise ConfigMismatchError(
            f"checkpoint config hash {ckpt.config_hash[:12]} does not match run config {expected_hash[:12]}"
        )
    return ckpt


def check_architecture(store, expected_shapes):
    have = store.shapes()
    for name in sorted(set(have) | set(expected_shapes)):
        if have.get(name) != tuple(expected_shapes.get(name, ())) or name not in expected_shapes:
            raise ArchitectureMismatchError(
                f"parameter {name!r} mismatch: checkpoint has {have.get(name)}, model expects {expected_shapes.get(name)}"
            )
