"""Little-endian binary checkpoints.

Layout::

    b"EXCK"  u32 version  u32 block_count
    block*:  u8 kind  u32 name_len  name(utf-8)  payload
             kind 0 (float64 array): u32 ndim, u64 dims[ndim], f64 data
             kind 1 (text):          u64 byte_len, utf-8 bytes
    u32 crc32 of everything above

Batch order is a pure function of (seed, stage, epoch), so the step counter
and seed are the whole sampler state.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..formats import FormatError

MAGIC = b"EXCK"
VERSION = 1
_ARRAY, _TEXT = 0, 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)
    model_config: dict[str, str] = field(default_factory=dict)
    loss_log: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def stage(self) -> str:
        return self.meta.get("stage", "")

    @property
    def step(self) -> int:
        return int(self.meta.get("step", "0"))

    @property
    def complete(self) -> bool:
        return self.meta.get("complete", "0") == "1"


def _kv_text(d: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in sorted(d.items()))


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


def to_bytes(ck: Checkpoint) -> bytes:
    blocks: list[tuple[int, str, object]] = [
        (_TEXT, "meta", _kv_text(ck.meta)),
        (_TEXT, "config", _kv_text(ck.model_config)),
        (_ARRAY, "loss_log", ck.loss_log),
    ]
    blocks += [(_ARRAY, f"param/{k}", v) for k, v in sorted(ck.params.items())]
    blocks += [(_ARRAY, k, v) for k, v in sorted(ck.moments.items())]
    out = [MAGIC, struct.pack("<II", VERSION, len(blocks))]
    for kind, name, payload in blocks:
        nb = name.encode()
        out.append(struct.pack("<BI", kind, len(nb)) + nb)
        if kind == _TEXT:
            tb = payload.encode()
            out.append(struct.pack("<Q", len(tb)) + tb)
        else:
            a = np.ascontiguousarray(payload, dtype="<f8")
            out.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
            out.append(a.tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint is truncated")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(4)
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint is truncated or corrupt (checksum mismatch)")
    texts: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        kind, nlen = r.unpack("<BI")
        name = r.take(nlen).decode()
        if kind == _TEXT:
            (n,) = r.unpack("<Q")
            texts[name] = r.take(n).decode()
        elif kind == _ARRAY:
            (ndim,) = r.unpack("<I")
            shape = r.unpack(f"<{ndim}Q")
            size = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        else:
            raise FormatError(f"unknown block kind {kind}")
    if r.pos != len(body):
        raise FormatError("trailing bytes after last block")
    if "meta" not in texts or "loss_log" not in arrays:
        raise FormatError("checkpoint lacks meta or loss log block")
    return Checkpoint(
        params={k[6:]: v for k, v in arrays.items() if k.startswith("param/")},
        moments={k: v for k, v in arrays.items() if k.startswith(("m/", "v/"))},
        meta=_parse_kv(texts["meta"]),
        model_config=_parse_kv(texts.get("config", "")),
        loss_log=arrays["loss_log"],
    )


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Write atomically (temp file, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
