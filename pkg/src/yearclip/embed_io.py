"""Binary storage for precomputed encoder outputs and parameter checkpoints.

Embedding file ("YGEM", little-endian)::

    magic  b"YGEM"
    u32    version (1)
    u32    dim
    u64    count
    count x (u16 id length, UTF-8 id bytes)
    count*dim float32, row-major

Checkpoint file ("YGCK", little-endian)::

    magic  b"YGCK"
    u32    version (1)
    u32    metadata length, UTF-8 JSON metadata
    u32    tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
                prod(dims) float32 row-major
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    BadMagic,
    NonFiniteValue,
    ShapeMismatch,
    TruncatedFile,
    UnknownId,
    ValidationError,
    VersionMismatch,
    ZeroVector,
)
from .utils import write_bytes_atomic

EMBED_MAGIC = b"YGEM"
CKPT_MAGIC = b"YGCK"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EmbeddingMatrix:
    ids: tuple[str, ...]
    rows: np.ndarray  # (count, dim) float32
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ShapeMismatch(f"rows must be 2-D, got shape {rows.shape}")
        if rows.shape[1] < 1:
            raise ShapeMismatch("embedding dim must be positive")
        ids = tuple(self.ids)
        if rows.shape[0] != len(ids):
            raise ShapeMismatch(f"{len(ids)} ids but {rows.shape[0]} rows")
        if not np.isfinite(rows).all():
            raise NonFiniteValue("embedding rows contain NaN or Inf")
        index = {}
        for i, rid in enumerate(ids):
            if not rid:
                raise ValidationError("empty embedding id")
            if rid in index:
                raise ValidationError(f"duplicate embedding id {rid!r}")
            index[rid] = i
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, rid: str) -> bool:
        return rid in self._index

    def row(self, rid: str) -> np.ndarray:
        """Stored row for ``rid`` promoted to float64."""
        try:
            return self.rows[self._index[rid]].astype(np.float64)
        except KeyError:
            raise UnknownId(rid) from None

    def take(self, ids: Sequence[str]) -> np.ndarray:
        try:
            idx = [self._index[r] for r in ids]
        except KeyError as exc:
            raise UnknownId(exc.args[0]) from None
        return self.rows[idx].astype(np.float64)

    def bit_equal(self, other: "EmbeddingMatrix") -> bool:
        return (
            self.ids == other.ids
            and self.rows.shape == other.rows.shape
            and self.rows.tobytes() == other.rows.tobytes()
        )


def encode_embeddings(m: EmbeddingMatrix) -> bytes:
    parts = [EMBED_MAGIC, struct.pack("<IIQ", FORMAT_VERSION, m.dim, len(m))]
    for rid in m.ids:
        raw = rid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError(f"id too long: {rid[:32]!r}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(m.rows.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise ValidationError(f"{len(self.data) - self.pos} trailing bytes after payload")


def _check_header(r: _Reader, magic: bytes) -> None:
    got = r.take(4)
    if got != magic:
        raise BadMagic(f"expected magic {magic!r}, got {got!r}")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported format version {version}")


def decode_embeddings(data: bytes) -> EmbeddingMatrix:
    r = _Reader(data)
    _check_header(r, EMBED_MAGIC)
    dim, count = r.unpack("<IQ")
    ids = []
    for _ in range(count):
        (n,) = r.unpack("<H")
        ids.append(r.take(n).decode("utf-8"))
    body = r.take(4 * dim * count)
    r.finish()
    rows = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(count, dim)
    if not np.isfinite(rows).all():
        raise NonFiniteValue("embedding file contains NaN or Inf")
    return EmbeddingMatrix(tuple(ids), rows)


def write_embeddings(m: EmbeddingMatrix, path: str | Path) -> None:
    write_bytes_atomic(path, encode_embeddings(m))


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    return decode_embeddings(Path(path).read_bytes())


def ingest_csv(path: str | Path) -> EmbeddingMatrix:
    """Parse ``id,f1,...,fD`` rows; a non-numeric first row is taken as a header."""
    ids, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                if lineno == 1:
                    continue
                raise ValidationError(f"{path}:{lineno}: non-numeric embedding value") from None
            if rows and len(vals) != len(rows[0]):
                raise ShapeMismatch(f"{path}:{lineno}: expected {len(rows[0])} values, got {len(vals)}")
            ids.append(row[0])
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no embedding rows")
    arr = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"{path}: NaN or Inf in input")
    return EmbeddingMatrix(tuple(ids), arr.astype(np.float32))


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise ZeroVector("cannot normalize a zero vector")
    return v / norm


def encode_checkpoint(tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_raw)), meta_raw]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"tensor {name!r} contains NaN or Inf")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(data)
    _check_header(r, CKPT_MAGIC)
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"tensor {name!r} contains NaN or Inf")
        tensors[name] = arr
    r.finish()
    return tensors, meta


def write_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    write_bytes_atomic(path, encode_checkpoint(tensors, meta))


def read_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())
