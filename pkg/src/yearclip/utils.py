from __future__ import annotations

import os
import tempfile
import zlib
from contextlib import contextmanager
from pathlib import Path

import numpy as np


def derive_seed(seed: int, namespace: str) -> int:
    """Independent sub-seed for one pipeline stage (split, init, shuffle, ...)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(namespace.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed: int, namespace: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, namespace))


@contextmanager
def atomic_open(path: str | Path, mode: str = "w", **kwargs):
    """Write to a temp file in the target directory, rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        with open(tmp, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str | Path, text: str) -> None:
    with atomic_open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_bytes_atomic(path: str | Path, data: bytes) -> None:
    with atomic_open(path, "wb") as fh:
        fh.write(data)
