"""Low-level helpers shared by the binary file formats and the CLI."""

from __future__ import annotations

import os
import struct
import tempfile

from .errors import FormatError


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write a file via temp-file + rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_exact(f, n: int, what: str) -> bytes:
    """Read exactly n bytes or raise a FormatError naming the shortfall."""
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, got {len(data)}")
    return data


def expect_magic(f, magic: bytes) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")


def read_u32s(f, count: int, what: str) -> tuple[int, ...]:
    return struct.unpack("<" + "I" * count, read_exact(f, 4 * count, what))


def pack_u32s(*values: int) -> bytes:
    return struct.pack("<" + "I" * len(values), *values)


def thread_count() -> int:
    """Parallelism cap from HYPERADAPT_THREADS; defaults to serial."""
    raw = os.environ.get("HYPERADAPT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
