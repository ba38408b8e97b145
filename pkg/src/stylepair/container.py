"""Low-level readers/writers for the IEMB binary container.

All integers and floats are little-endian. A container starts with the
4-byte magic "IEMB" and a u32 format version. What follows is either the
embedding payload (count/dim/flags/ids/data) or a tagged sub-chunk
("STYL", "ADPT") for model parameters.
"""

import struct
from typing import BinaryIO

import numpy as np

from .errors import MagicMismatch, TruncatedFile, VersionUnsupported

MAGIC = b"IEMB"
VERSION = 1
STYLE_CHUNK = b"STYL"
ADAPTER_CHUNK = b"ADPT"


def read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_u32(f: BinaryIO, what: str) -> int:
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def read_u64(f: BinaryIO, what: str) -> int:
    return struct.unpack("<Q", read_exact(f, 8, what))[0]


def read_f64(f: BinaryIO, what: str) -> float:
    return struct.unpack("<d", read_exact(f, 8, what))[0]


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def write_u64(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<Q", value))


def write_f64(f: BinaryIO, value: float) -> None:
    f.write(struct.pack("<d", value))


def write_header(f: BinaryIO) -> None:
    f.write(MAGIC)
    write_u32(f, VERSION)


def read_header(f: BinaryIO) -> None:
    magic = read_exact(f, 4, "magic")
    if magic != MAGIC:
        raise MagicMismatch(f"expected {MAGIC!r}, found {magic!r}")
    version = read_u32(f, "version")
    if version != VERSION:
        raise VersionUnsupported(f"format version {version} not supported")


def read_chunk_tag(f: BinaryIO, expected: bytes) -> None:
    tag = read_exact(f, 4, "chunk tag")
    if tag != expected:
        raise MagicMismatch(f"expected {expected!r} sub-chunk, found {tag!r}")


def read_array(f: BinaryIO, dtype: str, count: int, what: str) -> np.ndarray:
    dt = np.dtype(dtype)
    buf = read_exact(f, dt.itemsize * count, what)
    return np.frombuffer(buf, dtype=dt).copy()


def write_array(f: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    f.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes())


def write_string(f: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    write_u32(f, len(raw))
    f.write(raw)


def read_string(f: BinaryIO, what: str) -> str:
    length = read_u32(f, f"{what} length")
    return read_exact(f, length, what).decode("utf-8")
