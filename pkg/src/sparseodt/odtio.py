"""Binary file formats.

``.odtr`` raw B-scan
    ``b"ODTR"``, u32 version (1), u32 S, u32 W, then ``S*W`` little-endian
    float32 ``(re, im)`` pairs, column-major (one A-scan after another).
``.pgm``
    Binary ``P5`` greymap with maxval 65535 (big-endian samples);
    values are ``round(clip(v, 0, 1) * 65535)``.
``.ckpt``
    ``b"ODTW"``, u32 version (1), u32 tensor count, then per tensor: u16 name
    length, UTF-8 name, u8 ndim, u32 dims, little-endian float32 values
    (C order).
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from .signal import RawBScan

ODTR_MAGIC = b"ODTR"
CKPT_MAGIC = b"ODTW"
FORMAT_VERSION = 1
PGM_MAXVAL = 65535


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


def write_odtr(path: str | os.PathLike, raw: RawBScan | np.ndarray) -> None:
    data = raw.data if isinstance(raw, RawBScan) else np.asarray(raw)
    s, w = data.shape
    pairs = np.empty((w, s, 2), dtype="<f4")
    pairs[..., 0] = data.real.T
    pairs[..., 1] = data.imag.T
    with open(path, "wb") as fh:
        fh.write(ODTR_MAGIC + struct.pack("<III", FORMAT_VERSION, s, w))
        fh.write(pairs.tobytes())


def read_odtr(path: str | os.PathLike) -> RawBScan:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != ODTR_MAGIC:
        raise FormatError(f"{path}: not an ODTR file (bad magic)")
    version, s, w = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported ODTR version {version}")
    expected = 16 + s * w * 8
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} != expected {expected}")
    pairs = np.frombuffer(blob, dtype="<f4", offset=16).reshape(w, s, 2)
    data = (pairs[..., 0].astype(np.float64) + 1j * pairs[..., 1].astype(np.float64)).T
    return RawBScan(np.ascontiguousarray(data))


def to_uint16(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * PGM_MAXVAL).astype(np.uint16)


def write_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-d")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(to_uint16(img).astype(">u2").tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PGM and return values normalised to ``[0, 1]``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(blob) - pos < n:
        raise FormatError(f"{path}: truncated PGM pixel data")
    pix = np.frombuffer(blob, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return pix.astype(np.float64) / maxval


def write_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [CKPT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims).copy()
            pos += 4 * n
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if pos != len(blob):
        raise FormatError(f"{path}: trailing bytes after {count} tensors")
    return out
