"""Binary grid, G2 and frame-stack files, plus small CSV helpers.

All integers and floats are little-endian.

BPG1  magic, u32 n, f64 pitch, f64 wavelength, f64 focal_eff, then ``n^2``
      (re, im) f64 pairs for a complex grid or ``n^2`` f64 phases for a mask;
      the kind follows from the payload length.
BPG2  magic, u32 n, then the ``n^2 x n^2`` G2 matrix as f64, row-major.
BPF1  magic, u32 n, u32 m, u16 dtype (0 = u16), then ``m`` frames row-major.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Iterable, Iterator, Union

import numpy as np

from .detector import FrameBlock
from .fields import ComplexGrid, GridSpec, PhaseMask
from .propagation import G2Tensor

PathLike = Union[str, Path]

GRID_MAGIC = b"BPG1"
G2_MAGIC = b"BPG2"
FRAMES_MAGIC = b"BPF1"
DTYPE_U16 = 0


class FormatError(ValueError):
    pass


def _check_magic(f, magic: bytes) -> None:
    got = f.read(4)
    if got != magic:
        raise FormatError(f"expected magic {magic!r}, found {got!r}")


def _read_exact(f, size: int) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise FormatError("file is truncated")
    return data


def write_grid(path: PathLike, obj: Union[ComplexGrid, PhaseMask]) -> None:
    if isinstance(obj, ComplexGrid):
        payload = np.ascontiguousarray(obj.data, dtype="<c16").view("<f8")
    elif isinstance(obj, PhaseMask):
        payload = np.ascontiguousarray(obj.theta, dtype="<f8")
    else:
        raise TypeError("expected a ComplexGrid or PhaseMask")
    s = obj.spec
    with open(path, "wb") as f:
        f.write(GRID_MAGIC + struct.pack("<Iddd", s.n, s.pitch, s.wavelength, s.focal_eff))
        f.write(payload.tobytes())


def read_grid(path: PathLike) -> Union[ComplexGrid, PhaseMask]:
    with open(path, "rb") as f:
        _check_magic(f, GRID_MAGIC)
        n, pitch, wl, fe = struct.unpack("<Iddd", _read_exact(f, 28))
        body = f.read()
    spec = GridSpec(n, pitch, wl, fe)
    count = len(body) // 8
    if len(body) % 8:
        raise FormatError("payload is not a whole number of f64 values")
    values = np.frombuffer(body, dtype="<f8")
    if count == 2 * n * n:
        return ComplexGrid(spec, values.view("<c16").reshape(n, n).astype(complex))
    if count == n * n:
        return PhaseMask(spec, values.reshape(n, n).astype(float))
    raise FormatError(f"payload of {count} values fits neither a complex grid nor a mask of n={n}")


def write_g2(path: PathLike, g2: G2Tensor) -> None:
    with open(path, "wb") as f:
        f.write(G2_MAGIC + struct.pack("<I", g2.n))
        f.write(np.ascontiguousarray(g2.data, dtype="<f8").tobytes())


def read_g2(path: PathLike) -> G2Tensor:
    with open(path, "rb") as f:
        _check_magic(f, G2_MAGIC)
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        size = n ** 4
        data = np.frombuffer(_read_exact(f, 8 * size), dtype="<f8")
    return G2Tensor(GridSpec(n), data.reshape(n * n, n * n).astype(float))


class FrameWriter:
    """Streams frame blocks into one BPF1 file; the header is fixed on close."""

    def __init__(self, path: PathLike, n: int):
        self.n = n
        self.m = 0
        self._f = open(path, "wb")
        self._f.write(FRAMES_MAGIC + struct.pack("<IIH", n, 0, DTYPE_U16))

    def write(self, frames: np.ndarray) -> None:
        frames = np.asarray(frames)
        if frames.shape[1:] != (self.n, self.n):
            raise ValueError(f"frames must be shaped (m, {self.n}, {self.n})")
        self._f.write(np.ascontiguousarray(frames, dtype="<u2").tobytes())
        self.m += frames.shape[0]

    def close(self) -> None:
        self._f.seek(8)
        self._f.write(struct.pack("<I", self.m))
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_frames(path: PathLike, block: FrameBlock) -> None:
    with FrameWriter(path, block.n) as w:
        w.write(block.data)


def frames_header(path: PathLike) -> tuple[int, int]:
    with open(path, "rb") as f:
        _check_magic(f, FRAMES_MAGIC)
        n, m, dtype = struct.unpack("<IIH", _read_exact(f, 10))
    if dtype != DTYPE_U16:
        raise FormatError(f"unsupported frame dtype code {dtype}")
    return n, m


def iter_frames(path: PathLike, block_size: int) -> Iterator[np.ndarray]:
    """Yield ``(k, n, n)`` uint16 arrays of at most ``block_size`` frames.

    A trailing single frame cannot form a block and is merged into the
    previous one.
    """
    if block_size < 2:
        raise ValueError("block size must be at least 2")
    n, m = frames_header(path)
    frame_bytes = 2 * n * n
    with open(path, "rb") as f:
        f.seek(14)
        done = 0
        while done < m:
            k = min(block_size, m - done)
            if m - done - k == 1:
                k += 1
            raw = _read_exact(f, k * frame_bytes)
            yield np.frombuffer(raw, dtype="<u2").reshape(k, n, n).astype(np.uint16)
            done += k


def read_frames(path: PathLike) -> FrameBlock:
    n, m = frames_header(path)
    return FrameBlock(n, next(iter_frames(path, max(m, 2))))


def write_csv(path: PathLike, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(header))
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path: PathLike) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
