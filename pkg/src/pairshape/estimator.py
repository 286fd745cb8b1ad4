"""Streaming G2 reconstruction from camera frames, and coordinate projections.

Each block of ``M`` frames (flattened to an ``M x n^2`` array ``I``)
contributes

    R_m = I^T I / M
    A_m = (I1^T I2 + I2^T I1) / (2 (M - 1))

where ``I1``/``I2`` drop the last/first frame.  Blocks are weighted by their
frame count, so ``finalize`` returns ``sum_m M_m (R_m - A_m) / sum_m M_m``;
for equal block sizes this is the plain block average.  Frames are never
stored beyond the block being processed.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fields import GridSpec
from .propagation import G2Tensor, PairProfile

PLUS = "plus"
MINUS = "minus"


class EmptyAccumulatorError(RuntimeError):
    pass


@dataclass
class G2Accumulator:
    """Running real (R) and accidental (A) coincidence sums.

    ``R`` and ``A`` hold frame-weighted sums; divide by ``frames_processed``
    to get averages.  With ``span_blocks`` the accidental term also pairs the
    last frame of one block with the first of the next, which makes the
    result independent of how the stream is cut into blocks.
    """

    n: int
    span_blocks: bool = False
    R: np.ndarray = field(default=None, repr=False)
    A: np.ndarray = field(default=None, repr=False)
    frames_processed: int = 0
    blocks_processed: int = 0
    pairs_processed: int = 0
    frame_sum: np.ndarray = field(default=None, repr=False)
    _last: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n2 = self.n * self.n
        if self.R is None:
            self.R = np.zeros((n2, n2))
        if self.A is None:
            self.A = np.zeros((n2, n2))
        if self.frame_sum is None:
            self.frame_sum = np.zeros(n2)

    def update(self, frames: np.ndarray, workers: int = 1) -> "G2Accumulator":
        """Add one block of frames shaped ``(m, n, n)`` (or ``(m, n^2)``)."""
        frames = np.asarray(frames)
        m = frames.shape[0]
        if frames.reshape(m, -1).shape[1] != self.n * self.n:
            raise ValueError(f"block frames do not match n={self.n}")
        if m < 2:
            raise ValueError("a block needs at least 2 frames")
        x = frames.reshape(m, -1).astype(float)
        r_raw, a_raw = _block_products(x, workers)
        self.R += r_raw
        self.frame_sum += x.sum(axis=0)
        if self.span_blocks:
            if self._last is not None:
                cross = np.outer(self._last, x[0])
                a_raw = a_raw + cross + cross.T
                self.pairs_processed += 1
            self.A += a_raw / 2.0
            self.pairs_processed += m - 1
            self._last = x[-1].copy()
        else:
            self.A += a_raw * (m / (2.0 * (m - 1)))
        self.frames_processed += m
        self.blocks_processed += 1
        return self

    def merge(self, other: "G2Accumulator") -> "G2Accumulator":
        """Sum two accumulators that saw disjoint streams (no spanning pairs)."""
        if other.n != self.n or other.span_blocks != self.span_blocks:
            raise ValueError("cannot merge accumulators with different settings")
        out = G2Accumulator(self.n, self.span_blocks, self.R + other.R, self.A + other.A,
                            self.frames_processed + other.frames_processed,
                            self.blocks_processed + other.blocks_processed,
                            self.pairs_processed + other.pairs_processed,
                            self.frame_sum + other.frame_sum)
        return out

    def real(self) -> np.ndarray:
        return self.R / self.frames_processed

    def accidental(self) -> np.ndarray:
        if self.span_blocks:
            return self.A / self.pairs_processed
        return self.A / self.frames_processed


def _block_products(x: np.ndarray, workers: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``sum I I^T`` and symmetrised ``sum (I_l I_{l+1}^T + transpose)``.

    With several workers the frames are split into contiguous chunks (the
    accidental part overlaps by one frame) and partials are summed in
    worker order.
    """
    m = x.shape[0]
    workers = max(1, min(int(workers), m - 1))
    if workers == 1:
        r = x.T @ x
        c = x[:-1].T @ x[1:]
        return r, c + c.T
    edges = np.linspace(0, m, workers + 1).astype(int)

    def part(w):
        lo, hi = edges[w], edges[w + 1]
        r = x[lo:hi].T @ x[lo:hi]
        top = min(hi + 1, m)
        c = x[lo:top - 1].T @ x[lo + 1:top]
        return r, c

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(part, range(workers)))
    r = _tree_sum([p[0] for p in parts])
    c = _tree_sum([p[1] for p in parts])
    return r, c + c.T


def _tree_sum(items: list) -> np.ndarray:
    while len(items) > 1:
        items = [items[i] + items[i + 1] if i + 1 < len(items) else items[i]
                 for i in range(0, len(items), 2)]
    return items[0]


def accumulate_block(acc: G2Accumulator, block, workers: int = 1) -> G2Accumulator:
    """Fold a :class:`~pairshape.detector.FrameBlock` (or raw frame array) into ``acc``."""
    frames = getattr(block, "data", block)
    n = getattr(block, "n", acc.n)
    if n != acc.n:
        raise ValueError(f"block n={n} does not match accumulator n={acc.n}")
    return acc.update(frames, workers=workers)


def finalize(acc: G2Accumulator, spec: Optional[GridSpec] = None) -> G2Tensor:
    """``G2 = R - A``.  Negative entries from shot noise are kept."""
    if acc.blocks_processed == 0 or acc.frames_processed < 2:
        raise EmptyAccumulatorError("no frames have been accumulated")
    g2 = acc.real() - acc.accidental()
    g2 = 0.5 * (g2 + g2.T)
    return G2Tensor(spec or GridSpec(acc.n), g2)


# ------------------------------------------------------------- artifacts

NEIGHBOR_MEAN = "neighbor-mean"
ZERO = "zero"


def fix_artifacts(g2: G2Tensor, policy: str = NEIGHBOR_MEAN, same_row: bool = False,
                  diagonal: bool = True) -> G2Tensor:
    """Replace unmeasurable same-pixel entries and, optionally, same-row entries.

    ``NEIGHBOR_MEAN`` uses, for target ``(r1, r2)``, the mean of the up to 8
    entries ``(r1, r2 + d)`` with ``d`` a unit step that are in range and not
    targeted themselves; the result is re-symmetrised.
    """
    if policy not in (NEIGHBOR_MEAN, ZERO):
        raise ValueError(f"unknown policy {policy!r}")
    n = g2.n
    g = g2.as_4d().copy()
    i1, j1, i2, j2 = np.indices((n, n, n, n), sparse=True)
    target = np.zeros((n, n, n, n), dtype=bool)
    if diagonal:
        target |= (i1 == i2) & (j1 == j2)
    if same_row:
        target |= np.broadcast_to(i1 == i2, target.shape)
    if policy == ZERO:
        g[target] = 0.0
        return G2Tensor(g2.spec, g.reshape(n * n, n * n))

    valid = ~target
    total = np.zeros_like(g)
    count = np.zeros(g.shape)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            src = _shift(np.where(valid, g, 0.0), di, dj)
            ok = _shift(valid.astype(float), di, dj)
            total += src
            count += ok
    mean = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    g[target] = mean[target]
    out = g.reshape(n * n, n * n)
    return G2Tensor(g2.spec, 0.5 * (out + out.T))


def _shift(a: np.ndarray, di: int, dj: int) -> np.ndarray:
    # out[..., i2, j2] = a[..., i2 + di, j2 + dj], zero outside
    n = a.shape[-1]
    out = np.zeros_like(a)
    src_i = slice(max(di, 0), n + min(di, 0))
    dst_i = slice(max(-di, 0), n + min(-di, 0))
    src_j = slice(max(dj, 0), n + min(dj, 0))
    dst_j = slice(max(-dj, 0), n + min(-dj, 0))
    out[..., dst_i, dst_j] = a[..., src_i, src_j]
    return out


# ------------------------------------------------------------ projections

@dataclass(frozen=True, eq=False)
class Projection:
    """Coordinate projection of G2 on a ``(2n - 1) x (2n - 1)`` grid.

    ``data[a, b]`` is the bin with coordinate ``(a - origin, b - origin)``.
    Minus: coordinate ``r2 - r1`` in pixels, ``origin = n - 1``.
    Plus: coordinate ``(i1 + i2) - n`` so that 0 collects the pixel pairs
    that are anti-symmetric about the DC pixel, ``origin = n``.
    """

    kind: str
    data: np.ndarray
    origin: int

    @property
    def n(self) -> int:
        return (self.data.shape[0] + 1) // 2

    def coords(self) -> np.ndarray:
        return np.arange(self.data.shape[0]) - self.origin

    def value_at(self, di: int, dj: int) -> float:
        return float(self.data[self.origin + di, self.origin + dj])

    def normalized(self) -> "Projection":
        return Projection(self.kind, self.data / self.data.sum(), self.origin)


def project_minus(g2: G2Tensor) -> Projection:
    """``C-[d] = sum_{r2} G2[r2 - d, r2]`` over in-range pixels."""
    n = g2.n
    g = g2.as_4d()
    out = np.zeros((2 * n - 1, 2 * n - 1))
    for i in range(n):
        for j in range(n):
            # d = (i, j) - r1, so r1 = 0..n-1 lands at d index (i - r1) + n - 1
            out[i:i + n, j:j + n] += g[::-1, ::-1, i, j]
    return Projection(MINUS, out, n - 1)


def project_plus(g2: G2Tensor) -> Projection:
    """``C+[s] = sum_{r2} G2[s - r2, r2]`` over in-range pixels."""
    n = g2.n
    g = g2.as_4d()
    out = np.zeros((2 * n - 1, 2 * n - 1))
    for i in range(n):
        for j in range(n):
            out[i:i + n, j:j + n] += g[:, :, i, j]
    return Projection(PLUS, out, n)


def project(g2: G2Tensor, kind: str) -> Projection:
    if kind == PLUS:
        return project_plus(g2)
    if kind == MINUS:
        return project_minus(g2)
    raise ValueError(f"unknown projection kind {kind!r}")


def project_profile(profile: PairProfile) -> Projection:
    """Closed-form projection of an analytic pair profile.

    Sum profiles give C+, difference profiles give C-.  Equal to projecting
    ``profile.to_g2()`` without building the ``n^4`` tensor.
    """
    n = profile.spec.n
    idx = np.arange(2 * n - 1)
    count = n - np.abs(idx - (n - 1))
    if profile.kind == "sum":
        # bin index s = i1 + i2 holds frequency s - n
        src = (idx - n + n // 2) % n
        kind, origin = PLUS, n
    else:
        # bin index a holds r2 - r1 = a - (n - 1); profile is a function of r1 - r2
        src = (-(idx - (n - 1)) + n // 2) % n
        kind, origin = MINUS, n - 1
    data = profile.data[src[:, None], src[None, :]] * np.outer(count, count) / (n * n)
    return Projection(kind, data / profile.data.sum(), origin)


def peak_snr(proj: Projection, exclude: int = 3) -> tuple[tuple[int, int], float, float]:
    """Strongest bin, its value and its SNR against the surrounding bins.

    The background is every bin farther than ``exclude`` bins (Chebyshev
    distance) from the peak and inside the central half of the projection,
    where enough pixel pairs contribute; SNR is
    ``(peak - mean(bg)) / std(bg)``.
    """
    d = proj.data
    size = d.shape[0]
    a, b = np.unravel_index(np.argmax(d), d.shape)
    ii, jj = np.indices(d.shape)
    lo, hi = size // 4, size - size // 4
    inner = (ii >= lo) & (ii < hi) & (jj >= lo) & (jj < hi)
    far = np.maximum(np.abs(ii - a), np.abs(jj - b)) > exclude
    bg = d[inner & far]
    std = float(bg.std())
    snr = float((d[a, b] - bg.mean()) / std) if std > 0 else float("inf")
    return (int(a - proj.origin), int(b - proj.origin)), float(d[a, b]), snr
