"""EMCCD frame synthesis from a ground-truth G2.

Each frame is built independently from its own counter-based random stream
(Philox keyed by the seed, counter set by the absolute frame index), so any
slice of a long acquisition can be regenerated bit for bit, in any order.

Electron multiplication is not simulated as a cascade: counts are photon
numbers plus Gaussian readout noise.  The covariance estimator is linear in
the intensities, so the gain would only rescale the result.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .propagation import G2Tensor

U16_MAX = np.iinfo(np.uint16).max


@dataclass(frozen=True)
class DetectorModel:
    pairs_per_frame: float = 5.0
    stray_rate: float = 0.0
    readout_noise: float = 0.0
    smear_fraction: float = 0.0
    quantum_efficiency: float = 1.0
    seed: int = 1

    def __post_init__(self):
        if self.pairs_per_frame < 0 or self.stray_rate < 0 or self.readout_noise < 0:
            raise ValueError("rates and noise must be non-negative")
        if not 0 < self.quantum_efficiency <= 1:
            raise ValueError("quantum efficiency must lie in (0, 1]")
        if not 0 <= self.smear_fraction < 1:
            raise ValueError("smear fraction must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class FrameBlock:
    """``m`` frames of ``n x n`` non-negative integer counts."""

    n: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[1:] != (self.n, self.n):
            raise ValueError(f"frames must be shaped (m, {self.n}, {self.n})")
        if self.data.shape[0] < 2:
            raise ValueError("a frame block needs at least 2 frames")
        if np.min(self.data) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def m(self) -> int:
        return self.data.shape[0]


def frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(index)]))


def apply_smear(frames: np.ndarray, fraction: float) -> np.ndarray:
    """Row readout smear along increasing column index.

    Each pixel keeps ``1 - fraction`` of its charge and sends
    ``(1 - fraction) * fraction**t`` to the pixel ``t`` columns further along
    the same row; charge pushed past the row end is lost.
    """
    frames = np.asarray(frames, dtype=float)
    if fraction == 0:
        return frames.copy()
    n = frames.shape[-1]
    t = np.arange(n)
    # kernel[src, dst] for dst >= src
    lag = t[None, :] - t[:, None]
    kernel = np.where(lag >= 0, (1 - fraction) * fraction ** np.maximum(lag, 0), 0.0)
    return frames @ kernel


class _Sampler:
    def __init__(self, truth: G2Tensor):
        g = np.asarray(truth.data, dtype=float)
        if np.min(g) < -1e-12 or abs(g.sum() - 1) > 1e-9:
            raise ValueError("truth G2 must be non-negative and normalised to 1")
        g = np.clip(g, 0, None)
        self.n2 = g.shape[0]
        self.joint_cdf = np.cumsum(g.ravel())
        self.joint_cdf /= self.joint_cdf[-1]
        marg = g.sum(axis=1)
        self.marg_cdf = np.cumsum(marg) / marg.sum()

    def pairs(self, rng, k):
        flat = np.searchsorted(self.joint_cdf, rng.random(k), side="right")
        flat = np.minimum(flat, self.n2 * self.n2 - 1)
        return np.divmod(flat, self.n2)

    def singles(self, rng, k):
        return np.minimum(np.searchsorted(self.marg_cdf, rng.random(k), side="right"), self.n2 - 1)


def _one_frame(sampler: _Sampler, model: DetectorModel, n: int, index: int) -> np.ndarray:
    rng = frame_rng(model.seed, index)
    n2 = n * n
    frame = np.zeros(n2)
    k = rng.poisson(model.pairs_per_frame)
    if k:
        a, b = sampler.pairs(rng, k)
        hits = np.concatenate([a, b])
        keep = rng.random(2 * k) < model.quantum_efficiency
        frame += np.bincount(hits[keep], minlength=n2)
    s = rng.poisson(model.stray_rate)
    if s:
        frame += np.bincount(sampler.singles(rng, s), minlength=n2)
    frame = frame.reshape(n, n)
    if model.readout_noise > 0:
        frame = np.maximum(frame + rng.normal(0.0, model.readout_noise, (n, n)), 0.0)
    frame = apply_smear(frame, model.smear_fraction)
    return np.minimum(np.rint(frame), U16_MAX)


def synthesize_block(truth: G2Tensor, model: DetectorModel, m: int, start: int = 0,
                     workers: int = 1) -> FrameBlock:
    """Frames ``start .. start + m - 1`` of the acquisition described by ``model``.

    Per frame: Poisson(mu) pairs drawn from ``truth`` (each photon kept with
    probability eta), Poisson(stray) singles from its marginal, readout
    noise clamped at 0, row smear, then rounding to counts.
    """
    if m < 2:
        raise ValueError("need at least 2 frames")
    n = truth.n
    sampler = _Sampler(truth)
    out = np.empty((m, n, n), dtype=np.uint16)

    def work(i):
        out[i] = _one_frame(sampler, model, n, start + i)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, range(m)))
    else:
        for i in range(m):
            work(i)
    return FrameBlock(n, out)


def iter_blocks(truth: G2Tensor, model: DetectorModel, frames: int, block_size: int):
    """Yield consecutive :class:`FrameBlock` s covering ``frames`` frames."""
    start = 0
    while start < frames:
        m = min(block_size, frames - start)
        if m < 2:
            break
        yield synthesize_block(truth, model, m, start=start)
        start += m
