"""Sinusoid fitting shared by the sweeps, the AO loop and the SLM check."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares


@dataclass(frozen=True)
class SineFit:
    """``amplitude * sin(2 pi x / period + phase) + offset``."""

    amplitude: float
    period: float
    phase: float
    offset: float
    residual_rms: float
    converged: bool = True

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.sin(2 * np.pi * x / self.period + self.phase) + self.offset

    def argmax(self, lo: float, hi: float) -> float:
        """Location of the fitted maximum closest to the middle of ``[lo, hi]``."""
        # sin peaks where 2 pi x / T + phase = pi/2 + 2 pi k
        base = (np.pi / 2 - self.phase) * self.period / (2 * np.pi)
        mid = 0.5 * (lo + hi)
        k = np.round((mid - base) / self.period)
        return float(base + k * self.period)


def _linear(x, y, period):
    w = 2 * np.pi / period
    design = np.column_stack([np.sin(w * x), np.cos(w * x), np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return coef, float(np.sqrt(np.mean(resid ** 2)))


def fit_sinusoid(x: Sequence[float], y: Sequence[float],
                 periods: Optional[Sequence[float]] = None,
                 fixed_period: Optional[float] = None) -> SineFit:
    """Least-squares sine fit.

    The period is found by a coarse grid search (linear fits of the other
    three parameters at each trial period, grid seeded with the strongest
    FFT bin of the data), then all four parameters are refined together.
    ``fixed_period`` skips the search and keeps the period fixed.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise ValueError("need at least 4 points for a sine fit")
    span = float(x.max() - x.min())
    if fixed_period is not None:
        coef, rms = _linear(x, y, fixed_period)
        amp, ph = _polar(coef)
        return SineFit(amp, float(fixed_period), ph, float(coef[2]), rms)

    if periods is None:
        step = float(np.min(np.diff(np.unique(x))))
        periods = list(np.geomspace(2.5 * step, 4.0 * span, 240))
        # FFT-derived initial guess, assuming near-uniform sampling
        spec = np.abs(np.fft.rfft(y - y.mean()))
        if spec.size > 1 and spec[1:].max() > 0:
            k = 1 + int(np.argmax(spec[1:]))
            periods.append(step * x.size / k)
    best = None
    for p in periods:
        coef, rms = _linear(x, y, p)
        if best is None or rms < best[2] - 1e-15:
            best = (p, coef, rms)
    p0, coef, rms0 = best
    amp0, ph0 = _polar(coef)
    if amp0 < 1e-12 * max(1.0, np.max(np.abs(y))):
        return SineFit(0.0, float(p0), 0.0, float(coef[2]), rms0, converged=False)

    def resid(q):
        a, p, ph, c = q
        return a * np.sin(2 * np.pi * x / p + ph) + c - y

    try:
        sol = least_squares(resid, [amp0, p0, ph0, coef[2]], method="lm", xtol=1e-14,
                            ftol=1e-14, gtol=1e-14, max_nfev=2000)
        a, p, ph, c = sol.x
        ok = bool(sol.success) and p > 0
    except (ValueError, RuntimeError):
        a, p, ph, c, ok = amp0, p0, ph0, coef[2], False
    if not ok:
        a, p, ph, c = amp0, p0, ph0, coef[2]
    if a < 0:
        a, ph = -a, ph + np.pi
    rms = float(np.sqrt(np.mean(resid([a, p, ph, c]) ** 2)))
    return SineFit(float(a), float(p), float(np.mod(ph, 2 * np.pi)), float(c), rms, ok)


def _polar(coef):
    # b_s sin + b_c cos = A sin(. + phase)
    amp = float(np.hypot(coef[0], coef[1]))
    return amp, float(np.mod(np.arctan2(coef[1], coef[0]), 2 * np.pi))
