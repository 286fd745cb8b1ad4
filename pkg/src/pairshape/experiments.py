"""The two grating shaping experiments: FF translation and NF amplitude sweeps.

Desk-scale defaults are ``n = 64`` and a grating period of 8 SLM pixels, so
diffraction order ``m`` lands ``m * n / P`` pixels from the projection
origin (8 px per order here) along the grating axis.  Envelopes default to
the flat, whole-grid envelope, i.e. the limit where the envelope spectrum is
a delta and only the mask shapes the correlations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .estimator import Projection, project_profile
from .fields import (ComplexGrid, GridSpec, PhaseMask, make_biphoton, make_grating,
                     uniform_envelope)
from .fitting import SineFit, fit_sinusoid
from .propagation import IntensityImage, pair_profile, propagate_coherent

DEFAULT_N = 64
DEFAULT_PERIOD = 8
ORDERS = (-2, -1, 0, 1, 2)


class OrderOutOfBoundsError(ValueError):
    pass


@dataclass
class SweepResult:
    parameter: list
    orders: tuple
    order_magnitudes: dict
    fits: dict = field(default_factory=dict)
    projections: list = field(default_factory=list, repr=False)

    def magnitude(self, order: int) -> np.ndarray:
        return np.asarray(self.order_magnitudes[order])

    def first_order(self) -> np.ndarray:
        """Mean of the +1 and -1 orders."""
        return 0.5 * (self.magnitude(1) + self.magnitude(-1))

    def rows(self):
        """Flat records for CSV export, one per (parameter, order)."""
        for i, p in enumerate(self.parameter):
            for m in self.orders:
                f = self.fits.get(m)
                yield {
                    "parameter": p,
                    "order": m,
                    "magnitude": float(self.order_magnitudes[m][i]),
                    "fit_amplitude": f.amplitude if f else np.nan,
                    "fit_period": f.period if f else np.nan,
                    "fit_phase": f.phase if f else np.nan,
                    "fit_offset": f.offset if f else np.nan,
                    "residual_rms": f.residual_rms if f else np.nan,
                }


def extract_orders(proj: Union[Projection, IntensityImage, np.ndarray], period: int,
                   max_order: int = 2, window: int = 1, axis: str = "x",
                   origin: Optional[int] = None) -> dict:
    """Sum a ``(2w+1)^2`` window around each predicted diffraction peak.

    Works on projections (their own origin) and camera intensity images
    (DC pixel ``n/2``).  ``axis="x"`` means peaks spread along columns, as
    produced by vertical-stripe gratings.
    """
    if isinstance(proj, Projection):
        data, org, n = proj.data, proj.origin, proj.n
    elif isinstance(proj, IntensityImage):
        data, org, n = proj.data, proj.spec.n // 2, proj.spec.n
    else:
        data = np.asarray(proj)
        n = data.shape[0]
        org = n // 2
    if origin is not None:
        org = origin
    step = n / period
    out = {}
    size = data.shape[0]
    for m in range(-max_order, max_order + 1):
        off = int(round(m * step))
        c = org + off
        if c - window < 0 or c + window >= size:
            raise OrderOutOfBoundsError(f"order {m} (offset {off} px) falls outside the "
                                        f"{size}x{size} array")
        lo, hi = c - window, c + window + 1
        o_lo, o_hi = org - window, org + window + 1
        win = data[o_lo:o_hi, lo:hi] if axis == "x" else data[lo:hi, o_lo:o_hi]
        out[m] = float(win.sum())
    return out


def _fit_orders(params, mags, fixed_period=None):
    fits = {}
    for m, vals in mags.items():
        try:
            fits[m] = fit_sinusoid(params, vals, fixed_period=fixed_period)
        except (ValueError, np.linalg.LinAlgError):
            fits[m] = SineFit(np.nan, np.nan, np.nan, np.nan, np.nan, converged=False)
    return fits


def ff_translation_sweep(spec: Optional[GridSpec] = None, period: int = DEFAULT_PERIOD,
                         alpha: float = np.pi / 2, offsets: Optional[Sequence[int]] = None,
                         envelope: Optional[ComplexGrid] = None, max_order: int = 2,
                         window: int = 1, keep_projections: bool = False) -> SweepResult:
    """Translate a grating on the FF SLM and track the C- diffraction orders."""
    spec = spec or GridSpec(DEFAULT_N)
    offsets = list(range(period + 1)) if offsets is None else [int(b) for b in offsets]
    if max(offsets) - min(offsets) < period:
        raise ValueError("offsets must span at least one grating period")
    state = make_biphoton(spec, "FF", envelope or uniform_envelope(spec))
    mags = {m: [] for m in range(-max_order, max_order + 1)}
    projs = []
    for beta in offsets:
        mask = make_grating(spec, period, alpha, beta)
        proj = project_profile(pair_profile(state, mask))
        for m, v in extract_orders(proj, period, max_order, window).items():
            mags[m].append(v)
        if keep_projections:
            projs.append(proj)
    mags = {m: np.array(v) for m, v in mags.items()}
    return SweepResult(offsets, tuple(mags), mags, _fit_orders(offsets, mags), projs)


def nf_amplitude_sweep(spec: Optional[GridSpec] = None, period: int = DEFAULT_PERIOD,
                       amplitudes: Optional[Sequence[float]] = None, mode: str = "pairs",
                       envelope: Optional[ComplexGrid] = None, max_order: int = 2,
                       window: int = 1, keep_projections: bool = False) -> SweepResult:
    """Ramp the grating amplitude; pairs use NF C+, classical the coherent image."""
    spec = spec or GridSpec(DEFAULT_N)
    amplitudes = list(np.linspace(0, 2 * np.pi, 25)) if amplitudes is None else list(amplitudes)
    if min(amplitudes) < 0 or max(amplitudes) > 2 * np.pi + 1e-12:
        raise ValueError("amplitudes must lie in [0, 2pi]")
    env = envelope or uniform_envelope(spec)
    if mode == "pairs":
        state = make_biphoton(spec, "NF", env)
    elif mode != "classical":
        raise ValueError(f"mode must be 'pairs' or 'classical', got {mode!r}")
    mags = {m: [] for m in range(-max_order, max_order + 1)}
    projs = []
    for a in amplitudes:
        mask = make_grating(spec, period, min(a, 2 * np.pi))
        if mode == "pairs":
            target = project_profile(pair_profile(state, mask))
        else:
            target = propagate_coherent(env, mask)
        for m, v in extract_orders(target, period, max_order, window).items():
            mags[m].append(v)
        if keep_projections:
            projs.append(target)
    mags = {m: np.array(v) for m, v in mags.items()}
    return SweepResult(amplitudes, tuple(mags), mags, _fit_orders(amplitudes, mags), projs)
