"""SLM phase-response calibration from speckle decorrelation.

Half of the illuminated pixels (the active set) are driven to grayscale
``G`` while the rest stay at 0.  On the camera the two halves give fixed
speckle fields ``s_P`` and ``s_A`` and the image is
``|s_P + s_A exp(i f(G))|^2``.  Its Pearson correlation with the ``G = 0``
image follows ``M = A + B cos f(G)``, so after mapping ``M`` onto
``[-1, 1]`` the phase is recovered with arccos on each side of the minimum.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .fitting import SineFit, fit_sinusoid

LEVELS = 256
TWO_PI = 2 * np.pi
CLAMP_TOL = 1e-6


class InsufficientModulationError(ValueError):
    """The curve does not show a full oscillation (no second maximum)."""


class UndefinedCorrelationError(ValueError):
    pass


class NumericalFitError(ValueError):
    pass


# ------------------------------------------------------------------ response

@dataclass(frozen=True)
class Segment:
    """``f(G) = a1 G^2 + a2 G + a3`` for ``lo <= G <= hi``."""

    lo: float
    hi: float
    a1: float
    a2: float
    a3: float

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        return (self.a1 * g + self.a2) * g + self.a3

    def slope(self, g):
        return 2 * self.a1 * np.asarray(g, dtype=float) + self.a2

    def invert(self, y: float) -> float:
        """Grayscale in ``[lo, hi]`` where the segment reaches phase ``y``."""
        tol = 1e-6 * max(1.0, self.hi - self.lo)
        if abs(self.a1) < 1e-12:
            if self.a2 == 0:
                raise NumericalFitError("flat segment cannot be inverted")
            return (y - self.a3) / self.a2
        disc = self.a2 ** 2 - 4 * self.a1 * (self.a3 - y)
        if disc < 0:
            raise NumericalFitError(f"negative discriminant {disc:.3g} at phase {y:.4f}")
        sq = np.sqrt(disc)
        roots = [(-self.a2 + sq) / (2 * self.a1), (-self.a2 - sq) / (2 * self.a1)]
        inside = [r for r in roots if self.lo - tol <= r <= self.hi + tol]
        if not inside:
            raise NumericalFitError(f"no root of phase {y:.4f} inside [{self.lo}, {self.hi}]")
        return float(min(max(inside[0], self.lo), self.hi))


@dataclass(frozen=True, eq=False)
class PixelResponse:
    """Monotone piecewise-quadratic grayscale-to-phase map on ``[0, 255]``.

    The first and last segments extend to grayscales outside their range.
    """

    segments: tuple

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("need at least one segment")
        for a, b in zip(segs, segs[1:]):
            if abs(a.hi - b.lo) > 1e-9:
                raise ValueError("segments must be contiguous")
        for s in segs:
            if s.slope(s.lo) < -1e-9 or s.slope(s.hi) < -1e-9:
                raise ValueError("response must be non-decreasing")
        object.__setattr__(self, "segments", segs)

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        out = self.segments[0](g)
        for s in self.segments[1:]:
            out = np.where(g >= s.lo, s(g), out)
        return out

    def check_hidden(self) -> None:
        """Invariants a simulated device response must meet."""
        if abs(float(self(0.0))) > 1e-9:
            raise ValueError("response must start at f(0) = 0")
        top = float(self(LEVELS - 1))
        if not TWO_PI * 0.9 <= top <= TWO_PI * 1.5:
            raise ValueError(f"f(255) = {top:.3f} rad must lie in [0.9, 1.5] x 2 pi")

    @classmethod
    def quadratic(cls, a1: float, a2: float, a3: float = 0.0) -> "PixelResponse":
        return cls((Segment(0.0, LEVELS - 1.0, a1, a2, a3),))

    @classmethod
    def linear(cls, g_2pi: float = 230.0) -> "PixelResponse":
        return cls.quadratic(0.0, TWO_PI / g_2pi)

    @classmethod
    def convex(cls, g_2pi: float = 230.0) -> "PixelResponse":
        """``2 pi (G / g_2pi)^2``."""
        return cls.quadratic(TWO_PI / g_2pi ** 2, 0.0)

    @classmethod
    def concave(cls, g_2pi: float = 230.0, bend: float = 0.6) -> "PixelResponse":
        """``c x (2 - bend x)`` with ``x = G / g_2pi``, scaled to reach 2 pi at ``g_2pi``."""
        c = TWO_PI / (2 - bend)
        return cls.quadratic(-c * bend / g_2pi ** 2, 2 * c / g_2pi)

    @classmethod
    def parse(cls, text: str) -> "PixelResponse":
        """``linear``, ``convex``, ``concave`` or ``quad:a1,a2,a3``."""
        text = text.strip()
        named = {"linear": cls.linear, "convex": cls.convex, "concave": cls.concave}
        if text in named:
            return named[text]()
        if text.startswith("quad:"):
            vals = [float(v) for v in text[5:].split(",")]
            if len(vals) != 3:
                raise ValueError("quad needs three coefficients a1,a2,a3")
            return cls.quadratic(*vals)
        raise ValueError(f"unknown response {text!r}")


# ------------------------------------------------------------------ speckles

@dataclass(frozen=True, eq=False)
class SpecklePair:
    """Camera-plane fields of the passive (``s_p``) and active (``s_a``) pixels."""

    s_p: np.ndarray
    s_a: np.ndarray

    def image(self, phase: float) -> np.ndarray:
        return np.abs(self.s_p + self.s_a * np.exp(1j * phase)) ** 2


def make_speckles(n: int = 256, radius: Optional[float] = None, seed: int = 1) -> SpecklePair:
    """Random-phase illuminated disk, its pixels split at random into two halves."""
    radius = n / 4 if radius is None else radius
    rng = np.random.default_rng(seed)
    u = np.arange(n) - n / 2
    disk = np.hypot(*np.meshgrid(u, u, indexing="ij")) <= radius
    field_ = disk * np.exp(1j * rng.uniform(0, TWO_PI, (n, n)))
    active = rng.random((n, n)) < 0.5
    s_p = np.fft.fft2(field_ * ~active) / n
    s_a = np.fft.fft2(field_ * active) / n
    return SpecklePair(s_p, s_a)


@dataclass(frozen=True, eq=False)
class SpeckleStack:
    grayscale: np.ndarray
    reference: np.ndarray
    images: np.ndarray


def simulate_speckles(hidden: PixelResponse, seed: int = 1, n: int = 256,
                      radius: Optional[float] = None, levels: Sequence[int] = None,
                      workers: int = 1, speckles: Optional[SpecklePair] = None) -> SpeckleStack:
    """Camera images for every grayscale level; the reference is ``G = 0``."""
    hidden.check_hidden()
    sp = speckles or make_speckles(n, radius, seed)
    grays = np.arange(LEVELS) if levels is None else np.asarray(levels)
    phases = hidden(grays)
    out = np.empty((grays.size,) + sp.s_p.shape)

    def work(i):
        out[i] = sp.image(phases[i])

    _run(work, grays.size, workers)
    return SpeckleStack(grays, sp.image(float(hidden(0.0))), out)


def _run(fn: Callable[[int], None], count: int, workers: int) -> None:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fn, range(count)))
    else:
        for i in range(count):
            fn(i)


# --------------------------------------------------------------- correlation

def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Mean-subtracted normalised covariance over all pixels."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("images must have equal dimensions")
    if np.array_equal(a, b) and np.ptp(a) > 0:
        return 1.0
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.dot(da, da), np.dot(db, db)
    if sa == 0 or sb == 0:
        raise UndefinedCorrelationError("correlation undefined for a flat image")
    return float(np.clip(np.dot(da, db) / np.sqrt(sa * sb), -1.0, 1.0))


def smooth5(y: np.ndarray) -> np.ndarray:
    """5-point moving average with edge values repeated."""
    padded = np.pad(np.asarray(y, dtype=float), 2, mode="edge")
    return np.convolve(padded, np.ones(5) / 5, mode="valid")


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    """Correlation per grayscale level and the landmarks found on it.

    Landmarks are grayscale values: ``g0`` (first maximum), ``g_pi`` (first
    minimum after it), ``g_2pi`` (next maximum), and the zero crossings of
    the rescaled curve ``g_pi2``/``g_3pi2`` between them.  Missing landmarks
    are ``None``.
    """

    grayscale: np.ndarray
    M: np.ndarray
    landmarks: dict = field(default_factory=dict)

    def rescaled(self) -> np.ndarray:
        """Affine map of ``M`` onto ``[-1, 1]`` using the extremes within one oscillation."""
        lo, hi = self._span()
        seg = self.M[lo:hi + 1]
        top, bot = seg.max(), seg.min()
        if top - bot <= 0:
            raise InsufficientModulationError("correlation does not vary")
        return 2 * (self.M - bot) / (top - bot) - 1

    def _span(self):
        lm = self.landmarks
        if lm.get("g_2pi") is None:
            raise InsufficientModulationError(
                "no second correlation maximum: pixels are not modulating all the way to 2 pi")
        idx = {int(g): i for i, g in enumerate(self.grayscale)}
        return idx[int(lm["g0"])], idx[int(lm["g_2pi"])]


def find_landmarks(grayscale: np.ndarray, M: np.ndarray) -> dict:
    s = smooth5(M)
    k = len(s)
    lm = {"g0": None, "g_pi2": None, "g_pi": None, "g_3pi2": None, "g_2pi": None}

    def is_max(i):
        return (i == 0 or s[i] >= s[i - 1]) and (i == k - 1 or s[i] > s[i + 1])

    def is_min(i):
        return 0 < i < k - 1 and s[i] <= s[i - 1] and s[i] < s[i + 1]

    i0 = next((i for i in range(k) if is_max(i)), None)
    if i0 is None:
        return lm
    lm["g0"] = float(grayscale[i0])
    ipi = next((i for i in range(i0 + 1, k) if is_min(i)), None)
    if ipi is None:
        return lm
    # landmarks on the raw curve, inside the window the smoothed curve points to
    ipi = _refine(M, ipi, np.argmin)
    lm["g_pi"] = float(grayscale[ipi])
    i2 = next((i for i in range(ipi + 1, k - 1) if is_max(i)), None)
    if i2 is None:
        return lm
    i2 = _refine(M, i2, np.argmax)
    lm["g_2pi"] = float(grayscale[i2])
    mid = 0.5 * (M[i0:i2 + 1].max() + M[i0:i2 + 1].min())
    lm["g_pi2"] = _crossing(grayscale, M, mid, i0, ipi)
    lm["g_3pi2"] = _crossing(grayscale, M, mid, ipi, i2)
    return lm


def _refine(M, i, pick):
    lo, hi = max(i - 2, 0), min(i + 3, len(M))
    return lo + int(pick(M[lo:hi]))


def _crossing(g, M, level, lo, hi):
    for i in range(lo, hi):
        a, b = M[i] - level, M[i + 1] - level
        if a == 0:
            return float(g[i])
        if a * b < 0:
            return float(g[i] + (g[i + 1] - g[i]) * a / (a - b))
    return None


def correlation_curve(reference: np.ndarray, images, grayscale: Optional[np.ndarray] = None,
                      workers: int = 1) -> CalibrationCurve:
    """Pearson correlation of every image with the reference, plus landmarks."""
    images = np.asarray(images)
    grays = np.arange(images.shape[0]) if grayscale is None else np.asarray(grayscale)
    M = np.empty(images.shape[0])

    def work(i):
        M[i] = pearson(reference, images[i])

    _run(work, images.shape[0], workers)
    return CalibrationCurve(grays, M, find_landmarks(grays, M))


def curve_from_stack(stack: SpeckleStack, workers: int = 1) -> CalibrationCurve:
    return correlation_curve(stack.reference, stack.images, stack.grayscale, workers)


# ------------------------------------------------------------------- fitting

def _arccos(m: np.ndarray) -> np.ndarray:
    if np.any(np.abs(m) > 1 + CLAMP_TOL):
        raise NumericalFitError("rescaled correlation outside [-1, 1]")
    return np.arccos(np.clip(m, -1.0, 1.0))


def fit_response(curve: CalibrationCurve) -> PixelResponse:
    """Piecewise-quadratic phase response from one oscillation of the curve.

    Left of ``g_pi`` the phase is ``arccos(M)``, right of it
    ``2 pi - arccos(M)``.  The right half is fitted in coordinates shifted
    to ``(g_pi, Y0)`` with no constant term, ``Y0`` being the largest left
    phase, so both halves meet at ``g_pi``.
    """
    lo, hi = curve._span()
    lm = curve.landmarks
    if lm.get("g_pi") is None:
        raise InsufficientModulationError("no correlation minimum")
    m = curve.rescaled()
    g = curve.grayscale.astype(float)
    ipi = int(np.nonzero(curve.grayscale == lm["g_pi"])[0][0])
    g_pi = g[ipi]

    gl, yl = g[lo:ipi + 1], _arccos(m[lo:ipi + 1])
    a1, a2, a3 = np.polyfit(gl, yl, 2)

    gr = g[ipi:hi + 1]
    yr = TWO_PI - _arccos(m[ipi:hi + 1])
    y0 = float(yl.max())
    x = gr - g_pi
    design = np.column_stack([x ** 2, x])
    (b1, b2), *_ = np.linalg.lstsq(design, yr - y0, rcond=None)
    # back to absolute grayscale
    c1, c2, c3 = b1, b2 - 2 * g_pi * b1, b1 * g_pi ** 2 - b2 * g_pi + y0

    left = Segment(0.0, g_pi, a1, a2, a3)
    right = Segment(g_pi, LEVELS - 1.0, c1, c2, c3)
    jump = abs(float(left(g_pi)) - float(right(g_pi)))
    if jump >= 0.02:
        raise NumericalFitError(f"halves do not meet at G_pi (jump {jump:.3f} rad)")
    return PixelResponse((left, right))


@dataclass(frozen=True, eq=False)
class InverseResponse:
    """Phase-to-grayscale map of a fitted response on ``[0, 2 pi]``.

    ``lut`` rounds half up (``floor(G + 0.5)``), so for ``f = 2 pi G / 255``
    the phase pi maps to level 128.
    """

    response: PixelResponse

    def __call__(self, y) -> np.ndarray:
        ys = np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(ys < -1e-12) or np.any(ys > TWO_PI + 1e-12):
            raise ValueError("inverse is defined on [0, 2 pi]")
        out = np.array([self._one(v) for v in ys])
        return out if np.ndim(y) else float(out[0])

    def _one(self, y: float) -> float:
        segs = self.response.segments
        for s in segs:
            if float(s(s.lo)) - 1e-12 <= y <= float(s(s.hi)) + 1e-12:
                return s.invert(y)
        if y < float(segs[0](segs[0].lo)):
            return Segment(-np.inf, segs[0].hi, *_coef(segs[0])).invert(y)
        return Segment(segs[-1].lo, np.inf, *_coef(segs[-1])).invert(y)

    def lut(self, phases: Sequence[float]) -> np.ndarray:
        g = np.floor(np.asarray(self(np.asarray(phases, dtype=float))) + 0.5)
        return np.clip(g, 0, LEVELS - 1).astype(int)


def _coef(s: Segment):
    return s.a1, s.a2, s.a3


def invert_response(resp: PixelResponse) -> InverseResponse:
    return InverseResponse(resp)


@dataclass(frozen=True)
class LutReport:
    period: float
    residual_rms: float
    amplitude: float
    fit: SineFit


def verify_lut(hidden: PixelResponse, lut: Callable[[np.ndarray], np.ndarray],
               seed: int = 1, n: int = 256, radius: Optional[float] = None,
               samples: int = 64, speckles: Optional[SpecklePair] = None) -> LutReport:
    """Drive the simulated SLM through ``lut`` over a linear phase ramp.

    With a correct LUT the correlation is a cosine of the requested phase
    with period 2 pi.
    """
    sp = speckles or make_speckles(n, radius, seed)
    ys = np.linspace(0, TWO_PI, samples)
    grays = np.asarray(lut(ys))
    ref = sp.image(float(hidden(0.0)))
    m = np.array([pearson(ref, sp.image(float(hidden(g)))) for g in grays])
    fit = fit_sinusoid(ys, m)
    return LutReport(fit.period, fit.residual_rms, fit.amplitude, fit)


def identity_lut(ys: np.ndarray) -> np.ndarray:
    """Assumes the full grayscale range spans exactly 2 pi."""
    return np.clip(np.floor(np.asarray(ys) * (LEVELS - 1) / TWO_PI + 0.5), 0, LEVELS - 1).astype(int)
