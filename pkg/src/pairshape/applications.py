"""Applications of pair shaping: quantum-assisted AO and scattering correction.

Adaptive optics
    The aberration sits in the SLM plane of an NF setup, so pairs see twice
    the sum of aberration and correction.  The C+ central bin is the
    guidestar; it is maximal when ``2 (aberration + correction)`` is flat.

Transmission matrix
    Pair states are ``N x N`` mode matrices propagated as ``T D psi D^T T^T``.
    Correcting with a diagonal phase ``D`` from one row of ``T`` focuses the
    pairs into the target output mode pair ``(t, t)``; the coincidence
    probability of that pair is the central-bin value tracked here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Optional

import numpy as np
from scipy.linalg import hadamard

from .estimator import PLUS, Projection, project_profile
from .fields import (BiphotonState, Disk, GridSpec, PhaseMask, make_biphoton,
                     make_envelope)
from .fitting import fit_sinusoid
from .propagation import pair_profile


class ProjectionKindError(ValueError):
    pass


# ----------------------------------------------------------------- guidestar

def guidestar_value(proj: Projection, center_mean: bool = False) -> float:
    """C+ value at the origin bin (or the 3x3 mean around it)."""
    if proj.kind != PLUS:
        raise ProjectionKindError("the guidestar is read from a sum-coordinate projection")
    o = proj.origin
    if center_mean:
        return float(proj.data[o - 1:o + 2, o - 1:o + 2].mean())
    return float(proj.data[o, o])


def nf_guidestar(state: BiphotonState, mask: PhaseMask, center_mean: bool = False) -> float:
    return guidestar_value(project_profile(pair_profile(state, mask)), center_mean)


# ---------------------------------------------------------------- aberrations

def noll_to_nm(j: int) -> tuple[int, int]:
    """Noll index (from 1) to radial order n and signed azimuthal order m."""
    n = 0
    while j > (n + 1) * (n + 2) // 2:
        n += 1
    k = j - n * (n + 1) // 2 - 1
    # |m| at this radial order in Noll order; nonzero |m| appear as a cos/sin pair
    ms = [am for am in range(n % 2, n + 1, 2) for _ in range(1 if am == 0 else 2)]
    am = ms[k]
    if am == 0:
        return n, 0
    return n, am if j % 2 == 0 else -am


def zernike(n: int, m: int, rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    am = abs(m)
    radial = np.zeros_like(rho)
    for s in range((n - am) // 2 + 1):
        c = (-1) ** s * factorial(n - s) / (
            factorial(s) * factorial((n + am) // 2 - s) * factorial((n - am) // 2 - s))
        radial += c * rho ** (n - 2 * s)
    if m > 0:
        return radial * np.cos(am * phi)
    if m < 0:
        return radial * np.sin(am * phi)
    return radial


@dataclass(frozen=True, eq=False)
class AberrationModel:
    """Smooth phase modes on the pupil disk, orthonormal in RMS over its pixels.

    The basis starts at defocus (Noll 4): piston does nothing and tip/tilt
    only displace the image.  Sampled Zernike polynomials are
    Gram-Schmidt orthonormalised over the disk pixels, so a coefficient
    vector's Euclidean norm is the RMS phase in radians.
    """

    spec: GridSpec
    radius_px: float
    modes: np.ndarray
    noll: tuple
    coefficients: np.ndarray = field(default=None)

    @classmethod
    def build(cls, spec: GridSpec, radius_px: float, size: int = 10,
              first_noll: int = 4) -> "AberrationModel":
        y, x = spec.slm_coords()
        rho = np.hypot(x, y) / radius_px
        phi = np.arctan2(y, x)
        support = rho <= 1.0
        noll = tuple(range(first_noll, first_noll + size))
        raw = np.array([zernike(*noll_to_nm(j), rho[support], phi[support]) for j in noll])
        q, r = np.linalg.qr(raw.T)
        q = q * np.sign(np.diag(r))[None, :]  # keep the sign of the analytic mode
        q *= np.sqrt(support.sum())
        modes = np.zeros((size, spec.n, spec.n))
        modes[:, support] = q.T
        return cls(spec, radius_px, modes, noll, np.zeros(size))

    @property
    def size(self) -> int:
        return self.modes.shape[0]

    @property
    def support(self) -> np.ndarray:
        return np.hypot(*self.spec.slm_coords()) <= self.radius_px

    def gram(self) -> np.ndarray:
        s = self.support
        flat = self.modes[:, s]
        return flat @ flat.T / s.sum()

    def phase(self, coefficients) -> np.ndarray:
        c = np.zeros(self.size)
        c[:len(coefficients)] = coefficients
        return np.tensordot(c, self.modes, axes=1)

    def mask(self, coefficients=None) -> PhaseMask:
        c = self.coefficients if coefficients is None else coefficients
        return PhaseMask(self.spec, self.phase(c))

    def random(self, k_modes: int, rms: float, seed: int = 1) -> "AberrationModel":
        """Copy with a random aberration in the first ``k_modes`` at ``rms`` radians."""
        if k_modes > self.size:
            raise ValueError(f"k_modes={k_modes} exceeds basis size {self.size}")
        rng = np.random.default_rng(seed)
        c = np.zeros(self.size)
        v = rng.normal(size=k_modes)
        c[:k_modes] = rms * v / np.linalg.norm(v)
        return AberrationModel(self.spec, self.radius_px, self.modes, self.noll, c)


@dataclass(frozen=True)
class CoordinateDescentModes:
    k_modes: int = 3
    steps_per_mode: int = 9
    passes: int = 3
    span: float = 1.5          # half-width of the first pass search, radians
    shrink: float = 0.5        # span factor between passes
    center_mean: bool = True   # feed back the 3x3 central mean rather than one bin


@dataclass
class AOResult:
    mask: PhaseMask
    coefficients: np.ndarray
    trace: list
    evaluations: int


def ao_optimize(state: BiphotonState, aberration: PhaseMask, model: AberrationModel,
                optimizer: CoordinateDescentModes = CoordinateDescentModes()) -> AOResult:
    """Maximise the C+ guidestar over mode coefficients, one mode at a time.

    For each mode a grid of ``steps_per_mode`` coefficients around the
    current value is evaluated and a sinusoid (period four times the search
    half-width) fitted; the best of the current value, the grid samples and
    the fitted peak is kept.  ``trace`` holds the feedback value after every
    mode update and never decreases.

    The 3x3 central mean is the default feedback: it stays informative when
    the pair peak is broken up, where the single bin has competing local
    maxima (astigmatic line foci).
    """
    if optimizer.k_modes > model.size:
        raise ValueError(f"k_modes={optimizer.k_modes} exceeds basis size {model.size}")
    if state.variant != "correlated":
        raise ValueError("adaptive optics runs in the NF configuration")
    coeffs = np.zeros(model.size)
    evals = 0

    def metric(c):
        nonlocal evals
        evals += 1
        return nf_guidestar(state, aberration + model.mask(c), optimizer.center_mean)

    current = metric(coeffs)
    trace = [current]
    span = optimizer.span
    for _ in range(optimizer.passes):
        for k in range(optimizer.k_modes):
            c0 = coeffs[k]
            grid = c0 + span * np.linspace(-1, 1, optimizer.steps_per_mode)
            vals = []
            for g in grid:
                trial = coeffs.copy()
                trial[k] = g
                vals.append(metric(trial))
            vals = np.array(vals)
            candidates = [(current, c0), (float(vals.max()), float(grid[np.argmax(vals)]))]
            fit = fit_sinusoid(grid, vals, fixed_period=4 * span)
            if fit.amplitude > 0:
                peak = float(np.clip(fit.argmax(grid[0], grid[-1]), grid[0], grid[-1]))
                trial = coeffs.copy()
                trial[k] = peak
                candidates.append((metric(trial), peak))
            best_val, best_c = max(candidates, key=lambda t: t[0])
            if best_val > current:
                coeffs[k] = best_c
                current = best_val
            trace.append(current)
        span *= optimizer.shrink
    return AOResult(model.mask(coeffs), coeffs, trace, evals)


def ao_state(spec: GridSpec, pupil_radius: float) -> BiphotonState:
    return make_biphoton(spec, "NF", make_envelope(spec, Disk(pupil_radius)))


def image_through_pupil(target: np.ndarray, pupil: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Coherent image of an amplitude target through a phase-aberrated pupil.

    ``pupil`` and ``phase`` live on the DC-centred Fourier grid of ``target``.
    """
    spec_ = np.fft.fftshift(np.fft.fft2(target))
    field_ = np.fft.ifft2(np.fft.ifftshift(spec_ * pupil * np.exp(1j * phase)))
    return np.abs(field_) ** 2


def bar_target(n: int, bars: int = 3, width: int = 2) -> np.ndarray:
    """Phase-free amplitude target: vertical bars across the middle half."""
    t = np.zeros((n, n))
    lo, hi = n // 4, 3 * n // 4
    pitch = (hi - lo) // bars
    for b in range(bars):
        c = lo + b * pitch
        t[lo:hi, c:c + width] = 1.0
    return t


def sharpness(image: np.ndarray) -> float:
    """Gradient energy normalised by the squared total intensity."""
    gy, gx = np.gradient(image)
    return float(np.sum(gx ** 2 + gy ** 2) / np.sum(image) ** 2)


# ------------------------------------------------------- transmission matrix

@dataclass(frozen=True, eq=False)
class TransmissionMatrix:
    T: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.T, dtype=complex)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("transmission matrix must be square")
        object.__setattr__(self, "T", t)

    @property
    def n_modes(self) -> int:
        return self.T.shape[0]

    @classmethod
    def random_unitary(cls, n_modes: int, seed: int = 1) -> "TransmissionMatrix":
        """Haar-random unitary: QR of a complex Gaussian matrix with phase-fixed R."""
        rng = np.random.default_rng(seed)
        z = (rng.normal(size=(n_modes, n_modes)) + 1j * rng.normal(size=(n_modes, n_modes))) / np.sqrt(2)
        q, r = np.linalg.qr(z)
        d = np.diag(r)
        return cls(q * (d / np.abs(d))[None, :])

    @classmethod
    def identity(cls, n_modes: int) -> "TransmissionMatrix":
        return cls(np.eye(n_modes))


def correlated_state(n_modes: int) -> np.ndarray:
    """Perfectly correlated NF pair state in the mode basis, unit norm."""
    return np.eye(n_modes, dtype=complex) / np.sqrt(n_modes)


def tm_propagate(psi_in: np.ndarray, T: TransmissionMatrix, d: Optional[np.ndarray] = None) -> np.ndarray:
    """``T D psi D^T T^T`` with ``D = diag(d)``."""
    psi_in = np.asarray(psi_in, dtype=complex)
    nm = T.n_modes
    if psi_in.shape != (nm, nm):
        raise ValueError(f"state shape {psi_in.shape} does not match {nm} modes")
    d = np.ones(nm, dtype=complex) if d is None else np.asarray(d, dtype=complex)
    if d.shape != (nm,):
        raise ValueError(f"phase vector length {d.shape} does not match {nm} modes")
    if np.max(np.abs(np.abs(d) - 1)) > 1e-10:
        raise ValueError("SLM phase vector entries must have unit modulus")
    left = T.T * d[None, :]
    return left @ psi_in @ left.T


def tm_correction_mask(T: TransmissionMatrix, target_mode: int) -> np.ndarray:
    """Phase-conjugate the target row: ``d_k = exp(-i arg T[t, k])``.

    With a diagonal modulator this is the phase-only stand-in for inverting
    ``T``; it cannot undo the full matrix, only refocus one mode pair.
    """
    if not 0 <= target_mode < T.n_modes:
        raise IndexError(f"target mode {target_mode} outside 0..{T.n_modes - 1}")
    return np.exp(-1j * np.angle(T.T[target_mode]))


def central_value(psi_out: np.ndarray, target_mode: int) -> float:
    """Normalised coincidence probability of the target mode pair."""
    g2 = np.abs(psi_out) ** 2
    return float(g2[target_mode, target_mode] / g2.sum())


def background_value(psi_out: np.ndarray, target_mode: int) -> float:
    g2 = np.abs(psi_out) ** 2 / np.sum(np.abs(psi_out) ** 2)
    mask = np.ones(g2.shape, dtype=bool)
    mask[target_mode, target_mode] = False
    return float(g2[mask].mean())


def sum_projection(psi_out: np.ndarray) -> np.ndarray:
    """1-D sum-coordinate projection of ``|psi_out|^2`` over mode index sums."""
    g2 = np.abs(psi_out) ** 2
    nm = g2.shape[0]
    out = np.zeros(2 * nm - 1)
    i, j = np.indices(g2.shape)
    np.add.at(out, (i + j).ravel(), g2.ravel())
    return out


def measure_tm_classical(T_hidden: TransmissionMatrix, noise: float = 0.0,
                         seed: int = 1) -> TransmissionMatrix:
    """Four-step phase-shifting measurement with Hadamard probes.

    Each probe ``h_k`` interferes with a flat reference input; intensities at
    phase steps ``0, pi/2, pi, 3pi/2`` give ``conj(T r) * (T h_k)``, so the
    reconstruction equals ``T`` up to one complex factor per output mode.
    ``noise`` adds Gaussian intensity noise with that standard deviation
    relative to the mean intensity.
    """
    nm = T_hidden.n_modes
    if nm & (nm - 1):
        raise ValueError("Hadamard probing needs a power-of-two mode count")
    rng = np.random.default_rng(seed)
    H = hadamard(nm).astype(float)
    ref = np.ones(nm) / np.sqrt(nm)
    probes = H / np.sqrt(nm)
    T = T_hidden.T
    steps = np.exp(1j * np.array([0, 0.5, 1.0, 1.5]) * np.pi)
    out_ref = T @ ref
    out_probe = T @ probes
    inten = np.abs(out_ref[None, :, None] + steps[:, None, None] * out_probe[None, :, :]) ** 2
    if noise > 0:
        inten = inten + rng.normal(0.0, noise * inten.mean(), inten.shape)
    x = ((inten[0] - inten[2]) + 1j * (inten[3] - inten[1])) / 4.0
    return TransmissionMatrix(x @ H.T / np.sqrt(nm))


def tm_enhancement(T: TransmissionMatrix, target_mode: Optional[int] = None,
                   measured: Optional[TransmissionMatrix] = None) -> dict:
    """Central value with and without the row-conjugation correction."""
    nm = T.n_modes
    t = nm // 2 if target_mode is None else target_mode
    psi = correlated_state(nm)
    before = tm_propagate(psi, T)
    d = tm_correction_mask(measured or T, t)
    after = tm_propagate(psi, T, d)
    c0, c1 = central_value(before, t), central_value(after, t)
    return {"n_modes": nm, "target": t, "uncorrected": c0, "corrected": c1,
            "enhancement": c1 / c0, "background": background_value(before, t)}
