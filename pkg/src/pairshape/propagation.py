"""Propagation of coherent fields and photon-pair correlations to the camera.

The SLM-to-camera system is a phase mask followed by a Fourier lens, whose
discrete PSF is

    h(k, x) = exp(-2 pi i k.x / n) / n * exp(i theta(x))

with ``x`` the half-integer SLM coordinate and ``k`` the integer camera
frequency (see :mod:`pairshape.fields`).  The ``1/n`` factor makes the 2-D
kernel unitary, so every output here sums to the input power; outputs that
the optics defines only up to a constant are additionally normalised to
sum 1.

For delta-form states the four-index propagation collapses to a single 2-D
transform (:func:`pair_profile`).  :func:`propagate_g2_full` keeps the
brute-force route, built from an explicit dense PSF matrix rather than FFTs,
and serves as the oracle for the fast path.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fields import (ANTI_CORRELATED, CORRELATED, BiphotonState, ComplexGrid,
                     GridSpec, PhaseMask, SpecMismatchError, _check_same)

MAX_FULL_N = 32
_ROW_CHUNK = 64  # fixed chunking keeps results independent of worker count


class UnsupportedVariantError(ValueError):
    pass


class ResourceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class IntensityImage:
    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.spec.n, self.spec.n):
            raise ValueError(f"image shape {self.data.shape} does not match n={self.spec.n}")
        if np.min(self.data) < -1e-12:
            raise ValueError("intensity must be non-negative")


@dataclass(frozen=True, eq=False)
class G2Tensor:
    """Joint detection probabilities as an ``n^2 x n^2`` matrix.

    Element ``[idx(r1), idx(r2)]`` with ``idx = row * n + col``.  Tensors
    coming out of the estimator may hold small negative values (shot
    noise); propagation outputs are non-negative.
    """

    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        n2 = self.spec.n ** 2
        if self.data.shape != (n2, n2):
            raise ValueError(f"G2 shape {self.data.shape} != {(n2, n2)}")

    @property
    def n(self) -> int:
        return self.spec.n

    def as_4d(self) -> np.ndarray:
        """View indexed ``[i1, j1, i2, j2]``."""
        n = self.spec.n
        return self.data.reshape(n, n, n, n)

    def marginal(self) -> np.ndarray:
        return self.data.sum(axis=1).reshape(self.spec.n, self.spec.n)


# ------------------------------------------------------------ DFT helpers

def slm_to_camera(spec: GridSpec, field: np.ndarray) -> np.ndarray:
    """Unitary DFT from the half-integer SLM grid to the DC-centred camera grid."""
    n = spec.n
    i = np.arange(n)
    # (-1)^i absorbs the half-pixel and DC shifts; fft index j is camera index j
    sign = (-1.0) ** i
    post = np.exp(1j * np.pi * i * (n - 1) / n) * np.exp(-1j * np.pi * (n - 1) / 2)
    spec_ = np.fft.fft2(field * sign[:, None] * sign[None, :])
    return spec_ * post[:, None] * post[None, :] / n


def dft_kernel_1d(n: int) -> np.ndarray:
    """Explicit ``W[k, x] = exp(-2 pi i k x / n) / sqrt(n)`` on the two grids."""
    k = np.arange(n) - n // 2
    x = np.arange(n) - (n - 1) / 2.0
    return np.exp(-2j * np.pi * np.outer(k, x) / n) / np.sqrt(n)


def psf_matrix(mask: PhaseMask) -> np.ndarray:
    """Dense ``n^2 x n^2`` PSF ``h[idx(k), idx(x)]``, unitary."""
    w = dft_kernel_1d(mask.spec.n)
    return np.kron(w, w) * np.exp(1j * mask.theta.ravel())[None, :]


# ------------------------------------------------------- effective masks

def effective_mask_ff(mask: PhaseMask) -> PhaseMask:
    """``psi(r) = theta(r) + theta(-r)``, the phase FF pairs respond to."""
    return PhaseMask(mask.spec, mask.theta + mask.theta[::-1, ::-1])


def effective_mask_nf(mask: PhaseMask) -> PhaseMask:
    """``2 theta(r)``, the phase NF pairs respond to."""
    return PhaseMask(mask.spec, 2.0 * mask.theta)


# --------------------------------------------------------------- coherent

def propagate_coherent(field: ComplexGrid, mask: PhaseMask) -> IntensityImage:
    _check_same(field.spec, mask.spec)
    out = slm_to_camera(field.spec, field.data * np.exp(1j * mask.theta))
    return IntensityImage(field.spec, np.abs(out) ** 2)


# ------------------------------------------------------------------ pairs

@dataclass(frozen=True, eq=False)
class PairProfile:
    """Reduced G2 of a delta state: ``G2(k1, k2) = data[k1 +/- k2] / n^2``.

    ``kind`` is ``"sum"`` (NF, depends on ``k1 + k2``) or ``"difference"``
    (FF, depends on ``k1 - k2``).  ``data`` is on the camera grid and sums
    to 1.
    """

    spec: GridSpec
    kind: str
    data: np.ndarray

    def to_g2(self) -> G2Tensor:
        n = self.spec.n
        j = np.arange(n)
        if self.kind == "sum":
            comb = (j[:, None] + j[None, :] - n // 2) % n
        else:
            comb = (j[:, None] - j[None, :] + n // 2) % n
        rows = comb[:, None, :, None]   # [j1y, ., j2y, .]
        cols = comb[None, :, None, :]   # [., j1x, ., j2x]
        g2 = self.data[rows, cols].reshape(n * n, n * n) / (n * n)
        return G2Tensor(self.spec, g2 / g2.sum())


def pair_profile(state: BiphotonState, mask: PhaseMask) -> PairProfile:
    """Fast path for delta states with zero correlation width."""
    _check_same(state.spec, mask.spec)
    if not state.is_delta:
        raise UnsupportedVariantError("full 4-D states need propagate_g2_full")
    if state.corr_width != 0:
        raise UnsupportedVariantError("analytic propagation needs corr_width == 0")
    if state.variant == CORRELATED:
        phase, kind = 2.0 * mask.theta, "sum"
    elif state.variant == ANTI_CORRELATED:
        phase, kind = mask.theta + mask.theta[::-1, ::-1], "difference"
    else:  # pragma: no cover - guarded by is_delta
        raise UnsupportedVariantError(state.variant)
    amp = slm_to_camera(state.spec, state.envelope.data * np.exp(1j * phase))
    prof = np.abs(amp) ** 2
    return PairProfile(state.spec, kind, prof / prof.sum())


def propagate_pairs_analytic(state: BiphotonState, mask: PhaseMask) -> G2Tensor:
    """Camera-plane G2 of a delta state via its 2-D profile, normalised to 1.

    FF: ``|F[phi_0 e^{i psi}]|^2`` of ``k1 - k2``; NF: ``|F[phi_0' e^{2 i theta}]|^2``
    of ``k1 + k2``.  Uniform along the complementary coordinate.
    """
    return pair_profile(state, mask).to_g2()


def propagate_g2_full(state: BiphotonState, mask: PhaseMask, identity: bool = False,
                      workers: int = 1) -> G2Tensor:
    """Brute-force ``psi_out = H phi H^T`` with an explicit PSF matrix.

    ``identity=True`` replaces the PSF by the identity.  Rows of the output
    are computed in fixed chunks, so ``workers`` never changes the result.
    """
    _check_same(state.spec, mask.spec)
    n = state.spec.n
    if n > MAX_FULL_N:
        raise ResourceError(f"full propagation is O(n^6) in time; n={n} exceeds {MAX_FULL_N}")
    phi = state.to_full4d()
    if identity:
        out = phi
    else:
        h = psf_matrix(mask)
        right = phi @ h.T
        chunks = [slice(s, min(s + _ROW_CHUNK, n * n)) for s in range(0, n * n, _ROW_CHUNK)]
        out = np.empty((n * n, n * n), dtype=complex)

        def work(sl):
            out[sl] = h[sl] @ right

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(work, chunks))
        else:
            for sl in chunks:
                work(sl)
    g2 = np.abs(out) ** 2
    return G2Tensor(state.spec, g2 / g2.sum())


def propagate_pairs_intensity(state: BiphotonState, mask: PhaseMask) -> IntensityImage:
    """Single-photon intensity at the camera, the marginal of G2.

    Ideal delta states give a flat image whatever the mask; finite
    correlation width goes through the brute-force route.
    """
    if state.is_delta and state.corr_width == 0:
        g2 = propagate_pairs_analytic(state, mask)
    else:
        g2 = propagate_g2_full(state, mask)
    return IntensityImage(state.spec, g2.marginal())


__all__ = [
    "G2Tensor", "IntensityImage", "PairProfile", "ResourceError", "SpecMismatchError",
    "UnsupportedVariantError", "effective_mask_ff", "effective_mask_nf", "pair_profile",
    "propagate_coherent", "propagate_g2_full", "propagate_pairs_analytic",
    "propagate_pairs_intensity", "psf_matrix", "slm_to_camera",
]
