"""Optical grids, SLM phase masks and two-photon input states.

Coordinate conventions
----------------------
Two planes are sampled on the same ``n x n`` index grid but centred
differently:

* SLM (shaping) plane: the optical axis sits on the pixel corner between
  indices ``n/2 - 1`` and ``n/2``.  Pixel ``i`` has coordinate
  ``i - (n - 1)/2`` (half-integers) and spatial inversion maps ``i`` to
  ``n - 1 - i``.  This makes ``theta(r) + theta(-r)`` exact for binary
  gratings whose step is on the axis.
* Camera (Fourier) plane: the DC pixel is index ``n/2`` and pixel ``i`` has
  integer frequency coordinate ``i - n/2``; the anti-symmetric partner of
  ``i`` is ``(n - i) mod n``.

Arrays are indexed ``[row, col]`` = ``[y, x]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

TWO_PI = 2.0 * np.pi


class DimensionError(ValueError):
    """A shape or array size does not fit the grid."""


class SpecMismatchError(ValueError):
    """Two objects were built on different grids."""


@dataclass(frozen=True)
class GridSpec:
    """Sampling of the SLM plane and the Fourier lens that follows it.

    ``focal_eff`` absorbs the magnification of any relay optics; it only
    sets the camera pixel size via :attr:`camera_pitch`.
    """

    n: int
    pitch: float = 8e-6
    wavelength: float = 810e-9
    focal_eff: float = 0.1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise DimensionError(f"n must be an even integer >= 4, got {self.n}")
        for name in ("pitch", "wavelength", "focal_eff"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def camera_pitch(self) -> float:
        """Camera-plane sample spacing for which the PSF kernel is a DFT."""
        return self.focal_eff * self.wavelength / (self.n * self.pitch)

    def slm_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Half-integer pixel coordinates ``(y, x)`` of the SLM plane."""
        c = np.arange(self.n) - (self.n - 1) / 2.0
        return np.meshgrid(c, c, indexing="ij")

    def camera_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer frequency coordinates ``(ky, kx)`` of the camera plane."""
        c = np.arange(self.n) - self.n // 2
        return np.meshgrid(c, c, indexing="ij")


def _check_same(a: GridSpec, b: GridSpec):
    if a != b:
        raise SpecMismatchError(f"grid mismatch: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class ComplexGrid:
    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        if data.shape != (self.spec.n, self.spec.n):
            raise DimensionError(f"data shape {data.shape} != {(self.spec.n,) * 2}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))


@dataclass(frozen=True, eq=False)
class PhaseMask:
    """SLM phase pattern in radians, stored canonically in ``[0, 2*pi)``."""

    spec: GridSpec
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.spec.n, self.spec.n):
            raise DimensionError(f"theta shape {theta.shape} != {(self.spec.n,) * 2}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("phase mask contains non-finite values")
        theta = canonical_phase(theta)
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @classmethod
    def flat(cls, spec: GridSpec) -> "PhaseMask":
        return cls(spec, np.zeros((spec.n, spec.n)))

    def __add__(self, other: "PhaseMask") -> "PhaseMask":
        _check_same(self.spec, other.spec)
        return PhaseMask(self.spec, self.theta + other.theta)

    def __neg__(self) -> "PhaseMask":
        return PhaseMask(self.spec, -self.theta)

    def inverted(self) -> "PhaseMask":
        """The mask seen through ``r -> -r`` about the SLM optical axis."""
        return PhaseMask(self.spec, self.theta[::-1, ::-1])


def canonical_phase(theta: np.ndarray) -> np.ndarray:
    """Wrap into ``[0, 2*pi)``, snapping values within 1e-12 of 2*pi to 0."""
    out = np.mod(theta, TWO_PI)
    out[np.isclose(out, TWO_PI, rtol=0.0, atol=1e-12)] = 0.0
    out[np.abs(out) < 1e-12] = 0.0
    return out


# ---------------------------------------------------------------- envelopes

@dataclass(frozen=True)
class Disk:
    radius_px: float


@dataclass(frozen=True)
class Ring:
    radius_px: float
    thickness_px: float


@dataclass(frozen=True)
class Gaussian:
    waist_px: float


EnvelopeShape = Union[Disk, Ring, Gaussian]


def make_envelope(spec: GridSpec, shape: EnvelopeShape) -> ComplexGrid:
    """Uniform-phase amplitude envelope normalised to unit power.

    ``Ring(r, t)`` keeps ``r - t/2 <= |x| <= r + t/2``; ``Gaussian(w)`` is
    ``exp(-|x|^2 / w^2)`` in amplitude.
    """
    limit = spec.n / 2 - 1
    y, x = spec.slm_coords()
    rad = np.hypot(x, y)
    if isinstance(shape, Disk):
        size = shape.radius_px
        amp = (rad <= shape.radius_px).astype(float)
    elif isinstance(shape, Ring):
        size = shape.radius_px + shape.thickness_px / 2
        if shape.thickness_px <= 0:
            raise DimensionError("ring thickness must be positive")
        lo = shape.radius_px - shape.thickness_px / 2
        amp = ((rad >= lo) & (rad <= size)).astype(float)
    elif isinstance(shape, Gaussian):
        size = shape.waist_px
        amp = np.exp(-(rad ** 2) / shape.waist_px ** 2)
    else:
        raise TypeError(f"unknown envelope shape {shape!r}")
    if not 0 < size <= limit:
        raise DimensionError(f"{shape} does not fit a grid of n={spec.n} (limit {limit} px)")
    total = np.sum(amp ** 2)
    if total == 0:
        raise DimensionError(f"{shape} covers no pixels")
    return ComplexGrid(spec, amp / np.sqrt(total))


def uniform_envelope(spec: GridSpec) -> ComplexGrid:
    """Flat envelope over the whole grid: the sharply peaked F[phi_0] limit."""
    return ComplexGrid(spec, np.full((spec.n, spec.n), 1.0 / spec.n))


# ----------------------------------------------------------------- gratings

def make_grating(spec: GridSpec, period: int, amplitude: float, offset: int = 0,
                 orientation: str = "vertical") -> PhaseMask:
    """Binary square-wave phase grating with duty cycle 1/2.

    Pixel ``u`` (counted from the optical axis, ``u = i - n/2``) takes the
    value ``amplitude`` when ``(u - offset) mod period < period/2`` and 0
    otherwise, so with ``offset = 0`` a step sits exactly on the axis.
    ``orientation="vertical"`` means vertical stripes (phase varies along
    columns); ``"horizontal"`` varies along rows.
    """
    if int(period) != period or period < 2 or period % 2:
        raise ValueError(f"grating period must be an even integer >= 2, got {period}")
    if not 0 <= amplitude <= TWO_PI + 1e-12:
        raise ValueError(f"grating amplitude must lie in [0, 2pi], got {amplitude}")
    if int(offset) != offset:
        raise ValueError(f"grating offset must be an integer number of pixels, got {offset}")
    u = np.arange(spec.n) - spec.n // 2
    line = np.where(np.mod(u - int(offset), int(period)) < period // 2, float(amplitude), 0.0)
    if orientation == "vertical":
        theta = np.broadcast_to(line[None, :], (spec.n, spec.n))
    elif orientation == "horizontal":
        theta = np.broadcast_to(line[:, None], (spec.n, spec.n))
    else:
        raise ValueError(f"orientation must be 'vertical' or 'horizontal', got {orientation!r}")
    return PhaseMask(spec, theta)


# ---------------------------------------------------------- two-photon state

CORRELATED = "correlated"            # NF: phi'(r1 + r2) delta(r1 - r2)
ANTI_CORRELATED = "anti_correlated"  # FF: phi(r1 - r2) delta(r1 + r2)
FULL = "full"


@dataclass(frozen=True, eq=False)
class BiphotonState:
    """Two-photon wavefunction on the SLM plane.

    Delta variants store only the envelope, read as the pair amplitude along
    the support (so ``|envelope|^2`` is the single-photon intensity on the
    SLM).  ``corr_width`` is the Gaussian width of the correlation in pixels;
    0 means an exact single-pixel Kronecker delta.
    """

    spec: GridSpec
    variant: str
    envelope: Optional[ComplexGrid] = None
    tensor: Optional[np.ndarray] = None
    corr_width: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.variant == FULL:
            n2 = self.spec.n ** 2
            t = np.array(self.tensor, dtype=complex)
            if t.shape != (n2, n2):
                raise DimensionError(f"tensor shape {t.shape} != {(n2, n2)}")
            if abs(np.sum(np.abs(t) ** 2) - 1) > 1e-12:
                raise ValueError("full two-photon tensor must be normalised")
            if np.max(np.abs(t - t.T)) > 1e-12:
                raise ValueError("full two-photon tensor must be exchange symmetric")
            t.flags.writeable = False
            object.__setattr__(self, "tensor", t)
        elif self.variant in (CORRELATED, ANTI_CORRELATED):
            if self.envelope is None:
                raise ValueError("delta states need an envelope")
            _check_same(self.spec, self.envelope.spec)
            if abs(self.envelope.power - 1) > 1e-12:
                raise ValueError("envelope must be normalised to unit power")
            if self.corr_width < 0:
                raise ValueError("correlation width must be >= 0")
        else:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def is_delta(self) -> bool:
        return self.variant != FULL

    def to_full4d(self) -> np.ndarray:
        """Dense ``n^2 x n^2`` amplitude ``phi[idx(r1), idx(r2)]``, normalised."""
        if self.variant == FULL:
            return self.tensor
        if "full" not in self._cache:
            self._cache["full"] = _expand_delta(self)
        return self._cache["full"]


def make_biphoton(spec: GridSpec, config: str, envelope: ComplexGrid,
                  corr_width: float = 0.0) -> BiphotonState:
    """Delta-form pair state for the ``"FF"`` or ``"NF"`` configuration.

    FF pairs are anti-correlated on the SLM (``r2 = -r1``); their envelope is
    symmetrised under inversion so the state is exchange symmetric.
    NF pairs are correlated (``r2 = r1``).
    """
    _check_same(spec, envelope.spec)
    config = config.upper()
    if config == "FF":
        sym = 0.5 * (envelope.data + envelope.data[::-1, ::-1])
        sym = sym / np.sqrt(np.sum(np.abs(sym) ** 2))
        return BiphotonState(spec, ANTI_CORRELATED, ComplexGrid(spec, sym), corr_width=corr_width)
    if config == "NF":
        return BiphotonState(spec, CORRELATED, envelope, corr_width=corr_width)
    raise ValueError(f"config must be 'FF' or 'NF', got {config!r}")


def _midpoint(env: np.ndarray, twice_y: np.ndarray, twice_x: np.ndarray) -> np.ndarray:
    # env sampled at index (twice/2), averaging neighbours at half-integers
    n = env.shape[0]
    out = np.zeros(twice_y.shape, dtype=complex)
    ys = [np.floor(twice_y / 2).astype(int), np.ceil(twice_y / 2).astype(int)]
    xs = [np.floor(twice_x / 2).astype(int), np.ceil(twice_x / 2).astype(int)]
    for yy in ys:
        for xx in xs:
            ok = (yy >= 0) & (yy < n) & (xx >= 0) & (xx < n)
            out[ok] += env[yy[ok], xx[ok]]
    return out / 4.0


def _expand_delta(state: BiphotonState) -> np.ndarray:
    n = state.spec.n
    env = state.envelope.data
    iy, ix = np.divmod(np.arange(n * n), n)
    y1, y2 = iy[:, None], iy[None, :]
    x1, x2 = ix[:, None], ix[None, :]
    if state.variant == CORRELATED:
        # centre index r+ = (r1 + r2)/2, offset r1 - r2
        ty, tx = y1 + y2, x1 + x2
        dy, dx = y1 - y2, x1 - x2
    else:
        # r2 = -r1 maps index i -> n-1-i; centre index (r1 - r2)/2 in coordinates
        ty, tx = y1 - y2 + (n - 1), x1 - x2 + (n - 1)
        dy, dx = y1 + y2 - (n - 1), x1 + x2 - (n - 1)
    sigma = state.corr_width
    if sigma == 0:
        phi = np.where((dy == 0) & (dx == 0), _midpoint(env, ty, tx), 0.0)
    else:
        # amplitude width chosen so |g|^2 has standard deviation sigma
        g = np.exp(-(dy ** 2 + dx ** 2) / (4.0 * sigma ** 2))
        phi = _midpoint(env, ty, tx) * g
    phi = phi / np.sqrt(np.sum(np.abs(phi) ** 2))
    phi.flags.writeable = False
    return phi
