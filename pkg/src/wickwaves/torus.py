"""Discrete torus geometry, spectral transforms and dealiased products.

Conventions (fixed once, used by every other module):

* The torus has side length ``L`` and is realized as the centered square
  ``[-L/2, L/2)^2`` of volume ``L**2``.  Grid points are
  ``x_j = -L/2 + j*h`` with ``h = L/M``.
* A field is ``u(x) = sum_n c(n) exp(2*pi*i n.x)`` over the mode lattice
  ``n = k/L``, ``k`` integer pairs.  Modes with ``|n| <= K`` (Euclidean
  ball) are active.
* Parseval: ``int |u|^2 dx = L**2 * sum |c(n)|^2``; the discrete rectangle
  rule on the M x M grid is exact for band-limited integrands.
* Derivatives use the scaled gradient ``D = grad / (2*pi)`` whose Fourier
  symbol is ``i*n``, so ``-Delta`` acts as multiplication by ``|n|^2``.
  All dispersion relations, Sobolev weights and weight commutators use
  this scaling consistently.

Coefficients are stored on the centered square ``k in [-kmax, kmax]^2``
with ``kmax = floor(K*L)``; index ``(i, j)`` holds mode
``k = (i - kmax, j - kmax)``.  Entries outside the ball ``|k| <= K*L``
are identically zero.
"""

from __future__ import annotations

import io
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"WWF1"
_SNAPSHOT_VERSION = 1


class GridMismatchError(ValueError):
    """Two fields living on different grids were combined."""


@dataclass(frozen=True)
class TorusGrid:
    """Geometry of the discrete torus: side L, M points per axis, cutoff K."""

    L: float
    M: int
    K: float

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("torus side L must be positive")
        if self.M <= 0 or self.M % 2 != 0:
            raise ValueError("grid size M must be a positive even integer")
        if self.K < 0:
            raise ValueError("cutoff K must be nonnegative")
        if self.M < 4 * int(np.ceil(self.K * self.L)) + 2:
            raise ValueError(
                "grid too coarse: need M >= 4*ceil(K*L) + 2 for dealiasing room"
            )

    @property
    def h(self):
        """Spatial step."""
        return self.L / self.M

    @property
    def kmax(self):
        """Largest integer mode index along one axis."""
        return int(np.floor(self.K * self.L + 1e-9))

    @property
    def nk(self):
        """Side of the centered coefficient array."""
        return 2 * self.kmax + 1

    @property
    def volume(self):
        return self.L**2

    def axes_k(self):
        """Integer mode indices along one axis, centered."""
        return np.arange(-self.kmax, self.kmax + 1)

    def mode_n(self):
        """(n1, n2) frequency meshgrids, shape (nk, nk)."""
        k = self.axes_k()
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        return k1 / self.L, k2 / self.L

    def mode_nsq(self):
        """|n|^2 per stored mode, shape (nk, nk)."""
        n1, n2 = self.mode_n()
        return n1**2 + n2**2

    def ball_mask(self, radius=None):
        """Boolean mask of modes with |n| <= radius (default: the cutoff K)."""
        r = self.K if radius is None else radius
        if r < 0:
            raise ValueError("radius must be nonnegative")
        return self.mode_nsq() <= r**2 * (1 + 1e-12)

    def grid_x(self):
        """(x1, x2) coordinate meshgrids of the physical grid."""
        x = -self.L / 2 + self.h * np.arange(self.M)
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        return x1, x2

    def n_active(self):
        """Number of active modes."""
        return int(np.count_nonzero(self.ball_mask()))


def _hermitian_flip(coeffs):
    """conj(c(-k)) in the centered layout: reverse both mode axes."""
    return np.conj(coeffs[..., ::-1, ::-1])


def hermitian_symmetrize(coeffs):
    return 0.5 * (coeffs + _hermitian_flip(coeffs))


def is_hermitian(coeffs, tol=0.0):
    d = np.max(np.abs(coeffs - _hermitian_flip(coeffs))) if coeffs.size else 0.0
    return d <= tol


@dataclass
class FourierField:
    """Band-limited field on a torus, stored as centered Fourier coefficients."""

    grid: TorusGrid
    coeffs: np.ndarray
    real: bool = True

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.grid.nk, self.grid.nk):
            raise ValueError(
                f"coefficient array must have shape {(self.grid.nk, self.grid.nk)}"
            )
        c = np.where(self.grid.ball_mask(), c, 0.0)
        if self.real:
            c = hermitian_symmetrize(c)
        self.coeffs = c

    def copy(self):
        return FourierField(self.grid, self.coeffs.copy(), self.real)

    def l2_norm(self):
        """Spatial L^2 norm, by Parseval."""
        return float(self.grid.L * np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def __add__(self, other):
        _check_same_grid(self, other)
        return FourierField(self.grid, self.coeffs + other.coeffs,
                            self.real and other.real)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return FourierField(self.grid, self.coeffs - other.coeffs,
                            self.real and other.real)

    def __mul__(self, scalar):
        return FourierField(self.grid, self.coeffs * scalar,
                            self.real and np.isrealobj(np.asarray(scalar)))

    __rmul__ = __mul__


def zero_field(grid, real=True):
    return FourierField(grid, np.zeros((grid.nk, grid.nk), dtype=np.complex128), real)


def _check_same_grid(f, g):
    if f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")


# ---------------------------------------------------------------------------
# transforms

def to_physical_array(grid, coeffs):
    """Evaluate coefficient arrays (..., nk, nk) on the M x M grid.

    The centering of the grid at -L/2 contributes the exact phase
    (-1)**(k1+k2) per mode.
    """
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    kmax, M = grid.kmax, grid.M
    k = grid.axes_k()
    phase = np.where((k[:, None] + k[None, :]) % 2 == 0, 1.0, -1.0)
    big = np.zeros(coeffs.shape[:-2] + (M, M), dtype=np.complex128)
    idx = np.arange(-kmax, kmax + 1) % M
    big[..., np.ix_(idx, idx)[0], np.ix_(idx, idx)[1]] = coeffs * phase
    return np.fft.ifft2(big) * M**2


def from_physical_array(grid, samples, real=True):
    """Inverse of :func:`to_physical_array`; truncates to the active band."""
    samples = np.asarray(samples, dtype=np.complex128)
    M, kmax = grid.M, grid.kmax
    if samples.shape[-2:] != (M, M):
        raise GridMismatchError("sample array does not match the grid")
    spec = np.fft.fft2(samples) / M**2
    idx = np.arange(-kmax, kmax + 1) % M
    coeffs = spec[..., np.ix_(idx, idx)[0], np.ix_(idx, idx)[1]]
    k = grid.axes_k()
    phase = np.where((k[:, None] + k[None, :]) % 2 == 0, 1.0, -1.0)
    coeffs = coeffs * phase
    coeffs = np.where(grid.ball_mask(), coeffs, 0.0)
    if real:
        coeffs = hermitian_symmetrize(coeffs)
    return coeffs


def to_physical(f: FourierField):
    """Physical samples on the M x M grid; real-valued when f.real."""
    u = to_physical_array(f.grid, f.coeffs)
    if f.real:
        return u.real
    return u


def from_physical(grid, samples, real=True):
    return FourierField(grid, from_physical_array(grid, samples, real=real), real)


def project(f: FourierField, radius):
    """Sharp Fourier projection P_radius onto the ball |n| <= radius."""
    if radius < 0:
        raise ValueError("projection radius must be nonnegative")
    mask = f.grid.ball_mask(radius)
    return FourierField(f.grid, np.where(mask, f.coeffs, 0.0), f.real)


def project_array(grid, coeffs, radius):
    mask = grid.ball_mask(radius)
    return np.where(mask, coeffs, 0.0)


# ---------------------------------------------------------------------------
# dealiased products

_pad_cache: dict = {}
_pad_lock = threading.Lock()


def _pad_indices(kmax, P):
    with _pad_lock:
        key = (kmax, P)
        if key not in _pad_cache:
            idx = np.arange(-kmax, kmax + 1) % P
            _pad_cache[key] = np.ix_(idx, idx)
        return _pad_cache[key]


def _product_coeffs(grid, coeff_list, out_kmax):
    """Exact spectral product of band-limited coefficient arrays.

    Zero-pads to a grid large enough that no aliasing occurs anywhere in
    the product spectrum, multiplies pointwise, and transforms back.
    Supports batched inputs (..., nk, nk); output is truncated to the
    centered square [-out_kmax, out_kmax]^2.
    """
    j = len(coeff_list)
    kmax = grid.kmax
    # Per-axis product bandwidth is j*kmax; P > 2*j*kmax makes the padded
    # spectrum exact for every output bin.
    P = 2 * j * kmax + 2
    P = int(2 ** np.ceil(np.log2(max(P, 4))))  # power of two for fast FFTs
    ix = _pad_indices(kmax, P)
    phys = None
    for c in coeff_list:
        big = np.zeros(c.shape[:-2] + (P, P), dtype=np.complex128)
        big[..., ix[0], ix[1]] = c
        u = np.fft.ifft2(big) * P**2
        phys = u if phys is None else phys * u
    spec = np.fft.fft2(phys) / P**2
    out_ix = _pad_indices(out_kmax, P)
    return spec[..., out_ix[0], out_ix[1]]


def dealiased_product_arrays(grid, coeff_list, output_radius=None, real=True):
    """Product of several coefficient arrays, truncated to |n| <= output_radius."""
    r = grid.K if output_radius is None else output_radius
    out_kmax = grid.kmax
    prod = _product_coeffs(grid, coeff_list, out_kmax)
    mask = grid.ball_mask(r)
    prod = np.where(mask, prod, 0.0)
    if real:
        prod = hermitian_symmetrize(prod)
    return prod


def dealiased_power(f: FourierField, j, output_radius=None):
    """Exact (alias-free) spectral power f**j for j in {2, 3, 4}."""
    if j not in (2, 3, 4):
        raise ValueError("power j must be one of 2, 3, 4")
    c = dealiased_product_arrays(f.grid, [f.coeffs] * j, output_radius, real=f.real)
    return FourierField(f.grid, c, f.real)


def dealiased_product(fields, output_radius=None):
    """Exact spectral product of 2..4 fields on a common grid."""
    if not 2 <= len(fields) <= 4:
        raise ValueError("product supports 2 to 4 factors")
    grid = fields[0].grid
    for g in fields[1:]:
        _check_same_grid(fields[0], g)
    real = all(f.real for f in fields)
    c = dealiased_product_arrays(grid, [f.coeffs for f in fields],
                                 output_radius, real=real)
    return FourierField(grid, c, real)


def convolution_power_oracle(f: FourierField, j, output_radius=None):
    """Brute-force direct coefficient convolution; test oracle for powers."""
    from scipy.signal import convolve2d

    grid = f.grid
    kmax = grid.kmax
    acc = f.coeffs
    for _ in range(j - 1):
        acc = convolve2d(acc, f.coeffs, mode="full")
    # acc covers k in [-j*kmax, j*kmax]^2; extract the centered window
    size = j * kmax
    out = acc[size - kmax:size + kmax + 1, size - kmax:size + kmax + 1]
    r = grid.K if output_radius is None else output_radius
    out = np.where(grid.ball_mask(r), out, 0.0)
    return FourierField(grid, out, f.real)


# ---------------------------------------------------------------------------
# Littlewood-Paley partition

def _bump_transition(t):
    """Smooth monotone step: 0 for t <= 0, 1 for t >= 1, C^inf in between."""
    t = np.asarray(t, dtype=float)
    def psi(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out
    a, b = psi(t), psi(1.0 - t)
    return a / (a + b)


def chi_plateau(r):
    """Radial cutoff: 1 on |xi| <= 3/4, support in |xi| < 4/3.

    chi(r) = step((4/3 - r) / (4/3 - 3/4)); the step is the standard
    exp(-1/t) mollifier ratio, so the formula is reproducible bit-exactly.
    """
    r = np.abs(np.asarray(r, dtype=float))
    return _bump_transition((4.0 / 3.0 - r) / (4.0 / 3.0 - 3.0 / 4.0))


class LPPartition:
    """Dyadic Littlewood-Paley partition sigma_k, k = -1, 0, ..., k_max.

    sigma_{-1}(xi) = chi(|xi|) and sigma_k(xi) = chi(|xi|/2^(k+1)) -
    chi(|xi|/2^k), so sigma_k is supported on the annulus
    3/4 * 2^k <= |xi| <= 8/3 * 2^k and the sum telescopes to
    chi(|xi| / 2^(k_max+1)) = 1 on the active ball.
    """

    def __init__(self, K):
        if K < 0:
            raise ValueError("cutoff must be nonnegative")
        self.K = K
        j = 0
        while 0.75 * 2.0 ** (j + 1) < K:
            j += 1
        self.k_max = j

    def sigma(self, k, r):
        """Evaluate sigma_k at radius r (array ok)."""
        if k < -1 or k > self.k_max:
            raise ValueError("block index out of range")
        r = np.abs(np.asarray(r, dtype=float))
        if k == -1:
            return chi_plateau(r)
        return chi_plateau(r / 2.0 ** (k + 1)) - chi_plateau(r / 2.0**k)

    def blocks(self):
        return range(-1, self.k_max + 1)


_block_cache: dict = {}
_block_lock = threading.Lock()


def lp_multiplier(grid, part, k):
    """sigma_k evaluated on the grid's mode lattice (cached)."""
    key = (grid, part.K, k)
    with _block_lock:
        if key not in _block_cache:
            r = np.sqrt(grid.mode_nsq())
            _block_cache[key] = part.sigma(k, r)
        return _block_cache[key]


def lp_block(f: FourierField, k, part: LPPartition):
    """Littlewood-Paley block Delta_k f."""
    mult = lp_multiplier(f.grid, part, k)
    return FourierField(f.grid, f.coeffs * mult, f.real)


def lp_block_array(grid, coeffs, k, part):
    return coeffs * lp_multiplier(grid, part, k)


# ---------------------------------------------------------------------------
# snapshot format
#
# header: magic "WWF1" (4 bytes), version u32, endianness marker u32
# (0x01020304), L f64, M u32, K f64, reality u8, pad 3 bytes; then
# nk*nk little-endian (f64, f64) coefficient pairs in row-major mode order.

def write_snapshot(f: FourierField, fh):
    own = isinstance(fh, (str, bytes))
    stream = open(fh, "wb") if own else fh
    try:
        stream.write(_MAGIC)
        stream.write(struct.pack("<II", _SNAPSHOT_VERSION, 0x01020304))
        stream.write(struct.pack("<dId", f.grid.L, f.grid.M, f.grid.K))
        stream.write(struct.pack("<B3x", 1 if f.real else 0))
        flat = np.ascontiguousarray(f.coeffs, dtype="<c16")
        stream.write(flat.tobytes())
    finally:
        if own:
            stream.close()


def read_snapshot(fh):
    own = isinstance(fh, (str, bytes))
    stream = open(fh, "rb") if own else fh
    try:
        magic = stream.read(4)
        if magic != _MAGIC:
            raise ValueError("not a field snapshot (bad magic)")
        version, endmark = struct.unpack("<II", stream.read(8))
        if version != _SNAPSHOT_VERSION or endmark != 0x01020304:
            raise ValueError("unsupported snapshot version or endianness")
        L, M, K = struct.unpack("<dId", stream.read(20))
        (real_flag,) = struct.unpack("<B3x", stream.read(4))
        grid = TorusGrid(L, M, K)
        n = grid.nk
        raw = stream.read(16 * n * n)
        coeffs = np.frombuffer(raw, dtype="<c16").reshape(n, n).astype(np.complex128)
        return FourierField(grid, coeffs, bool(real_flag))
    finally:
        if own:
            stream.close()


def snapshot_bytes(f: FourierField):
    buf = io.BytesIO()
    write_snapshot(f, buf)
    return buf.getvalue()
