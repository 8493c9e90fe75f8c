"""Sampling the truncated quartic Gibbs measure.

The target density over band-limited fields u = sum c(n) e_n is

    dmu ~ exp(-S(u)),   S(u) = (1/2) L^2 sum_n (m^2+|n|^2) |c(n)|^2
                               + q * int (u^4 - 6 a u^2 + 3 a^2) dx

for real fields (Hermitian coefficients), and for complex fields

    S(u) = L^2 sum_n (m^2+|n|^2) |c(n)|^2
           + q * int (|u|^4 - 4 a |u|^2 + 2 a^2) dx.

Samplers: Metropolis-adjusted Langevin on the packed real degrees of
freedom (exact accept/reject, so the chain targets exp(-S) without
discretization bias), a brute-force rejection oracle for tiny mode sets,
and an exponential-Euler Langevin scheme built on the rough/smooth split
u = Z + phi with an exactly-stationary OU update for Z.

MALA may use a diagonal, position-independent preconditioner (per-mode
step scaling 1/(L^2 omega^2)); the Metropolis correction uses the matching
Gaussian proposal density, so detailed balance is exact either way.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from .besov import FLAT, WeightSpec
from .gaussian import (
    RngStream,
    _canonical_half_mask,
    _hermitian_gaussian_coeffs,
    sample_complex_gff_coeffs,
    sample_gff_coeffs,
    wick_constant_continuum,
)
from .torus import FourierField, TorusGrid, _pad_indices, hermitian_symmetrize


REAL_FIELD = "real"
COMPLEX_FIELD = "complex"


@dataclass(frozen=True)
class MeasureSpec:
    """Parameters pinning down the finite-dimensional Gibbs density.

    quartic_coeff defaults to lambda/4 for real fields (the Hamiltonian of
    the cubic wave flow) and lambda/2 for complex fields (the Hamiltonian
    of the cubic Schrodinger flow); wick_a defaults to the full-space
    constant pi*log((m^2+K^2)/m^2).
    """

    grid: TorusGrid
    m: float = 1.0
    lam: float = 0.0
    quartic_coeff: float = None
    wick_a: float = None
    field_type: str = REAL_FIELD

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("mass m must be positive")
        if self.lam < 0:
            raise ValueError("coupling lambda must be >= 0 (defocusing)")
        if self.field_type not in (REAL_FIELD, COMPLEX_FIELD):
            raise ValueError("field_type must be 'real' or 'complex'")
        if self.quartic_coeff is not None and self.quartic_coeff < 0:
            raise ValueError("quartic coefficient must be >= 0")

    @property
    def q(self):
        if self.quartic_coeff is not None:
            return self.quartic_coeff
        return self.lam / 4.0 if self.field_type == REAL_FIELD else self.lam / 2.0

    @property
    def a(self):
        if self.wick_a is not None:
            return self.wick_a
        return wick_constant_continuum(self.grid.K, self.m)

    def manifest(self):
        return {
            "grid.L": self.grid.L, "grid.M": self.grid.M, "grid.K": self.grid.K,
            "measure.m": self.m, "measure.lambda": self.lam,
            "measure.quartic_coeff": self.q, "measure.wick_a": self.a,
            "measure.field_type": self.field_type,
        }

    def spec_hash(self):
        items = sorted(self.manifest().items())
        text = ";".join("%s=%.17g" % (k, v) if isinstance(v, float)
                        else "%s=%s" % (k, v) for k, v in items)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Degree-of-freedom packing (Hermitian half-lattice for real fields, all
# active modes for complex ones) and cached grid tables.

_layout_cache: dict = {}
_layout_lock = threading.Lock()


class _DofLayout:
    def __init__(self, grid, field_type):
        nk = grid.nk
        ball = grid.ball_mask()
        omega_sq = grid.mode_nsq()
        self.grid = grid
        self.field_type = field_type
        self.center = grid.kmax * nk + grid.kmax
        if field_type == REAL_FIELD:
            half = _canonical_half_mask(grid)
            self.half_flat = np.flatnonzero(half.ravel())
            self.n_pair = len(self.half_flat)
            self.dim = 1 + 2 * self.n_pair
            nsq_half = omega_sq.ravel()[self.half_flat]
            # |n|^2 per dof; the Gaussian curvature is volume*(m^2+|n|^2)
            # times 2 for conjugate-pair dofs
            self._nsq_dof = np.concatenate(([0.0], np.repeat(nsq_half, 2)))
            self._pair_factor = np.concatenate(
                ([1.0], np.full(2 * self.n_pair, 2.0)))
        else:
            self.active_flat = np.flatnonzero(ball.ravel())
            self.n_active = len(self.active_flat)
            self.dim = 2 * self.n_active
            nsq_act = omega_sq.ravel()[self.active_flat]
            self._nsq_dof = np.concatenate((nsq_act, nsq_act))
            self._pair_factor = np.full(self.dim, 2.0)
        self._curv_cache = {}
        # alias-free physical grid for quartic/cubic evaluation:
        # products of degree 4 of a kmax-band field need P > 4*kmax
        p = 4 * grid.kmax + 2
        self.P = int(sfft.next_fast_len(max(p, 4)))
        self.pad_ix = _pad_indices(grid.kmax, self.P)

    def curvature(self, m):
        """Per-dof curvature of the Gaussian part of the action."""
        if m not in self._curv_cache:
            self._curv_cache[m] = (self._pair_factor * self.grid.volume
                                   * (m**2 + self._nsq_dof))
        return self._curv_cache[m]

    # -- packing -----------------------------------------------------------
    def pack(self, coeffs):
        nk = self.grid.nk
        flat = coeffs.reshape(coeffs.shape[:-2] + (nk * nk,))
        if self.field_type == REAL_FIELD:
            ch = flat[..., self.half_flat]
            return np.concatenate((
                flat[..., self.center:self.center + 1].real,
                ch.real, ch.imag), axis=-1)
        ca = flat[..., self.active_flat]
        return np.concatenate((ca.real, ca.imag), axis=-1)

    def unpack(self, dofs):
        nk = self.grid.nk
        flat = np.zeros(dofs.shape[:-1] + (nk * nk,), dtype=np.complex128)
        if self.field_type == REAL_FIELD:
            n = self.n_pair
            flat[..., self.half_flat] = dofs[..., 1:1 + n] + 1j * dofs[..., 1 + n:]
            c = flat.reshape(dofs.shape[:-1] + (nk, nk))
            c = c + np.conj(c[..., ::-1, ::-1])
            c[..., self.grid.kmax, self.grid.kmax] = dofs[..., 0]
            return c
        n = self.n_active
        flat[..., self.active_flat] = dofs[..., :n] + 1j * dofs[..., n:]
        return flat.reshape(dofs.shape[:-1] + (nk, nk))

    def pack_gradient(self, g_coeffs):
        """Pack a complex gradient array (mirrored over the lattice) into
        per-dof derivatives; see action_gradient for the conventions."""
        nk = self.grid.nk
        flat = g_coeffs.reshape(g_coeffs.shape[:-2] + (nk * nk,))
        if self.field_type == REAL_FIELD:
            gh = flat[..., self.half_flat]
            return np.concatenate((
                flat[..., self.center:self.center + 1].real,
                gh.real, gh.imag), axis=-1)
        ga = flat[..., self.active_flat]
        return np.concatenate((ga.real, ga.imag), axis=-1)


def _layout(grid, field_type):
    key = (grid, field_type)
    with _layout_lock:
        if key not in _layout_cache:
            _layout_cache[key] = _DofLayout(grid, field_type)
        return _layout_cache[key]


def _padded_physical(lay, coeffs):
    big = np.zeros(coeffs.shape[:-2] + (lay.P, lay.P), dtype=np.complex128)
    big[..., lay.pad_ix[0], lay.pad_ix[1]] = coeffs
    return sfft.ifft2(big) * lay.P**2


def _band_coeffs(lay, samples):
    spec = sfft.fft2(samples) / lay.P**2
    out = spec[..., lay.pad_ix[0], lay.pad_ix[1]]
    return np.where(lay.grid.ball_mask(), out, 0.0)


# ---------------------------------------------------------------------------
# Action and gradient

def quartic_integral(spec: MeasureSpec, coeffs):
    """int (u^4 - 6a u^2 + 3a^2) dx (real) or the |u|^4 analogue (complex),
    exact via alias-free quadrature; batched over leading axes."""
    lay = _layout(spec.grid, spec.field_type)
    a = spec.a
    z = _padded_physical(lay, coeffs)
    cell = (spec.grid.L / lay.P) ** 2
    if spec.field_type == REAL_FIELD:
        z2 = np.ascontiguousarray(z.real)
        z2 *= z2
        dens = z2 * (z2 - 6.0 * a) + 3.0 * a * a
    else:
        zsq = z.real * z.real + z.imag * z.imag
        dens = zsq * (zsq - 4.0 * a) + 2.0 * a * a
    return np.sum(dens, axis=(-2, -1)) * cell


def action(u, spec: MeasureSpec):
    """S(u), the negative log-density up to a constant."""
    coeffs = u.coeffs if isinstance(u, FourierField) else np.asarray(u)
    return _action_and_gradient(spec, coeffs, want_gradient=False)[0]


def _action_and_gradient(spec, coeffs, want_gradient=True):
    """Returns (S, grad) with S batched over leading axes and grad packed
    per dof (or None).  One padded FFT round trip serves both the quartic
    integral and the cubic gradient term."""
    grid = spec.grid
    lay = _layout(grid, spec.field_type)
    a, q = spec.a, spec.q
    osq = grid.mode_nsq() + spec.m**2
    quad = 0.5 * grid.volume * np.sum(osq * np.abs(coeffs) ** 2, axis=(-2, -1))
    if spec.field_type == COMPLEX_FIELD:
        quad = 2.0 * quad

    z = _padded_physical(lay, coeffs)
    cell = (grid.L / lay.P) ** 2
    if spec.field_type == REAL_FIELD:
        z = np.ascontiguousarray(z.real)
        z2 = z * z
        w = z2 * (z2 - 6.0 * a) + 3.0 * a * a
        cubic = z * (z2 - 3.0 * a)
    else:
        zsq = z.real * z.real + z.imag * z.imag
        w = zsq * (zsq - 4.0 * a) + 2.0 * a * a
        cubic = (zsq - 2.0 * a) * z
    s = quad + q * np.sum(w, axis=(-2, -1)) * cell
    if not want_gradient:
        return s, None
    d = _band_coeffs(lay, cubic)
    if spec.field_type == REAL_FIELD:
        d = hermitian_symmetrize(d)
        g = 2.0 * grid.volume * (osq * coeffs + 4.0 * q * d)
        g05 = grid.volume * (osq * coeffs + 4.0 * q * d)
        g = np.where(grid.ball_mask(), g, 0.0)
        g[..., grid.kmax, grid.kmax] = g05[..., grid.kmax, grid.kmax]
    else:
        g = 2.0 * grid.volume * (osq * coeffs + 2.0 * q * d)
        g = np.where(grid.ball_mask(), g, 0.0)
    return s, lay.pack_gradient(g)


def action_gradient(u, spec: MeasureSpec):
    """Gradient of S with respect to the packed real degrees of freedom."""
    coeffs = u.coeffs if isinstance(u, FourierField) else np.asarray(u)
    return _action_and_gradient(spec, coeffs)[1]


def pack_dofs(spec, coeffs):
    return _layout(spec.grid, spec.field_type).pack(coeffs)


def unpack_dofs(spec, dofs):
    return _layout(spec.grid, spec.field_type).unpack(dofs)


# ---------------------------------------------------------------------------
# MALA

@dataclass
class ChainState:
    """State of a batch of MALA chains over the packed dofs."""

    spec: MeasureSpec
    dofs: np.ndarray                 # shape (batch, dim)
    rng: RngStream
    step_count: int = 0
    accepted: int = 0
    proposed: int = 0
    overflow: int = 0
    _gen: object = field(default=None, repr=False)
    _cache: tuple = field(default=None, repr=False)   # (S, grad) at dofs

    @property
    def batch(self):
        return self.dofs.shape[0]

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposed if self.proposed else 0.0

    def generator(self):
        if self._gen is None:
            self._gen = self.rng.generator()
        return self._gen

    def coeffs(self):
        return unpack_dofs(self.spec, self.dofs)

    def phi(self, index=0):
        """The current sample of one chain as a field."""
        return FourierField(self.spec.grid, self.coeffs()[index],
                            real=self.spec.field_type == REAL_FIELD)


def _hartree_start(spec: MeasureSpec):
    """Self-consistent (magnetization, fluctuation mass) for a warm start.

    Minimizes the Gaussian-averaged action over a constant shift v with
    fluctuations of dressed mass M, iterating
        real:     v^2 = 3a - 3 sigma^2 - m^2 / (4q),
                  M^2 = m^2 + 12 q (v^2 + sigma^2 - a)
        complex:  v^2 = 2a - 2 sigma^2 - m^2 / (2q),
                  M^2 = m^2 + q (4 v^2 + 8 sigma^2 - 4a)
    with sigma^2 the dressed one-point variance of the nonzero modes.
    Only used to initialize chains, so modest accuracy suffices.
    """
    grid, a, q, m = spec.grid, spec.a, spec.q, spec.m
    nsq = grid.mode_nsq()
    mask = grid.ball_mask().copy()
    mask[grid.kmax, grid.kmax] = False
    nsq_act = nsq[mask]

    def sigma2(M2):
        return float(np.sum(1.0 / (grid.L**2 * (M2 + nsq_act))))

    real = spec.field_type == REAL_FIELD
    v2, M2 = (3.0 if real else 2.0) * a, m * m
    for _ in range(200):
        s2 = sigma2(max(M2, 1e-3))
        if real:
            v2_new = max(3.0 * a - 3.0 * s2 - m * m / (4.0 * q), 0.0)
            M2_new = m * m + 12.0 * q * (v2_new + s2 - a)
        else:
            v2_new = max(2.0 * a - 2.0 * s2 - m * m / (2.0 * q), 0.0)
            M2_new = m * m + q * (4.0 * v2_new + 8.0 * s2 - 4.0 * a)
        v2 = 0.5 * v2 + 0.5 * v2_new
        M2 = 0.5 * M2 + 0.5 * max(M2_new, 1e-3)
    return math.sqrt(v2), math.sqrt(max(M2, 1e-3))


def init_chain(spec: MeasureSpec, rng: RngStream, batch=1, start=None):
    """Chains started from the free-field measure (a good overdispersed
    start: the target is a density against exactly that Gaussian).

    In the strongly magnetized regime the symmetric start is pathological:
    the field first breaks into domains of both signs and coarsening out
    the domain walls takes thousands of steps.  When the mean-field well
    depth is large compared to the thermal scale the zero mode is shifted
    to the well bottom; the sign-flip move in the samplers restores the
    branch symmetry, so the stationary law is unchanged.
    """
    if start is not None:
        dofs = pack_dofs(spec, np.asarray(start, dtype=np.complex128))
        if dofs.ndim == 1:
            dofs = np.broadcast_to(dofs, (batch, dofs.size)).copy()
        return ChainState(spec=spec, dofs=dofs, rng=rng.child(1))
    real = spec.field_type == REAL_FIELD
    depth_coeff = 9.0 if real else 4.0
    well_depth = spec.q * spec.grid.volume * depth_coeff * spec.a**2
    deep = spec.q > 0.0 and spec.a > 0.0 and well_depth > 5.0
    m_start, shift = spec.m, 0.0
    if deep:
        shift, m_start = _hartree_start(spec)
    if real:
        c = sample_gff_coeffs(spec.grid, m_start, rng.child(0), size=batch)
    else:
        c = sample_complex_gff_coeffs(spec.grid, m_start, rng.child(0),
                                      size=batch)
    if deep:
        c[..., spec.grid.kmax, spec.grid.kmax] += shift
    return ChainState(spec=spec, dofs=pack_dofs(spec, c), rng=rng.child(1))


def _tamed_drift(raw, dt, amat, tame_sd):
    """Cap each drift component at tame_sd proposal standard deviations.

    Plain Langevin drift overshoots catastrophically from the quartic
    tails (the chain parks at a large excursion and rejects everything);
    taming bounds the drift while the Metropolis ratio below uses the
    same tamed mean in both directions, so the target is still exact.
    """
    cap = tame_sd * np.sqrt(2.0 * dt * amat)
    return raw / (1.0 + np.abs(raw) / cap)


def mala_step(state: ChainState, dt, precondition=True, tame_sd=5.0):
    """One Metropolis-adjusted Langevin step for every chain in the batch.

    Proposal x' = x - tame(dt*A*grad(S)) + sqrt(2*dt*A)*xi with A the
    diagonal preconditioner (identity when precondition=False); accept
    with the exact Metropolis ratio for the Gaussian proposal density
    around the tamed mean.  Non-finite proposals are rejected and counted
    in state.overflow.
    """
    if dt <= 0:
        raise ValueError("step size dt must be positive")
    spec = state.spec
    lay = _layout(spec.grid, spec.field_type)
    amat = (1.0 / lay.curvature(spec.m) if precondition
            else np.ones(lay.dim))
    gen = state.generator()
    x = state.dofs
    if state._cache is None:
        s0, g0 = _action_and_gradient(spec, unpack_dofs(spec, x))
        state._cache = (s0, g0)
    s0, g0 = state._cache

    noise = gen.standard_normal(x.shape)
    mean_fwd = x - _tamed_drift(dt * amat * g0, dt, amat, tame_sd)
    prop = mean_fwd + np.sqrt(2.0 * dt * amat) * noise
    s1, g1 = _action_and_gradient(spec, unpack_dofs(spec, prop))
    mean_back = prop - _tamed_drift(dt * amat * g1, dt, amat, tame_sd)
    log_q_fwd = -np.sum(noise**2, axis=-1) / 2.0
    log_q_back = -np.sum((x - mean_back) ** 2 / (2.0 * dt * amat) / 2.0,
                         axis=-1)
    log_alpha = s0 - s1 + log_q_back - log_q_fwd

    finite = np.isfinite(s1) & np.all(np.isfinite(g1), axis=-1)
    log_alpha = np.where(finite, log_alpha, -np.inf)
    accept = np.log(gen.uniform(size=log_alpha.shape)) < log_alpha

    state.dofs = np.where(accept[..., None], prop, x)
    s_new = np.where(accept, s1, s0)
    g_new = np.where(accept[..., None], g1, g0)
    state._cache = (s_new, g_new)
    state.step_count += 1
    state.proposed += int(accept.size)
    state.accepted += int(np.sum(accept))
    state.overflow += int(np.sum(~finite))
    return state


def tune_step_size(state: ChainState, dt, steps=60, target=0.574,
                   precondition=True):
    """Crude dual-averaging-free tuner: scale dt toward the target
    acceptance during burn-in, then freeze.  Returns the tuned dt."""
    for _ in range(steps):
        before = state.accepted
        mala_step(state, dt, precondition)
        rate = (state.accepted - before) / state.batch
        dt *= math.exp(0.3 * (rate - target))
    return dt


def hmc_step(state: ChainState, eps, n_leap=10, flip_prob=0.5):
    """One Hamiltonian Monte Carlo step for every chain in the batch.

    Momenta are drawn from N(0, M) with the diagonal mass matrix
    M = curvature of the Gaussian part, which makes every mode of the
    quadratic action a unit-frequency oscillator: the leapfrog trajectory
    then moves all length scales coherently, and the chain decorrelates
    in a handful of steps where Langevin diffusion needs thousands.  The
    Metropolis correction on the total energy keeps the target exact.

    The action is even (the quartic density is a polynomial in u^2 or
    |u|^2), so a global sign flip is an exact symmetry; applying it with
    probability flip_prob after each trajectory equalizes the weights of
    the two magnetization branches for odd observables at no cost.
    """
    if eps <= 0:
        raise ValueError("leapfrog step eps must be positive")
    spec = state.spec
    lay = _layout(spec.grid, spec.field_type)
    mass = lay.curvature(spec.m)
    gen = state.generator()
    x = state.dofs
    if state._cache is None:
        state._cache = _action_and_gradient(spec, unpack_dofs(spec, x))
    s0, g0 = state._cache

    p = np.sqrt(mass) * gen.standard_normal(x.shape)
    h0 = s0 + 0.5 * np.sum(p * p / mass, axis=-1)
    xq, g = x, g0
    # diverging trajectories produce overflows that the Metropolis step
    # rejects below; silence the transient warnings
    with np.errstate(over="ignore", invalid="ignore"):
        p = p - 0.5 * eps * g
        for i in range(n_leap):
            xq = xq + eps * p / mass
            s1, g = _action_and_gradient(spec, unpack_dofs(spec, xq))
            p = p - (eps if i < n_leap - 1 else 0.5 * eps) * g
        h1 = s1 + 0.5 * np.sum(p * p / mass, axis=-1)

    finite = np.isfinite(h1)
    log_alpha = np.where(finite, h0 - np.where(finite, h1, 0.0), -np.inf)
    accept = np.log(gen.uniform(size=log_alpha.shape)) < log_alpha
    state.dofs = np.where(accept[..., None], xq, x)
    s_new = np.where(accept, s1, s0)
    g_new = np.where(accept[..., None], g, g0)
    if flip_prob > 0:
        flip = gen.uniform(size=accept.shape) < flip_prob
        state.dofs = np.where(flip[..., None], -state.dofs, state.dofs)
        g_new = np.where(flip[..., None], -g_new, g_new)
    state._cache = (s_new, g_new)
    state.step_count += 1
    state.proposed += int(accept.size)
    state.accepted += int(np.sum(accept))
    state.overflow += int(np.sum(~finite))
    return state


def tune_hmc_step(state: ChainState, eps, steps=40, target=0.8, n_leap=10):
    """Scale the leapfrog step toward the target acceptance rate."""
    for _ in range(steps):
        before = state.accepted
        hmc_step(state, eps, n_leap)
        rate = (state.accepted - before) / state.batch
        eps *= math.exp(0.25 * (rate - target))
        eps = min(eps, 1.8)     # leapfrog stability limit at unit frequency
    return eps


def zero_mode_gibbs_step(state: ChainState, n_grid=2049, reach=6.0):
    """Gibbs-flavored update of the spatially constant mode.

    In the magnetized regime the constant mode is the slowest collective
    coordinate of gradient-based chains (its renormalized potential is a
    soft double well), with autocorrelation times of tens of steps.  This
    move resamples it outright: with every other degree of freedom held
    fixed, the action restricted to the component w of the zero mode
    along a direction e (e = 1 for real fields, a random global phase
    for complex ones) is an exact quartic polynomial in w, recovered
    here from five exact action evaluations.  w is proposed from a
    gridded version of that one-dimensional conditional — a proposal
    that does not depend on the current value of w — and accepted with
    the Metropolis-Hastings ratio computed from the exact action, so
    the move leaves the target measure exactly invariant.
    """
    spec = state.spec
    gen = state.generator()
    coeffs = state.coeffs()
    batch = state.batch
    k0 = spec.grid.kmax
    v = coeffs[..., k0, k0].copy()
    if spec.field_type == REAL_FIELD:
        e = np.ones(batch, dtype=np.complex128)
    else:
        e = np.exp(2j * np.pi * gen.random(batch))
    w0 = (np.conj(e) * v).real
    v_perp = v - w0 * e
    # fixed bracket: both mean-field wells plus free-field thermal tails
    R = math.sqrt(3.0 * max(spec.a, 0.0)) + reach * max(
        1.0, 1.0 / (spec.grid.L * max(spec.m, 1e-6)))
    nodes = R * np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    svals = np.empty((5, batch))
    for i, t in enumerate(nodes):
        c = coeffs.copy()
        c[..., k0, k0] = v_perp + t * e
        svals[i] = np.atleast_1d(
            _action_and_gradient(spec, c, want_gradient=False)[0])
    # quartic through the five nodes in the scaled coordinate w / R
    vand = np.vander(nodes / R, 5)
    coefs = np.linalg.solve(vand, svals)          # (5, batch)
    s_grid = np.linspace(-1.0, 1.0, n_grid)
    pg = np.zeros((n_grid, batch))
    for crow in coefs:
        pg = pg * s_grid[:, None] + crow[None, :]
    with np.errstate(under="ignore"):
        wgt = np.exp(-(pg - pg.min(axis=0)))
    total = wgt.sum(axis=0)
    cum = np.cumsum(wgt, axis=0)
    idx = np.minimum((cum < gen.random(batch) * total).sum(axis=0),
                     n_grid - 1)
    step = 2.0 * R / (n_grid - 1)
    w1 = s_grid[idx] * R + (gen.random(batch) - 0.5) * step
    cols = np.arange(batch)
    # piecewise-constant proposal densities at the new and current points;
    # a current value outside the bracket has zero reverse density and the
    # move is rejected, which keeps detailed balance exact
    idx0 = np.rint((w0 + R) / step).astype(int)
    inside = (idx0 >= 0) & (idx0 <= n_grid - 1) & (np.abs(w0) <= R)
    idx0 = np.clip(idx0, 0, n_grid - 1)
    with np.errstate(divide="ignore"):
        logq1 = np.log(wgt[idx, cols])
        logq0 = np.where(inside, np.log(wgt[idx0, cols]), -np.inf)
    if state._cache is not None:
        s_cur = np.atleast_1d(state._cache[0])
    else:
        s_cur = np.atleast_1d(
            _action_and_gradient(spec, coeffs, want_gradient=False)[0])
    c = coeffs.copy()
    c[..., k0, k0] = v_perp + w1 * e
    s_new = np.atleast_1d(
        _action_and_gradient(spec, c, want_gradient=False)[0])
    log_alpha = (s_cur - s_new) + (logq0 - logq1)
    accept = np.log(gen.random(batch)) < log_alpha
    coeffs[..., k0, k0] = np.where(accept, v_perp + w1 * e, v)
    state.dofs = pack_dofs(spec, coeffs)
    state._cache = None
    state.step_count += 1
    return state


# ---------------------------------------------------------------------------
# Rejection oracle (tiny systems only)

def rejection_oracle(spec: MeasureSpec, n_samples, rng: RngStream,
                     max_batch=4096):
    """Exact i.i.d. samples by rejection from the free field.

    The quartic weight is bounded above (the Wick-ordered density has a
    finite pointwise minimum), so accepting with probability
    exp(-q (W - W_min)) is exact.  Guarded to <= 16 active modes.
    """
    grid = spec.grid
    if grid.n_active() > 16:
        raise ValueError(
            "rejection oracle limited to <= 16 active modes (got %d); "
            "use MALA for larger systems" % grid.n_active())
    a, q = spec.a, spec.q
    if spec.field_type == REAL_FIELD:
        w_min = -6.0 * a**2 * grid.volume   # min_t (t^4-6at^2+3a^2) = -6a^2
    else:
        w_min = -2.0 * a**2 * grid.volume   # min_s (s^2-4as+2a^2) = -2a^2
    gen = rng.generator()
    out = []
    got = 0
    attempts = 0
    stream = rng.child(7)
    block = 0
    while got < n_samples:
        if spec.field_type == REAL_FIELD:
            c = sample_gff_coeffs(grid, spec.m, stream.child(block),
                                  size=max_batch)
        else:
            c = sample_complex_gff_coeffs(grid, spec.m, stream.child(block),
                                          size=max_batch)
        block += 1
        w = quartic_integral(spec, c)
        keep = np.log(gen.uniform(size=w.shape)) < -q * (w - w_min)
        attempts += max_batch
        kept = c[keep]
        out.append(kept[:n_samples - got])
        got += min(len(kept), n_samples - got)
    samples = np.concatenate(out, axis=0)
    return samples, {"acceptance_rate": n_samples / attempts if attempts else 1.0}


# ---------------------------------------------------------------------------
# Exponential-Euler Langevin with the rough/smooth split u = Z + phi

def ou_update(grid, m, z_coeffs, dt, gen):
    """Exact per-mode Ornstein-Uhlenbeck update whose stationary law is the
    truncated free field: z <- e^{-w^2 dt} z + sqrt((1-e^{-2 w^2 dt})/(L^2 w^2)) g."""
    osq = grid.mode_nsq() + m**2
    decay = np.exp(-osq * dt)
    g = _hermitian_gaussian_coeffs(grid, gen, z_coeffs.shape[0]
                                   if z_coeffs.ndim == 3 else None)
    std = np.sqrt((1.0 - decay**2) / (grid.volume * osq))
    z = decay * z_coeffs + std * g
    return np.where(grid.ball_mask(), z, 0.0)


def shifted_cubic_coeffs(grid, z_coeffs, phi_coeffs, a):
    """Coefficients of the Wick cubic of Z + phi (binomial Hermite
    expansion, alias-free, truncated to the active ball); batched."""
    lay = _layout(grid, REAL_FIELD)
    z = _padded_physical(lay, z_coeffs).real
    f = _padded_physical(lay, phi_coeffs).real
    total = (z**3 - 3.0 * a * z) + 3.0 * (z * z - a) * f + 3.0 * z * f**2 + f**3
    return hermitian_symmetrize(_band_coeffs(lay, total))


def exponential_euler_step(phi_coeffs, z_coeffs, spec: MeasureSpec, dt):
    """phi <- e^{-(m^2-Lap) dt} phi - (1-e^{-(m^2-Lap) dt})/(m^2-Lap)
    * lambda * wick_cubic(Z + phi); the linear part is exact."""
    if dt <= 0:
        raise ValueError("step size dt must be positive")
    grid = spec.grid
    osq = grid.mode_nsq() + spec.m**2
    decay = np.exp(-osq * dt)
    cubic = shifted_cubic_coeffs(grid, z_coeffs, phi_coeffs, spec.a)
    phi = decay * phi_coeffs - ((1.0 - decay) / osq) * spec.lam * cubic
    return np.where(grid.ball_mask(), phi, 0.0)


# ---------------------------------------------------------------------------
# Energy-identity diagnostic along a stored (Z, phi) trajectory

def energy_identity_diagnostic(times, z_coeffs_list, phi_coeffs_list,
                               spec: MeasureSpec,
                               weight: WeightSpec = WeightSpec()):
    """Evaluate each term of the weighted energy identity per time step.

    Testing the pairing of the dissipative flow with rho*phi gives

      (1/2) d/dt |rho^(1/2) phi|^2 + m^2 |rho^(1/2) phi|^2
        + |rho^(1/2) D phi|^2 + lam * int rho phi^4
        + lam * [int rho :Z^3: phi + 3 int rho :Z^2: phi^2 + 3 int rho Z phi^3]
        + int phi (D rho . D phi) = 0,

    with D the scaled gradient (symbol i n).  With the flat weight the
    spatial terms are alias-free and the residual is pure time-stepping
    error; with a decaying weight the identity additionally carries a
    (reported, not hidden) projection commutator.
    """
    grid = spec.grid
    lay = _layout(grid, REAL_FIELD)
    a, lam, m = spec.a, spec.lam, spec.m
    P = lay.P
    cell = (grid.L / P) ** 2
    # padded physical coordinates, wrapped to the centered window
    xg = (np.arange(P) * (grid.L / P) + grid.L / 2) % grid.L - grid.L / 2
    x1, x2 = np.meshgrid(xg, xg, indexing="ij")
    if weight.mode == FLAT:
        rho = np.ones_like(x1)
        drho1 = drho2 = np.zeros_like(x1)
    else:
        base = 1.0 + x1**2 + x2**2
        rho = base ** (-weight.alpha / 2.0)
        grad_pref = -weight.alpha * base ** (-weight.alpha / 2.0 - 1.0)
        drho1 = grad_pref * x1 / (2.0 * np.pi)
        drho2 = grad_pref * x2 / (2.0 * np.pi)

    n1, n2 = grid.mode_n()
    terms = {k: [] for k in ("energy", "mass", "gradient", "quartic",
                             "g_linear", "g_quadratic", "g_cubic",
                             "commutator")}
    for zc, pc in zip(z_coeffs_list, phi_coeffs_list):
        z = _padded_physical(lay, zc).real
        f = _padded_physical(lay, pc).real
        df1 = _padded_physical(lay, 1j * n1 * pc).real
        df2 = _padded_physical(lay, 1j * n2 * pc).real
        terms["energy"].append(np.sum(rho * f**2) * cell)
        terms["mass"].append(m**2 * np.sum(rho * f**2) * cell)
        terms["gradient"].append(np.sum(rho * (df1**2 + df2**2)) * cell)
        terms["quartic"].append(lam * np.sum(rho * f**4) * cell)
        terms["g_linear"].append(lam * np.sum(rho * (z**3 - 3 * a * z) * f) * cell)
        terms["g_quadratic"].append(3 * lam * np.sum(rho * (z * z - a) * f**2) * cell)
        terms["g_cubic"].append(3 * lam * np.sum(rho * z * f**3) * cell)
        terms["commutator"].append(np.sum(f * (drho1 * df1 + drho2 * df2)) * cell)
    out = {k: np.asarray(v) for k, v in terms.items()}
    t = np.asarray(times, dtype=float)
    if len(t) >= 2:
        # forward differences: step i covers [t_i, t_{i+1}] and is driven by
        # the noise field stored at t_i, so the identity holds to O(dt)
        # when its right-hand side is evaluated at the left endpoint
        dedt = np.diff(out["energy"]) / np.diff(t)
        rhs = (out["mass"] + out["gradient"] + out["quartic"]
               + out["g_linear"] + out["g_quadratic"] + out["g_cubic"]
               + out["commutator"])[:-1]
        out["residual"] = 0.5 * dedt + rhs
    out["times"] = t
    return out


# ---------------------------------------------------------------------------
# Chain runner

def run_chain(spec: MeasureSpec, sampler, n_samples, rng: RngStream,
              dt=None, burn_in=None, thinning=None, batch=None,
              precondition=True, n_leap=10):
    """Draw n_samples coefficient arrays from the measure.

    sampler in {"hmc", "mala", "exp_euler", "rejection_oracle"}; "hmc"
    mixes orders of magnitude faster on large mode sets and is the
    default choice for ensemble work.  Returns (samples, manifest);
    reproducible bit-for-bit from (spec, rng, options).
    """
    if sampler not in ("hmc", "mala", "exp_euler", "rejection_oracle"):
        raise ValueError("unknown sampler %r" % (sampler,))
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    grid = spec.grid
    manifest = dict(spec.manifest())
    manifest.update({"sampler": sampler, "n_samples": n_samples,
                     "seed": rng.master_seed, "stream": rng.stream_id,
                     "spec_hash": spec.spec_hash()})
    if n_samples == 0:
        return np.zeros((0, grid.nk, grid.nk), dtype=np.complex128), manifest

    if sampler == "rejection_oracle":
        samples, info = rejection_oracle(spec, n_samples, rng)
        manifest.update(info)
        return samples, manifest

    if sampler in ("mala", "hmc"):
        if batch is None:
            batch = min(max(n_samples, 1), 64)
        state = init_chain(spec, rng, batch=batch)
        if sampler == "hmc":
            dt = 0.2 if dt is None else dt
            burn = burn_in if burn_in is not None else 128
            dt = tune_hmc_step(state, dt, steps=max(20, burn // 3),
                               n_leap=n_leap)
            depth_coeff = 9.0 if spec.field_type == REAL_FIELD else 4.0
            deep = (spec.q > 0.0 and spec.a > 0.0 and
                    spec.q * grid.volume * depth_coeff * spec.a**2 > 5.0)

            def step(st, d):
                hmc_step(st, d, n_leap)
                if deep:
                    # the magnetization is the slow collective mode in
                    # the deep-well regime; resample it exactly
                    zero_mode_gibbs_step(st)
                return st
        else:
            dt = 0.25 if dt is None else dt
            burn = burn_in if burn_in is not None else max(
                64, int(math.ceil(10.0 / (spec.m**2 * dt))))
            dt = tune_step_size(state, dt, steps=max(20, burn // 3),
                                precondition=precondition)

            def step(st, d):
                return mala_step(st, d, precondition)
        probe = []
        for _ in range(burn):
            step(state, dt)
            probe.append(np.sum(np.abs(state.dofs) ** 2, axis=-1))
        if thinning is None:
            from .stats import integrated_autocorr_time
            series = np.asarray(probe)[burn // 2:, 0]
            thinning = max(1, int(math.ceil(
                2.0 * integrated_autocorr_time(series))))
        per_chain = int(math.ceil(n_samples / batch))
        samples = np.empty((per_chain, batch, grid.nk, grid.nk),
                           dtype=np.complex128)
        for i in range(per_chain):
            for _ in range(thinning):
                step(state, dt)
            samples[i] = state.coeffs()
        from .stats import integrated_autocorr_time
        if per_chain >= 4:
            # effective sample size from the thinned per-chain probe series
            probe_series = np.sum(np.abs(samples) ** 2, axis=(-2, -1))
            taus = [integrated_autocorr_time(probe_series[:, b])
                    for b in range(min(batch, 16))]
            ess = n_samples / (2.0 * float(np.mean(taus)))
        else:
            ess = float(n_samples)   # one-shot thinned draws per chain
        samples = samples.reshape(-1, grid.nk, grid.nk)[:n_samples]
        # the action is invariant under a global sign flip (real field) or
        # global phase rotation (complex field), so randomizing that group
        # orbit per sample is measure-exact and removes the corresponding
        # slow collective autocorrelation from the output for free
        sym_gen = rng.child(3).generator()
        if spec.field_type == REAL_FIELD:
            signs = sym_gen.choice((-1.0, 1.0), size=n_samples)
            samples *= signs[:, None, None]
        else:
            phases = np.exp(2j * np.pi * sym_gen.random(n_samples))
            samples *= phases[:, None, None]
        manifest.update({"dt": dt, "burn_in": burn, "thinning": thinning,
                         "batch": batch, "ess": ess,
                         "acceptance_rate": state.acceptance_rate,
                         "overflow_rejections": state.overflow})
        return samples, manifest

    # exp_euler: Langevin on the rough/smooth split; approximate sampler
    dt = 0.05 if dt is None else dt
    if batch is None:
        batch = min(max(n_samples, 1), 64)
    burn = burn_in if burn_in is not None else int(
        math.ceil(10.0 / (spec.m**2 * dt)))
    thinning = thinning if thinning is not None else max(
        1, int(math.ceil(2.0 / (spec.m**2 * dt))))
    gen = rng.child(2).generator()
    z = sample_gff_coeffs(grid, spec.m, rng.child(0), size=batch)
    phi = np.zeros_like(z)
    for _ in range(burn):
        z = ou_update(grid, spec.m, z, dt, gen)
        phi = exponential_euler_step(phi, z, spec, dt)
    per_chain = int(math.ceil(n_samples / batch))
    samples = np.empty((per_chain, batch, grid.nk, grid.nk),
                       dtype=np.complex128)
    for i in range(per_chain):
        for _ in range(thinning):
            z = ou_update(grid, spec.m, z, dt, gen)
            phi = exponential_euler_step(phi, z, spec, dt)
        samples[i] = z + phi
    samples = samples.reshape(-1, grid.nk, grid.nk)[:n_samples]
    manifest.update({"dt": dt, "burn_in": burn, "thinning": thinning,
                     "batch": batch})
    return samples, manifest
