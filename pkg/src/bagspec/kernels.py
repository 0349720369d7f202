"""Free-space fundamental solution of the relativistic Hamiltonian.

The operator acts on 4-spinors as -i c (alpha . grad) + (c^2/2) beta with
mass 1/2.  Its resolvent kernel at spectral parameter z is

    G_z(x) = ( z/c^2 I + 1/2 beta + (1 - i k r) i (alpha.x) / (c r^2) )
             * exp(i k r) / (4 pi r),

with r = |x| and k the square root of z^2/c^2 - c^2/4 taken in the closed
upper half plane.  In 2x2 block form the diagonal carries scalar Helmholtz
kernels at mu = z_nr + z_nr^2/c^2 (z_nr = z - c^2/2) and the off-diagonal
carries t/c, where

    t(x) = (1 - i k r) e^{i k r} i (sigma.x) / (4 pi r^3).

The split t = d + t_reg isolates the principal-value part
d(x) = i (sigma.x) / (4 pi r^3); the remainder is bounded near 0 but the
naive subtraction cancels catastrophically for |k| r << 1, so below
|k| r = 0.5 it is summed as a power series instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .spinor import ALPHA, BETA, sigma_dot

# switch point between series and direct evaluation of t_reg, in units of |k| r
_SERIES_CUT = 0.5
_SERIES_TERMS = 24

# c_k = i^{k+3}/(k+2)! + i^{k+1}/(k+1)!  so that
# (1 - i u) e^{i u} - 1 = sum_k c_k u^{k+2}
_SERIES_COEF = np.array(
    [1j ** (k + 3) / factorial(k + 2) + 1j ** (k + 1) / factorial(k + 1)
     for k in range(_SERIES_TERMS)]
)


def sqrt_im_pos(w):
    """Square root with branch chosen in the closed upper half plane.

    For w on the positive real axis this is the limit from Im(w) > 0,
    i.e. the positive root.
    """
    s = np.sqrt(np.asarray(w, dtype=complex))
    return np.where(s.imag < 0, -s, s)[()]


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter z together with the speed-of-light scale c.

    Derived quantities: z_nr = z - c^2/2 measures z from the upper gap edge,
    k_rel is the relativistic wavenumber sqrt(z^2/c^2 - c^2/4), and
    mu = z_nr + z_nr^2/c^2 = k_rel^2 is the effective Helmholtz parameter.
    """

    z: complex
    c: float

    def __post_init__(self):
        if not (np.isreal(self.c) and self.c > 0):
            raise ValueError(f"c must be positive, got {self.c}")
        object.__setattr__(self, "z", complex(self.z))
        object.__setattr__(self, "c", float(self.c))

    @classmethod
    def from_nonrel(cls, z_nr, c):
        """Build from the shifted parameter: absolute z = z_nr + c^2/2."""
        return cls(complex(z_nr) + c * c / 2.0, c)

    @property
    def z_nr(self):
        return self.z - self.c**2 / 2.0

    @property
    def k_rel(self):
        # evaluate via z_nr to avoid cancellation for z near +c^2/2:
        # z^2/c^2 - c^2/4 = z_nr + z_nr^2/c^2 exactly
        return complex(sqrt_im_pos(self.mu))

    @property
    def mu(self):
        zn = self.z_nr
        return zn + zn * zn / self.c**2

    @property
    def in_gap(self):
        return self.z.imag == 0 and abs(self.z.real) < self.c**2 / 2.0


def _radius(x):
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    return x, r


def helmholtz_kernel(mu, x):
    """exp(i sqrt(mu) |x|) / (4 pi |x|), branch Im sqrt >= 0."""
    _, r = _radius(x)
    k = sqrt_im_pos(mu)
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


def helmholtz_kernel_r(mu, r):
    """Same as helmholtz_kernel but taking the distance directly."""
    k = sqrt_im_pos(mu)
    return np.exp(1j * k * np.asarray(r)) / (4.0 * np.pi * np.asarray(r))


def ball_kernel_integral(mu, delta):
    """Integral of exp(i k r)/(4 pi r) over the ball of radius delta,
    i.e. int_0^delta r exp(i k r) dr; series below |k delta| = 1e-4 where
    the closed form cancels."""
    delta = np.asarray(delta)
    k = sqrt_im_pos(mu)
    kd = k * delta
    small = np.abs(kd) < 1e-4
    kd_safe = np.where(small, 1.0, kd)
    e = np.exp(1j * kd)
    full = delta * delta * (e / (1j * kd_safe) + (e - 1.0) / kd_safe**2)
    series = delta * delta * (0.5 + 1j * kd / 3.0 - kd * kd / 8.0)
    return np.where(small, series, full)


def ball_kernel_moment(mu, delta):
    """First radial moment (1/4 pi) int_0^delta s^2 exp(i k s) ds.

    Companion of ball_kernel_integral for gradient-corrected volume
    quadrature; the closed form cancels three orders at small argument,
    so a Taylor tail takes over below |k delta| = 1/2.
    """
    delta = np.asarray(delta)
    k = sqrt_im_pos(mu)
    u = 1j * k * delta
    small = np.abs(u) < 0.5
    u_safe = np.where(small, 1.0, u)
    full = (np.exp(u_safe) * (u_safe * (u_safe - 2.0) + 2.0) - 2.0) / u_safe**3
    # sum_m u^m (m+2)(m+1)/(m+3)!, enough terms for 1e-17 at |u| = 1/2
    acc = np.zeros_like(u)
    for m in range(16, -1, -1):
        cm = (m + 2) * (m + 1) / float(factorial(m + 3))
        acc = acc * u + cm
    out = np.where(small, acc, full) * delta**3
    return out / (4.0 * np.pi)


def green_matrix(sp: SpectralPoint, x):
    """Fundamental solution G_z(x) as a (..., 4, 4) array.

    x has shape (..., 3); the source point is the origin, which must not
    be hit.
    """
    x, r = _radius(x)
    if np.any(r == 0):
        raise ValueError("green_matrix evaluated at the source point")
    k = sp.k_rel
    c = sp.c
    phase = np.asarray(np.exp(1j * k * r) / (4.0 * np.pi * r))
    diag = (sp.z / c**2) * np.eye(4) + 0.5 * BETA
    fac = np.asarray((1.0 - 1j * k * r) * 1j / (c * r * r))
    # built in place; large point batches dominate peak memory
    out = np.einsum("...k,kij->...ij", x, ALPHA)
    out *= fac[..., None, None]
    out += diag
    out *= phase[..., None, None]
    return out


def d_kernel(x):
    """Principal-value part i (sigma.x) / (4 pi |x|^3), shape (..., 2, 2)."""
    x, r = _radius(x)
    pref = np.asarray(1j / (4.0 * np.pi * r**3))
    return pref[..., None, None] * sigma_dot(x)


def t_kernel(sp: SpectralPoint, x):
    """Full off-diagonal kernel t(x) = (1 - i k r) e^{i k r} i (sigma.x)/(4 pi r^3)."""
    x, r = _radius(x)
    k = sp.k_rel
    u = k * r
    pref = np.asarray((1.0 - 1j * u) * np.exp(1j * u) * 1j / (4.0 * np.pi * r**3))
    return pref[..., None, None] * sigma_dot(x)


def t_reg(sp: SpectralPoint, x):
    """Regular remainder t - d, series-summed where subtraction cancels.

    Defined as 0 at x = 0 (the limit direction-dependent part has zero
    radial average and the value is only used through integrals).
    """
    x, r = _radius(x)
    k = sp.k_rel
    u = k * r
    au = np.abs(u)

    scalar = np.ndim(r) == 0
    r_ = np.atleast_1d(r)
    u_ = np.atleast_1d(u)
    au_ = np.atleast_1d(au)
    # P multiplies (sigma.x); t_reg = P * sigma_dot(x)
    P = np.zeros(r_.shape, dtype=complex)

    near = (au_ < _SERIES_CUT) & (r_ > 0)
    far = ~near & (r_ > 0)

    if np.any(near):
        un = u_[near]
        # F(u) = k^2 sum_k c_k u^k, remainder bracket = F * r^2 (up to layout)
        F = np.zeros(un.shape, dtype=complex)
        for ck in _SERIES_COEF[::-1]:
            F = F * un + ck
        P[near] = k * k * F / (4.0 * np.pi * r_[near])

    if np.any(far):
        uf = u_[far]
        bracket = (1.0 - 1j * uf) * np.exp(1j * uf) - 1.0
        P[far] = bracket * 1j / (4.0 * np.pi * r_[far] ** 3)

    xs = np.atleast_2d(np.asarray(x, dtype=float)) if scalar else x
    out = P[..., None, None] * sigma_dot(np.where(r_[..., None] > 0, xs, 0.0))
    return out[0] if scalar else out


def t_reg_bound(z_nr, r):
    """Uniform entrywise bound a^2 e^{a r} / (2 pi), a = sqrt(2 |z_nr|).

    Valid whenever c > sqrt(|z_nr|) so that |k_rel|^2 <= 2 |z_nr|.
    """
    a = np.sqrt(2.0 * np.abs(z_nr))
    return a * a * np.exp(a * np.asarray(r)) / (2.0 * np.pi)


def green_block_residual(sp: SpectralPoint, x):
    """Max deviation between green_matrix and its 2x2 block reconstruction.

    Diagonal blocks are scalar Helmholtz kernels weighted by
    (z_nr/c^2 + 1) and (z_nr/c^2); off-diagonal blocks are t/c.
    """
    g = green_matrix(sp, x)
    s = helmholtz_kernel(sp.mu, x)
    t = t_kernel(sp, x)
    zn, c = sp.z_nr, sp.c
    blk = np.zeros(np.shape(s) + (4, 4), dtype=complex)
    eye2 = np.eye(2)
    blk[..., :2, :2] = (zn / c**2 + 1.0) * np.multiply.outer(s, eye2)
    blk[..., 2:, 2:] = (zn / c**2) * np.multiply.outer(s, eye2)
    blk[..., :2, 2:] = t / c
    blk[..., 2:, :2] = t / c
    scale = np.max(np.abs(g))
    return float(np.max(np.abs(g - blk)) / scale)
