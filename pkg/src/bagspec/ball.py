"""Semi-analytic spectra on balls.

Rotational symmetry reduces both the Dirichlet Laplacian and the bag
operator to radial problems indexed by an integer channel parameter.
Eigenvalues come from roots of explicit characteristic functions built
on spherical Bessel functions; an independent ODE shooting route is
provided for cross-checking and for probing the spectral gap.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

_BRENTQ_RTOL = 8.9e-16


def spherical_bessel(l, x):
    """Regular spherical Bessel function j_l at scalar x (real or complex).

    Upward recurrence where it is stable (|x| >= l), Miller's downward
    recurrence below that, and a truncated ascending series for very
    small arguments.  Complex x is supported so callers can take
    complex-step derivatives.
    """
    if l < 0:
        raise ValueError("order must be >= 0")
    want_complex = isinstance(x, complex) or np.iscomplexobj(x)
    z = complex(x)
    ax = abs(z)
    if ax < 1e-3:
        dfact = 1.0
        for k in range(1, l + 1):
            dfact *= 2 * k + 1
        q = z * z / 2
        val = z**l / dfact * (1 - q / (2 * l + 3)
                              + q * q / (2 * (2 * l + 3) * (2 * l + 5)))
    elif l == 0:
        val = np.sin(z) / z
    elif ax >= l:
        jm = np.sin(z) / z
        jc = (jm - np.cos(z)) / z
        for n in range(1, l):
            jm, jc = jc, (2 * n + 1) / z * jc - jm
        val = jc
    else:
        # Miller: descend from a padded start, normalize against whichever
        # of j0, j1 is larger in closed form.  Rescale to dodge overflow.
        top = l + 20 + int(1.2 * ax)
        jp = 0.0 + 0.0j
        jc = 1e-100 + 0.0j
        sav = None
        j1c = None
        for n in range(top, 0, -1):
            jp, jc = jc, (2 * n + 1) / z * jc - jp
            if n - 1 == l:
                sav = jc
            if n - 1 == 1:
                j1c = jc
            if max(abs(jc.real), abs(jc.imag)) > 1e250:
                jp *= 1e-250
                jc *= 1e-250
                if sav is not None:
                    sav *= 1e-250
                if j1c is not None:
                    j1c *= 1e-250
        j0c = jc
        j0a = np.sin(z) / z
        j1a = (j0a - np.cos(z)) / z
        if abs(j0a) >= abs(j1a):
            val = sav * j0a / j0c
        else:
            val = sav * j1a / j1c
    if want_complex:
        return complex(val)
    return float(val.real)


_zero_cache = {}


def bessel_zero(l, n):
    """n-th positive zero of j_l (n >= 1), bracketed by interlacing."""
    if n < 1:
        raise ValueError("zero index starts at 1")
    row = _zero_cache.setdefault(l, [])
    if len(row) >= n:
        return row[n - 1]
    if l == 0:
        row[:] = [math.pi * k for k in range(1, n + 1)]
        return row[n - 1]
    below = [bessel_zero(l - 1, k) for k in range(1, n + 2)]
    for k in range(len(row) + 1, n + 1):
        z = brentq(lambda t: spherical_bessel(l, t), below[k - 1], below[k],
                   xtol=1e-13, rtol=_BRENTQ_RTOL)
        row.append(z)
    return row[n - 1]


def dirichlet_ball_eigs(R, count):
    """First `count` Dirichlet Laplacian eigenvalues of the radius-R ball.

    Returns a list of (eigenvalue, multiplicity) sorted ascending, where
    the eigenvalue for angular order l and radial index n is
    (z_{l,n}/R)^2 with multiplicity 2l+1.
    """
    if R <= 0 or count < 1:
        raise ValueError("need R > 0 and count >= 1")
    zmax = bessel_zero(0, count)  # l=0 zeros alone already give `count` values
    pool = []
    l = 0
    while bessel_zero(l, 1) <= zmax:
        n = 1
        while True:
            z = bessel_zero(l, n)
            if z > zmax:
                break
            pool.append(((z / R) ** 2, 2 * l + 1))
            n += 1
        l += 1
    pool.sort()
    return pool[:count]


@dataclass(frozen=True)
class RadialChannel:
    """One angular sector of the radial bag problem.

    kappa_d is the nonzero integer labelling the sector; the total
    angular momentum is j = |kappa_d| - 1/2 and the two spinor
    components carry orbital orders l_a, l_b with |l_a - l_b| = 1.
    """

    kappa_d: int

    def __post_init__(self):
        if self.kappa_d == 0:
            raise ValueError("kappa_d must be a nonzero integer")

    @property
    def j(self):
        return abs(self.kappa_d) - 0.5

    @property
    def l_a(self):
        return int(abs(self.kappa_d + 0.5) - 0.5)

    @property
    def l_b(self):
        return int(abs(self.kappa_d - 0.5) - 0.5)

    @property
    def degeneracy(self):
        return 2 * abs(self.kappa_d)


def dirac_ball_char(kappa, c, R, channel, lam):
    """Characteristic residual whose zeros are bag eigenvalues on the ball.

    The regular solution of the radial system is the Bessel pair
    g = j_{l_a}(pr), h = sgn(kappa_d) * (c p / (lam + c^2/2)) * j_{l_b}(pr)
    with p^2 = lam^2/c^2 - c^2/4; the residual is h(R) + e^kappa g(R).
    Real lam must satisfy |lam| >= c^2/2 (outside the gap); complex lam
    is evaluated by analytic continuation with the principal square root.
    """
    if c <= 0 or R <= 0:
        raise ValueError("need c > 0 and R > 0")
    half = c * c / 2
    if (isinstance(lam, complex) or np.iscomplexobj(lam)) and complex(lam).imag != 0.0:
        z = complex(lam)
        p = np.sqrt((z / c - c / 2) * (z / c + c / 2))
    else:
        z = float(np.real(lam))
        if abs(z) < half:
            raise ValueError("lam lies in the spectral gap (|lam| < c^2/2)")
        if z == -half:
            raise ValueError("lam at the lower branch point")
        p = math.sqrt((abs(z) / c - c / 2) * (abs(z) / c + c / 2))
    s = 1.0 if channel.kappa_d > 0 else -1.0
    pref = s * c * p / (z + half)
    return (pref * spherical_bessel(channel.l_b, p * R)
            + math.exp(kappa) * spherical_bessel(channel.l_a, p * R))


@dataclass(frozen=True)
class EigenResult:
    """One eigenvalue with provenance.

    tag carries the radial-channel label (an integer) for ball spectra
    and a surface description for boundary-integral spectra.
    """

    lam: float
    tag: object
    multiplicity: int
    residual: float
    method: str = field(default="characteristic")


def _channel_roots(kappa, c, R, ch, lam_a, lam_b):
    # One branch only: lam_a, lam_b share a sign and |lam| >= c^2/2.
    # Brackets in the radial momentum p come from zeros of j_{l_a}(pR);
    # each inter-zero interval holds at most one root.
    half = c * c / 2

    def p_of(lam):
        m = (abs(lam) / c - c / 2) * (abs(lam) / c + c / 2)
        return math.sqrt(max(m, 0.0))

    def lam_of(p):
        v = math.sqrt(c * c * p * p + half * half)
        return v if lam_a > 0 else -v

    pa, pb = sorted((p_of(lam_a), p_of(lam_b)))
    # keep lam_of(pa) distinguishably off the branch point, where the
    # characteristic function has a spurious zero for l_a >= 1
    pa = max(pa, 2.5e-6 * c)
    if pb <= pa:
        return []
    pts = [pa]
    n = 1
    while True:
        zn = bessel_zero(ch.l_a, n) / R
        if zn >= pb:
            break
        if zn > pa:
            pts.append(zn)
        n += 1
    pts.append(pb)

    def f(lam):
        return dirac_ball_char(kappa, c, R, ch, lam)

    roots = []
    for i in range(len(pts) - 1):
        la, lb = sorted((lam_of(pts[i]), lam_of(pts[i + 1])))
        fa, fb = f(la), f(lb)
        if fa == 0.0 or fb == 0.0:
            continue
        if fa * fb < 0:
            roots.append(brentq(f, la, lb, xtol=1e-13 * max(1.0, abs(la)),
                                rtol=_BRENTQ_RTOL))
    return roots


def dirac_ball_eigs(kappa, c, R, window, j_max=4.5):
    """Bag eigenvalues on the radius-R ball inside a real window.

    Scans channels up to total angular momentum j_max (half-integer) and
    returns sorted EigenResult records; multiplicity is the full angular
    degeneracy 2|kappa_d|.  The window must avoid the open gap interior,
    which holds no spectrum; a window touching both branches is split.
    Warns when the first channels beyond j_max still have eigenvalues in
    the window.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError("window must be an increasing pair")
    half = c * c / 2
    n_ch = int(round(j_max + 0.5))
    if n_ch < 1 or abs(j_max + 0.5 - n_ch) > 1e-9:
        raise ValueError("j_max must be a half-integer >= 1/2")
    segments = []
    if hi > half:
        segments.append((max(lo, half), hi))
    if lo < -half:
        segments.append((lo, min(hi, -half)))
    out = []
    for a in range(1, n_ch + 1):
        for kd in (-a, a):
            ch = RadialChannel(kd)
            for seg in segments:
                for lam in _channel_roots(kappa, c, R, ch, *seg):
                    res = abs(dirac_ball_char(kappa, c, R, ch, lam))
                    out.append(EigenResult(lam, kd, ch.degeneracy, res))
    for kd in (-(n_ch + 1), n_ch + 1):
        ch = RadialChannel(kd)
        if any(_channel_roots(kappa, c, R, ch, *seg) for seg in segments):
            warnings.warn("channels beyond j_max carry eigenvalues inside "
                          "the window; increase j_max", RuntimeWarning)
            break
    out.sort(key=lambda r: r.lam)
    return out


def radial_shoot(kappa, c, R, channel, lam, eps_fac=1e-6):
    """Normalized boundary mismatch of the regular radial solution.

    Independent of the Bessel route: integrates the first-order radial
    system outward from a series start at eps = eps_fac * R and returns
    (h(R) + e^kappa g(R)) / max(|g(R)|, |h(R)|).  Valid at any real lam,
    including inside the gap.
    """
    kd = channel.kappa_d
    eps = eps_fac * R
    wp = (lam + c * c / 2) / c
    wm = (lam - c * c / 2) / c

    def rhs(r, y):
        g, h = y
        return (-(1 + kd) * g / r + wp * h,
                -(1 - kd) * h / r - wm * g)

    # leading Frobenius coefficient scaled to 1; the mismatch is
    # scale-invariant so this only improves conditioning
    if kd < 0:
        y0 = (1.0, -wm * eps / (2 * abs(kd) + 1))
    else:
        y0 = (wp * eps / (2 * kd + 1), 1.0)
    sol = solve_ivp(rhs, (eps, R), y0, method="DOP853",
                    rtol=1e-11, atol=1e-14)
    if not sol.success:
        raise RuntimeError("radial integration failed: " + sol.message)
    g, h = sol.y[0, -1], sol.y[1, -1]
    return float((h + math.exp(kappa) * g) / max(abs(g), abs(h)))
