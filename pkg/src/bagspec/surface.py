"""Closed C^2 surfaces of revolution-free star type and their quadrature.

Every shape here is star-shaped with respect to the origin and parametrized
over the unit sphere by spherical angles (theta, phi).  A shape exposes:

    point(theta, phi)       surface points, shape (..., 3)
    normal_jac(theta, phi)  outward unit normal and area element J with
                            dS = J dtheta dphi
    radial(theta, phi)      distance of the surface from the origin
    scaled(s)               the same shape dilated by s > 0

build_surface() lays a Gauss-Legendre (in cos theta) x uniform (in phi)
product grid on a shape.  Quadrature weights absorb J / sin(theta), so
smooth integrands are integrated with spectral accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss


def _angles(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.broadcast_arrays(theta, phi)


def _frame(theta, phi):
    """Radial, polar and azimuthal unit vectors of the parameter sphere."""
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    omega = np.stack([st * cp, st * sp, ct], axis=-1)
    e_th = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_ph = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    return omega, e_th, e_ph


@dataclass(frozen=True)
class Sphere:
    radius: float
    axisymmetric = True

    def point(self, theta, phi):
        theta, phi = _angles(theta, phi)
        omega, _, _ = _frame(theta, phi)
        return self.radius * omega

    def normal_jac(self, theta, phi):
        theta, phi = _angles(theta, phi)
        omega, _, _ = _frame(theta, phi)
        return omega, self.radius**2 * np.sin(theta)

    def radial(self, theta, phi):
        theta, phi = _angles(theta, phi)
        return np.full(theta.shape, self.radius)

    def solid_angle_density(self, theta, phi):
        theta, phi = _angles(theta, phi)
        return np.full(theta.shape, self.radius**2)

    def param_of_point(self, x):
        """Invert x = s * point(theta, phi): returns (s, theta, phi)."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        theta = np.arccos(np.clip(x[..., 2] / r, -1.0, 1.0))
        phi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2.0 * np.pi)
        return r / self.radius, theta, phi

    def tangents(self, theta, phi):
        """Coordinate tangents (dX/dtheta, dX/dphi), each (..., 3)."""
        theta, phi = _angles(theta, phi)
        _, e_th, e_ph = _frame(theta, phi)
        return self.radius * e_th, self.radius * np.sin(theta)[..., None] * e_ph

    def scaled(self, s):
        return Sphere(self.radius * s)


@dataclass(frozen=True)
class Ellipsoid:
    ax: float
    ay: float
    az: float

    @property
    def axisymmetric(self):
        return self.ax == self.ay

    def point(self, theta, phi):
        theta, phi = _angles(theta, phi)
        st = np.sin(theta)
        return np.stack(
            [self.ax * st * np.cos(phi), self.ay * st * np.sin(phi), self.az * np.cos(theta)],
            axis=-1,
        )

    def normal_jac(self, theta, phi):
        theta, phi = _angles(theta, phi)
        st, ct = np.sin(theta), np.cos(theta)
        sp, cp = np.sin(phi), np.cos(phi)
        a, b, c = self.ax, self.ay, self.az
        # d_theta X x d_phi X = st * (bc st cp, ac st sp, ab ct)
        v = np.stack([b * c * st * cp, a * c * st * sp, a * b * ct], axis=-1)
        norm = np.linalg.norm(v, axis=-1)
        jac = st * norm
        return v / norm[..., None], jac

    def radial(self, theta, phi):
        theta, phi = _angles(theta, phi)
        st = np.sin(theta)
        q = (st * np.cos(phi) / self.ax) ** 2 + (st * np.sin(phi) / self.ay) ** 2 \
            + (np.cos(theta) / self.az) ** 2
        return 1.0 / np.sqrt(q)

    def solid_angle_density(self, theta, phi):
        # J / sin(theta), finite at the poles
        theta, phi = _angles(theta, phi)
        st, ct = np.sin(theta), np.cos(theta)
        a, b, c = self.ax, self.ay, self.az
        return np.sqrt((b * c * st * np.cos(phi)) ** 2
                       + (a * c * st * np.sin(phi)) ** 2 + (a * b * ct) ** 2)

    def param_of_point(self, x):
        """Invert x = s * point(theta, phi) through reference-sphere
        coordinates u = x / axes, where the parametrization is radial."""
        x = np.asarray(x, dtype=float)
        u = x / np.array([self.ax, self.ay, self.az])
        s = np.linalg.norm(u, axis=-1)
        theta = np.arccos(np.clip(u[..., 2] / s, -1.0, 1.0))
        phi = np.mod(np.arctan2(u[..., 1], u[..., 0]), 2.0 * np.pi)
        return s, theta, phi

    def tangents(self, theta, phi):
        theta, phi = _angles(theta, phi)
        st, ct = np.sin(theta), np.cos(theta)
        sp, cp = np.sin(phi), np.cos(phi)
        t_th = np.stack([self.ax * ct * cp, self.ay * ct * sp, -self.az * st],
                        axis=-1)
        t_ph = np.stack([-self.ax * st * sp, self.ay * st * cp,
                         np.zeros_like(st)], axis=-1)
        return t_th, t_ph

    def scaled(self, s):
        return Ellipsoid(self.ax * s, self.ay * s, self.az * s)


@dataclass(frozen=True)
class StarDeform:
    """Radial graph r = R0 (1 + amplitude * Y_degree^0(theta))."""

    base_radius: float
    amplitude: float
    degree: int
    axisymmetric = True

    _norm: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        if self.degree != int(self.degree) or self.degree < 1:
            raise ValueError("degree must be a positive integer")
        object.__setattr__(self, "_norm", np.sqrt((2 * self.degree + 1) / (4 * np.pi)))

    def _legendre_pair(self, ct):
        cl = np.zeros(self.degree + 1)
        cl[self.degree] = 1.0
        pl = np.polynomial.legendre.legval(ct, cl)
        cl1 = np.zeros(self.degree)
        cl1[self.degree - 1] = 1.0
        pl1 = np.polynomial.legendre.legval(ct, cl1)
        return pl, pl1

    def _profile(self, theta):
        ct, st = np.cos(theta), np.sin(theta)
        pl, pl1 = self._legendre_pair(ct)
        r = self.base_radius * (1.0 + self.amplitude * self._norm * pl)
        # dP_l/dtheta = -l (P_{l-1} - ct P_l) / st, regular at the poles
        with np.errstate(invalid="ignore", divide="ignore"):
            dpl = -self.degree * (pl1 - ct * pl) / st
        dpl = np.where(st < 1e-14, 0.0, dpl)
        dr = self.base_radius * self.amplitude * self._norm * dpl
        return r, dr

    def point(self, theta, phi):
        theta, phi = _angles(theta, phi)
        omega, _, _ = _frame(theta, phi)
        r, _ = self._profile(theta)
        return r[..., None] * omega

    def normal_jac(self, theta, phi):
        theta, phi = _angles(theta, phi)
        omega, e_th, _ = _frame(theta, phi)
        r, dr = self._profile(theta)
        w = np.sqrt(r * r + dr * dr)
        nu = (r[..., None] * omega - dr[..., None] * e_th) / w[..., None]
        jac = r * w * np.sin(theta)
        return nu, jac

    def radial(self, theta, phi):
        theta, phi = _angles(theta, phi)
        return self._profile(theta)[0]

    def solid_angle_density(self, theta, phi):
        theta, phi = _angles(theta, phi)
        r, dr = self._profile(theta)
        return r * np.sqrt(r * r + dr * dr)

    def param_of_point(self, x):
        # radial graph: angles come straight from x, depth from the profile
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        theta = np.arccos(np.clip(x[..., 2] / r, -1.0, 1.0))
        phi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2.0 * np.pi)
        return r / self.radial(theta, phi), theta, phi

    def tangents(self, theta, phi):
        theta, phi = _angles(theta, phi)
        omega, e_th, e_ph = _frame(theta, phi)
        r, dr = self._profile(theta)
        t_th = dr[..., None] * omega + r[..., None] * e_th
        t_ph = (r * np.sin(theta))[..., None] * e_ph
        return t_th, t_ph

    def scaled(self, s):
        return StarDeform(self.base_radius * s, self.amplitude, self.degree)


@dataclass
class Surface:
    """Quadrature grid on a shape; node q = i * n_phi + j is (theta_i, phi_j)."""

    shape_obj: object
    theta: np.ndarray
    phi: np.ndarray
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    jac: np.ndarray
    gl_weights: np.ndarray

    @property
    def n_theta(self):
        return self.theta.size

    @property
    def n_phi(self):
        return self.phi.size

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    def area(self):
        return float(np.sum(self.weights))

    def volume(self):
        # divergence theorem with F = x/3
        return float(np.sum(self.weights * np.sum(self.nodes * self.normals, axis=1)) / 3.0)

    @property
    def mesh_h(self):
        return float(np.sqrt(self.area() / self.n_nodes))


def build_surface(shape, n_theta, n_phi):
    t, glw = leggauss(n_theta)
    theta = np.arccos(t)[::-1]
    glw = glw[::-1]
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi

    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    nodes = shape.point(tt, pp).reshape(-1, 3)
    normals, jac = shape.normal_jac(tt, pp)
    normals = normals.reshape(-1, 3)
    jac = jac.reshape(-1)
    # dS = J dtheta dphi = (J / sin theta) dt dphi
    w = (glw[:, None] * (2.0 * np.pi / n_phi) * (jac.reshape(n_theta, n_phi)
         / np.sin(tt))).reshape(-1)
    return Surface(shape, theta, phi, nodes, normals, w, jac, glw)


def parse_shape(text):
    """Parse 'sphere:R', 'ellipsoid:a,b,c' or 'star:R0,amplitude,degree'."""
    name, sep, rest = text.partition(":")
    if not sep:
        raise ValueError(f"missing parameters in shape spec {text!r}")
    try:
        parts = [float(p) for p in rest.split(",")]
    except ValueError:
        raise ValueError(f"non-numeric shape parameters in {text!r}") from None
    if name == "sphere" and len(parts) == 1 and parts[0] > 0:
        return Sphere(parts[0])
    if name == "ellipsoid" and len(parts) == 3 and min(parts) > 0:
        return Ellipsoid(*parts)
    if name == "star" and len(parts) == 3:
        r0, amp, deg = parts
        if r0 > 0 and deg == int(deg) and deg >= 1 and abs(amp) < 1:
            return StarDeform(r0, amp, int(deg))
    raise ValueError(f"unrecognized shape spec {text!r}")


def equal_volume_rescale(shape, target_volume, n_theta=48, n_phi=96):
    """Dilate shape so its enclosed volume matches target_volume."""
    v = build_surface(shape, n_theta, n_phi).volume()
    return shape.scaled((target_volume / v) ** (1.0 / 3.0))
