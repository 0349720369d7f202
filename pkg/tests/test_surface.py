"""Parametrized closed surfaces and the product quadrature grid."""

import numpy as np
import pytest

from bagspec import surface

# mpmath, dps=30: area of x^2 + (y/0.8)^2 + (z/0.6)^2 = 1
ELLIPSOID_AREA = 7.9782023744777496207
# mpmath, dps=30: radial profile 1 + 0.15 * Y_3^0(theta)
STAR_VOLUME = 4.2112902047863909846
STAR_AREA = 12.722725002383150615
STAR_UNIT_SCALE = 0.99821589195367698555


def shapes():
    return [
        surface.Sphere(0.9),
        surface.Ellipsoid(1.0, 0.8, 0.6),
        surface.StarDeform(1.0, 0.15, 3),
    ]


class TestShapes:
    def test_radial_consistency(self):
        # radial() is the distance to the surface along the direction with
        # those angles; for radially parametrized shapes it matches point()
        rng = np.random.default_rng(3)
        th = rng.uniform(0.05, np.pi - 0.05, 40)
        ph = rng.uniform(0, 2 * np.pi, 40)
        omega = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
        for sh in (surface.Sphere(0.9), surface.StarDeform(1.0, 0.15, 3)):
            pts = sh.point(th, ph)
            rho = sh.radial(th, ph)
            assert np.max(np.abs(pts - rho[:, None] * omega)) < 1e-13

    def test_radial_hits_ellipsoid(self):
        rng = np.random.default_rng(4)
        th = rng.uniform(0.05, np.pi - 0.05, 40)
        ph = rng.uniform(0, 2 * np.pi, 40)
        omega = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
        sh = surface.Ellipsoid(1.0, 0.8, 0.6)
        x = sh.radial(th, ph)[:, None] * omega
        level = (x[:, 0] / 1.0) ** 2 + (x[:, 1] / 0.8) ** 2 + (x[:, 2] / 0.6) ** 2
        assert np.max(np.abs(level - 1.0)) < 1e-13

    def test_normal_jacobian_vs_finite_differences(self):
        # d_theta X x d_phi X = J * nu, checked by central differences
        rng = np.random.default_rng(5)
        h = 1e-6
        for sh in shapes():
            th = rng.uniform(0.1, np.pi - 0.1, 25)
            ph = rng.uniform(0, 2 * np.pi, 25)
            nu, jac = sh.normal_jac(th, ph)
            dth = (sh.point(th + h, ph) - sh.point(th - h, ph)) / (2 * h)
            dph = (sh.point(th, ph + h) - sh.point(th, ph - h)) / (2 * h)
            cross = np.cross(dth, dph)
            assert np.max(np.abs(cross - jac[:, None] * nu)) < 1e-7
            assert np.max(np.abs(np.linalg.norm(nu, axis=-1) - 1)) < 1e-13

    def test_solid_angle_density(self):
        rng = np.random.default_rng(11)
        th = rng.uniform(0.05, np.pi - 0.05, 30)
        ph = rng.uniform(0, 2 * np.pi, 30)
        for sh in shapes():
            _, jac = sh.normal_jac(th, ph)
            g = sh.solid_angle_density(th, ph)
            assert np.max(np.abs(g * np.sin(th) - jac)) < 1e-12
            # stays finite right at the pole
            gp = sh.solid_angle_density(np.array([0.0, np.pi]), np.array([0.3, 0.3]))
            assert np.all(np.isfinite(gp)) and np.all(gp > 0)

    def test_normals_outward(self):
        rng = np.random.default_rng(7)
        th = rng.uniform(0.05, np.pi - 0.05, 50)
        ph = rng.uniform(0, 2 * np.pi, 50)
        for sh in shapes():
            nu, _ = sh.normal_jac(th, ph)
            assert np.all(np.sum(sh.point(th, ph) * nu, axis=-1) > 0)

    def test_scaling_is_linear(self):
        th = np.array([0.3, 1.2, 2.8])
        ph = np.array([0.1, 4.0, 5.5])
        for sh in shapes():
            big = sh.scaled(2.5)
            assert np.allclose(big.point(th, ph), 2.5 * sh.point(th, ph), atol=1e-14)
            nu1, j1 = sh.normal_jac(th, ph)
            nu2, j2 = big.normal_jac(th, ph)
            assert np.allclose(nu2, nu1, atol=1e-13)
            assert np.allclose(j2, 2.5**2 * j1, rtol=1e-13)


class TestQuadrature:
    def test_sphere_area_volume(self):
        surf = surface.build_surface(surface.Sphere(0.9), 20, 40)
        assert abs(surf.area() - 4 * np.pi * 0.81) < 1e-12 * 4 * np.pi
        assert abs(surf.volume() - 4 * np.pi * 0.9**3 / 3) < 1e-12

    def test_ellipsoid_area_frozen(self):
        surf = surface.build_surface(surface.Ellipsoid(1.0, 0.8, 0.6), 32, 64)
        assert abs(surf.area() - ELLIPSOID_AREA) < 1e-10 * ELLIPSOID_AREA
        assert abs(surf.volume() - 4 * np.pi * 0.48 / 3) < 1e-11

    def test_star_frozen(self):
        surf = surface.build_surface(surface.StarDeform(1.0, 0.15, 3), 32, 64)
        assert abs(surf.area() - STAR_AREA) < 1e-10 * STAR_AREA
        assert abs(surf.volume() - STAR_VOLUME) < 1e-10 * STAR_VOLUME

    def test_area_converges(self):
        sh = surface.Ellipsoid(1.0, 0.8, 0.6)
        e = [abs(surface.build_surface(sh, n, 2 * n).area() - ELLIPSOID_AREA)
             for n in (8, 12, 16)]
        assert e[1] < e[0] and e[2] < e[1]

    def test_first_moments_vanish(self):
        surf = surface.build_surface(surface.Sphere(1.3), 16, 32)
        m = surf.weights @ surf.nodes
        assert np.max(np.abs(m)) < 1e-12

    def test_second_moments(self):
        R = 1.3
        surf = surface.build_surface(surface.Sphere(R), 16, 32)
        m2 = np.einsum("q,qi,qj->ij", surf.weights, surf.nodes, surf.nodes)
        assert np.max(np.abs(m2 - (4 * np.pi * R**4 / 3) * np.eye(3))) < 1e-11

    def test_legendre_orthogonality(self):
        from numpy.polynomial import legendre

        surf = surface.build_surface(surface.Sphere(1.0), 16, 32)
        ct = surf.nodes[:, 2]  # cos(theta) on the unit sphere
        for l in range(1, 7):
            cl = np.zeros(l + 1)
            cl[l] = 1.0
            p = legendre.legval(ct, cl)
            assert abs(surf.weights @ p) < 1e-12
            assert abs(surf.weights @ p**2 - 4 * np.pi / (2 * l + 1)) < 1e-12

    def test_node_layout(self):
        surf = surface.build_surface(surface.Sphere(1.0), 6, 10)
        assert surf.nodes.shape == (60, 3)
        assert surf.theta.shape == (6,) and surf.phi.shape == (10,)
        assert np.all(np.diff(surf.theta) > 0)
        # node q = i * n_phi + j sits at (theta_i, phi_j)
        pts = surf.shape_obj.point(surf.theta[2], surf.phi[:])
        assert np.allclose(surf.nodes[2 * 10:3 * 10], pts, atol=1e-14)
        assert np.allclose(surf.phi, 2 * np.pi * np.arange(10) / 10, atol=1e-15)

    def test_mesh_h(self):
        c1 = surface.build_surface(surface.Sphere(1.0), 10, 20)
        c2 = surface.build_surface(surface.Sphere(1.0), 20, 40)
        assert 1.8 < c1.mesh_h / c2.mesh_h < 2.2


class TestParsing:
    def test_sphere(self):
        sh = surface.parse_shape("sphere:0.9")
        assert isinstance(sh, surface.Sphere) and sh.radius == 0.9

    def test_ellipsoid(self):
        sh = surface.parse_shape("ellipsoid:1,0.8,0.6")
        assert isinstance(sh, surface.Ellipsoid)
        assert (sh.ax, sh.ay, sh.az) == (1.0, 0.8, 0.6)

    def test_star(self):
        sh = surface.parse_shape("star:1.0,0.15,3")
        assert isinstance(sh, surface.StarDeform)
        assert sh.degree == 3 and sh.amplitude == 0.15

    def test_rejects_garbage(self):
        for bad in ("cube:1", "sphere", "sphere:a", "ellipsoid:1,2", "star:1,0.1,2.5"):
            with pytest.raises(ValueError):
                surface.parse_shape(bad)


class TestRescale:
    def test_star_to_unit_ball(self):
        sh = surface.StarDeform(1.0, 0.15, 3)
        scaled = surface.equal_volume_rescale(sh, 4 * np.pi / 3)
        assert abs(scaled.base_radius - STAR_UNIT_SCALE) < 1e-9
        surf = surface.build_surface(scaled, 32, 64)
        assert abs(surf.volume() - 4 * np.pi / 3) < 1e-9

    def test_sphere_identity(self):
        sh = surface.equal_volume_rescale(surface.Sphere(2.0), 4 * np.pi * 8 / 3)
        assert abs(sh.radius - 2.0) < 1e-12


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
