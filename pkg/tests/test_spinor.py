"""Exact algebra checks for the 4x4 Dirac matrices and bag boundary condition."""

import numpy as np
import pytest

from bagspec import spinor


def com(a, b):
    return a @ b + b @ a


class TestCliffordRelations:
    def test_pauli_products(self):
        s = spinor.SIGMA
        eps = np.zeros((3, 3, 3))
        eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
        eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
        for j in range(3):
            for k in range(3):
                expect = (j == k) * np.eye(2) + 1j * np.einsum("l,lab->ab", eps[j, k], s)
                assert np.array_equal(s[j] @ s[k], expect)

    def test_anticommutation_exact(self):
        a, b = spinor.ALPHA, spinor.BETA
        for j in range(3):
            for k in range(3):
                assert np.array_equal(com(a[j], a[k]), 2.0 * (j == k) * np.eye(4))
            assert np.array_equal(com(a[j], b), np.zeros((4, 4)))
        assert np.array_equal(b @ b, np.eye(4))

    def test_hermitian(self):
        for m in (*spinor.ALPHA, spinor.BETA):
            assert np.array_equal(m, m.conj().T)

    def test_alpha_dot_square(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            v = rng.standard_normal(3)
            m = spinor.alpha_dot(v)
            assert np.max(np.abs(m @ m - np.dot(v, v) * np.eye(4))) < 1e-13
            m2 = spinor.sigma_dot(v)
            assert np.max(np.abs(m2 @ m2 - np.dot(v, v) * np.eye(2))) < 1e-13

    def test_alpha_dot_batched(self):
        rng = np.random.default_rng(3)
        vs = rng.standard_normal((5, 4, 3))
        batch = spinor.alpha_dot(vs)
        assert batch.shape == (5, 4, 4, 4)
        assert np.array_equal(batch[2, 1], spinor.alpha_dot(vs[2, 1]))


class TestBoundaryMatrix:
    def test_involution(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            kappa = rng.uniform(-2, 2)
            nu = rng.standard_normal(3)
            nu /= np.linalg.norm(nu)
            bm = spinor.boundary_matrix(kappa, nu)
            assert np.max(np.abs(bm @ bm - np.eye(4))) < 1e-13

    def test_standard_bag_e3(self):
        # kappa = 0, nu = e3: equals -i * BETA @ (alpha . e3)
        bm = spinor.boundary_matrix(0.0, np.array([0.0, 0.0, 1.0]))
        expect = np.array(
            [
                [0, 0, -1j, 0],
                [0, 0, 0, 1j],
                [1j, 0, 0, 0],
                [0, -1j, 0, 0],
            ]
        )
        assert np.max(np.abs(bm - expect)) < 1e-15

    def test_hermitian_only_at_zero(self):
        nu = np.array([0.3, -0.4, 0.866025])
        nu /= np.linalg.norm(nu)
        b0 = spinor.boundary_matrix(0.0, nu)
        assert np.max(np.abs(b0 - b0.conj().T)) < 1e-14
        b1 = spinor.boundary_matrix(0.8, nu)
        assert np.max(np.abs(b1 - b1.conj().T)) > 0.1

    def test_projector_ranks(self):
        nu = np.array([1.0, 0.0, 0.0])
        bm = spinor.boundary_matrix(-0.5, nu)
        for sign in (+1, -1):
            p = 0.5 * (np.eye(4) + sign * bm)
            assert np.linalg.matrix_rank(p, tol=1e-10) == 2
            assert np.max(np.abs(p @ p - p)) < 1e-13


class TestCoefficients:
    def test_values(self):
        ap, am = spinor.bag_coefficients(0.0)
        assert ap == 0.5 and am == -0.5
        ap, am = spinor.bag_coefficients(1.0)
        # frozen mpmath values
        assert abs(ap - 0.18393972058572117) < 1e-16
        assert abs(am - (-1.3591409142295225)) < 1e-15
        ap, am = spinor.bag_coefficients(-0.7)
        assert abs(ap - 1.0068763537352383) < 1e-15
        assert abs(am - (-0.24829265189570476)) < 1e-16

    def test_product_and_signs(self):
        for kappa in np.linspace(-3, 3, 13):
            ap, am = spinor.bag_coefficients(kappa)
            assert ap > 0 > am
            assert abs(ap * am + 0.25) < 1e-15

    def test_hyperbolic_form(self):
        # cross-check against the cosh/sinh definition (that form cancels at
        # large kappa, hence the relative tolerance)
        for kappa in np.linspace(-2, 2, 9):
            ap, am = spinor.bag_coefficients(kappa)
            assert abs(ap - 0.5 * (np.cosh(kappa) - np.sinh(kappa))) < 1e-13 * abs(ap)
            assert abs(am + 0.5 * (np.cosh(kappa) + np.sinh(kappa))) < 1e-13 * abs(am)


class TestScalingMatrices:
    def test_frozen_standard(self):
        theta, m = spinor.theta_and_scaling(0.0, 4.0)
        assert np.allclose(np.diag(theta), [0.125, 0.125, -0.5, -0.5], atol=1e-15)
        assert np.allclose(np.diag(m), [1, 1, 2, 2], atol=1e-15)
        assert np.count_nonzero(theta - np.diag(np.diag(theta))) == 0

    def test_coupling_inverse_identity(self):
        # (2c(sinh I + cosh BETA))^(-1) = M^-1 theta M^-1, both ways
        rng = np.random.default_rng(5)
        for _ in range(15):
            kappa = rng.uniform(-1.5, 1.5)
            c = rng.uniform(0.5, 50.0)
            theta, m = spinor.theta_and_scaling(kappa, c)
            minv = np.linalg.inv(m)
            lhs = np.linalg.inv(
                2.0 * c * (np.sinh(kappa) * np.eye(4) + np.cosh(kappa) * spinor.BETA)
            )
            rhs = minv @ theta @ minv
            assert np.max(np.abs(lhs - rhs)) < 1e-13
            closed = spinor.inverse_coupling(kappa, c)
            assert np.max(np.abs(closed - lhs)) < 1e-13


class TestSymmetries:
    def test_chiral_rotation(self):
        u, _ = spinor.symmetry_matrices()
        assert np.array_equal(u, u.conj().T)
        assert np.array_equal(u @ u, np.eye(4))
        for a in spinor.ALPHA:
            assert np.array_equal(u @ a @ u, -a)
        assert np.array_equal(u @ spinor.BETA @ u, -spinor.BETA)

    def test_kappa_flip_conjugation(self):
        # U B(-kappa, nu) U = B(kappa, nu): domain of the sign-flipped operator maps over
        u, _ = spinor.symmetry_matrices()
        rng = np.random.default_rng(13)
        for _ in range(10):
            kappa = rng.uniform(-2, 2)
            nu = rng.standard_normal(3)
            nu /= np.linalg.norm(nu)
            lhs = u @ spinor.boundary_matrix(-kappa, nu) @ u
            assert np.max(np.abs(lhs - spinor.boundary_matrix(kappa, nu))) < 1e-13

    def test_time_reversal_kramers(self):
        _, t = spinor.symmetry_matrices()
        # antiunitary square: T(Tf) = T_mat conj(T_mat) f = -f
        assert np.max(np.abs(t @ np.conj(t) + np.eye(4))) < 1e-15

    def test_time_reversal_commutes_with_hamiltonian(self):
        _, t = spinor.symmetry_matrices()
        c = 3.7
        # momentum term: T_mat conj(-ic alpha_k) = -ic alpha_k T_mat
        for a in spinor.ALPHA:
            lhs = t @ np.conj(-1j * c * a)
            rhs = (-1j * c * a) @ t
            assert np.max(np.abs(lhs - rhs)) < 1e-14
        assert np.max(np.abs(t @ np.conj(spinor.BETA) - spinor.BETA @ t)) < 1e-15

    def test_time_reversal_preserves_domain(self):
        # T maps the boundary condition to itself at the same kappa
        _, t = spinor.symmetry_matrices()
        rng = np.random.default_rng(29)
        for _ in range(10):
            kappa = rng.uniform(-2, 2)
            nu = rng.standard_normal(3)
            nu /= np.linalg.norm(nu)
            bm = spinor.boundary_matrix(kappa, nu)
            lhs = t @ np.conj(bm)
            assert np.max(np.abs(lhs - bm @ t)) < 1e-13


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
