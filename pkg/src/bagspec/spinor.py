"""Dirac matrix algebra and the bag boundary condition family.

Conventions: hbar = 1, particle mass 1/2, so the rest energy entering the
Hamiltonian is (c^2/2) * BETA.  The boundary condition at a point with outward
unit normal nu reads  f = boundary_matrix(kappa, nu) @ f,  kappa real.
"""

import numpy as np

SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

ALPHA = np.zeros((3, 4, 4), dtype=complex)
for _k in range(3):
    ALPHA[_k, :2, 2:] = SIGMA[_k]
    ALPHA[_k, 2:, :2] = SIGMA[_k]
del _k

BETA = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)


def sigma_dot(v):
    """Contract a vector (or batch of vectors, shape (..., 3)) with the Pauli triple."""
    v = np.asarray(v, dtype=complex)
    return np.einsum("...k,kij->...ij", v, SIGMA)


def alpha_dot(v):
    """Contract a vector (or batch, shape (..., 3)) with the off-diagonal 4x4 triple."""
    v = np.asarray(v, dtype=complex)
    return np.einsum("...k,kij->...ij", v, ALPHA)


def boundary_matrix(kappa, nu):
    """Involution B with f = B f on the boundary; batched over nu of shape (..., 3).

    B = i (sinh(kappa) I - cosh(kappa) BETA) (alpha . nu).  B*B = I for unit nu.
    """
    coef = 1j * (np.sinh(kappa) * np.eye(4) - np.cosh(kappa) * BETA)
    return np.einsum("ij,...jk->...ik", coef, alpha_dot(nu))


def bag_coefficients(kappa):
    """Coupling pair (a_plus, a_minus); a_plus > 0 > a_minus, product -1/4.

    Evaluated as (exp(-kappa)/2, -exp(kappa)/2): identical to the
    (cosh -+ sinh)/2 pair but immune to cancellation at large kappa.
    """
    return 0.5 * np.exp(-kappa), -0.5 * np.exp(kappa)


def theta_and_scaling(kappa, c):
    """Diagonal pair (theta_c, M_c) used by the boundary operator inverse.

    theta_c = diag(a_plus/c, a_plus/c, a_minus, a_minus), M_c = diag(1, 1, sqrt(c), sqrt(c)).
    """
    a_plus, a_minus = bag_coefficients(kappa)
    theta = np.diag([a_plus / c, a_plus / c, a_minus, a_minus]).astype(complex)
    m = np.diag([1.0, 1.0, np.sqrt(c), np.sqrt(c)]).astype(complex)
    return theta, m


def inverse_coupling(kappa, c):
    """Closed form of (2c (sinh(kappa) I + cosh(kappa) BETA))^(-1).

    Equals (1/(2c)) (-sinh(kappa) I + cosh(kappa) BETA) and also
    M_c^-1 theta_c M_c^-1; the 2x2 blocks carry a_plus/c and a_minus/c.
    """
    return (1.0 / (2.0 * c)) * (-np.sinh(kappa) * np.eye(4) + np.cosh(kappa) * BETA)


def symmetry_matrices():
    """Return (U, T).

    U is the unitary involution anticommuting with all of ALPHA and with BETA;
    conjugation by U maps the kappa boundary family to -kappa and flips the
    spectrum sign.  T is the matrix part of the antiunitary time reversal
    f -> T @ conj(f); it squares to -1 (Kramers pairing, even multiplicities).
    """
    u = np.zeros((4, 4), dtype=complex)
    u[:2, 2:] = -1j * np.eye(2)
    u[2:, :2] = 1j * np.eye(2)
    exch = np.zeros((4, 4), dtype=complex)
    exch[:2, 2:] = np.eye(2)
    exch[2:, :2] = np.eye(2)
    t = -1j * exch @ ALPHA[1]
    return u, t
