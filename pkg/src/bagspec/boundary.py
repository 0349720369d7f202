"""Nystrom discretization of the boundary integral operators.

Every target node gets its own geodesic-polar quadrature chart covering the
whole parameter sphere: with omega(s, psi) the point at geodesic distance s
from the target direction, the surface integral becomes

    int_0^pi int_0^{2 pi} K(x_i, X(omega)) f(X(omega)) g(omega) sin s  dpsi ds,

g = J / sin(theta) the solid-angle density.  The sin s factor cancels one
power of the kernel singularity at s = 0; the leftover odd (principal value)
component of the strongly singular kernel cancels exactly across antipodal
psi pairs, so the psi trapezoid must have an even number of points.  What
remains is smooth, and Gauss (radial) x trapezoid (angular) converges
spectrally.  Densities are evaluated on the chart by local Lagrange
interpolation on a theta grid extended smoothly across both poles
((-theta, phi) = (theta, phi + pi)), then periodically in phi.

For axisymmetric shapes the operator is block circulant in phi, so only the
first phi column of targets is assembled and the rest is filled in by index
rotation; 2x2 spinor kernels additionally pick up the spin-1/2 rotation
phases exp(-+ i phi) on their off-diagonal entries.

Assembled matrices act on node values and include all quadrature weights.
Block operators are stored as (b, b, N, N) arrays; blocks_to_dense lays them
out component-major (row a*N + i).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels, spinor

_CHUNK_ELEMS = 8_000_000


@dataclass(frozen=True)
class QuadParams:
    """Radial Gauss order, psi trapezoid size, interpolation window."""

    m_r: int = 24
    m_psi: int = 32
    p: int = 12

    def __post_init__(self):
        if self.m_psi % 2:
            raise ValueError("m_psi must be even (antipodal pairing)")


class _PolarData:
    __slots__ = ("xdiff", "rnear", "fac", "tidx", "tw", "pstart", "pw",
                 "Q", "p_eff", "phys_row", "row_shift", "n_targets",
                 "targets", "pts", "nrm", "xdn")


class BoundaryGrid:
    """Surface grid plus cached quadrature data for operator assembly."""

    def __init__(self, surf, params: QuadParams | None = None, use_symmetry=None):
        self.surf = surf
        self.params = params if params is not None else QuadParams()
        if use_symmetry is None:
            use_symmetry = getattr(surf.shape_obj, "axisymmetric", False)
        self.use_symmetry = bool(use_symmetry)
        if surf.n_phi % 2:
            raise ValueError("n_phi must be even (pole continuation)")
        self._polar = None
        self._rot_cols = None

    # -- geometry ----------------------------------------------------------

    def _param_dirs(self, first_column_only):
        surf = self.surf
        th = surf.theta
        ph = surf.phi[:1] if first_column_only else surf.phi
        tt, pp = np.meshgrid(th, ph, indexing="ij")
        st = np.sin(tt)
        om = np.stack([st * np.cos(pp), st * np.sin(pp), np.cos(tt)], axis=-1)
        return om.reshape(-1, 3)

    @property
    def polar(self):
        if self._polar is None:
            self._polar = self._build_polar()
        return self._polar

    def _build_polar(self):
        surf, prm = self.surf, self.params
        nt, nph, N = surf.n_theta, surf.n_phi, surf.n_nodes
        p = min(prm.p, nt, nph)
        om = self._param_dirs(self.use_symmetry)
        n_targets = om.shape[0]
        if self.use_symmetry:
            targets = surf.nodes.reshape(nt, nph, 3)[:, 0, :]
        else:
            targets = surf.nodes

        # equivariant tangent frame (no grid node sits at a pole)
        e1 = np.cross(np.array([0.0, 0.0, 1.0]), om)
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(om, e1)

        xg, wg = np.polynomial.legendre.leggauss(prm.m_r)
        s = np.pi * (xg + 1.0) / 2.0
        ws = np.pi * wg / 2.0
        psi = 2.0 * np.pi * np.arange(prm.m_psi) / prm.m_psi
        wpsi = 2.0 * np.pi / prm.m_psi

        tang = (np.cos(psi)[None, :, None] * e1[:, None, :]
                + np.sin(psi)[None, :, None] * e2[:, None, :])
        omq = (np.cos(s)[None, :, None, None] * om[:, None, None, :]
               + np.sin(s)[None, :, None, None] * tang[:, None, :, :])
        Q = prm.m_r * prm.m_psi
        omq = omq.reshape(n_targets, Q, 3)

        thq = np.arccos(np.clip(omq[..., 2], -1.0, 1.0))
        phq = np.mod(np.arctan2(omq[..., 1], omq[..., 0]), 2.0 * np.pi)

        pts = surf.shape_obj.point(thq, phq)
        nrm, _ = surf.shape_obj.normal_jac(thq, phq)
        dens = surf.shape_obj.solid_angle_density(thq, phq)

        d = _PolarData()
        d.n_targets = n_targets
        d.Q = Q
        d.p_eff = p
        d.fac = dens * ((np.sin(s) * ws)[:, None]
                        * np.full((1, prm.m_psi), wpsi)).reshape(1, Q)
        d.targets = targets
        d.pts = pts
        d.nrm = nrm
        d.xdn = np.sum(pts * nrm, axis=-1)
        d.xdiff = targets[:, None, :] - pts
        d.rnear = np.linalg.norm(d.xdiff, axis=-1)

        # theta interpolation on the grid continued across both poles
        theta_ext = np.concatenate([-surf.theta[:p][::-1], surf.theta,
                                    2.0 * np.pi - surf.theta[nt - p:][::-1]])
        d.phys_row = np.concatenate([np.arange(p - 1, -1, -1),
                                     np.arange(nt),
                                     np.arange(nt - 1, nt - p - 1, -1)])
        d.row_shift = np.concatenate([np.full(p, nph // 2, dtype=np.int64),
                                      np.zeros(nt, dtype=np.int64),
                                      np.full(p, nph // 2, dtype=np.int64)])
        pos = np.searchsorted(theta_ext, thq)
        tstart = np.clip(pos - p // 2, 0, theta_ext.size - p).astype(np.int64)
        tnodes = theta_ext[tstart[..., None] + np.arange(p)]
        d.tidx = tstart
        d.tw = _lagrange_weights(tnodes, thq)

        dph = 2.0 * np.pi / nph
        j0 = np.floor(phq / dph).astype(np.int64)
        pstart = j0 - (p // 2 - 1)
        pnodes = (pstart[..., None] + np.arange(p)) * dph
        d.pstart = pstart
        d.pw = _lagrange_weights(pnodes, phq)
        return d

    # -- assembly core -------------------------------------------------------

    def _assemble_rows(self, kernel_vals):
        """Quadrature values (n_targets, Q) -> matrix rows (n_targets, N)."""
        d = self.polar
        surf = self.surf
        N, nph, p = surf.n_nodes, surf.n_phi, d.p_eff
        nt_rows = d.n_targets
        out_r = np.zeros(nt_rows * N)
        out_i = np.zeros(nt_rows * N)
        ar = np.arange(p)
        rows_per = max(1, _CHUNK_ELEMS // (d.Q * p * p))
        for r0 in range(0, nt_rows, rows_per):
            r1 = min(nt_rows, r0 + rows_per)
            v = kernel_vals[r0:r1] * d.fac[r0:r1]
            contrib = (v[:, :, None, None]
                       * d.tw[r0:r1][:, :, :, None]
                       * d.pw[r0:r1][:, :, None, :])
            text = d.tidx[r0:r1][:, :, None] + ar  # extended theta row index
            prow = d.phys_row[text]
            shift = d.row_shift[text]
            pcol = np.mod(d.pstart[r0:r1][:, :, None, None] + shift[..., None]
                          + ar[None, None, None, :], nph)
            cols = prow[..., None] * nph + pcol
            rows = (np.arange(r0, r1, dtype=np.int64) * N)[:, None, None, None]
            idx = (rows + cols).ravel()
            cr = contrib.ravel()
            out_r += np.bincount(idx, weights=cr.real, minlength=nt_rows * N)
            out_i += np.bincount(idx, weights=cr.imag, minlength=nt_rows * N)
        return (out_r + 1j * out_i).reshape(nt_rows, N)

    def _rotation_cols(self):
        # _rot_cols[jp, col] = flat source column seen from a target shifted by jp
        if self._rot_cols is None:
            surf = self.surf
            nt, nph = surf.n_theta, surf.n_phi
            itp = np.arange(nt * nph) // nph
            jpp = np.arange(nt * nph) % nph
            jp = np.arange(nph)[:, None]
            self._rot_cols = itp[None, :] * nph + np.mod(jpp[None, :] - jp, nph)
        return self._rot_cols

    def _expand_scalar(self, rows0):
        """(n_theta, N) first-column rows -> full (N, N) by phi rotation."""
        surf = self.surf
        nt, nph, N = surf.n_theta, surf.n_phi, surf.n_nodes
        cols = self._rotation_cols()
        out = np.empty((N, N), dtype=rows0.dtype)
        row_idx = np.arange(nt) * nph
        for jp in range(nph):
            out[row_idx + jp, :] = rows0[:, cols[jp]]
        return out

    def _expand_spin(self, rows0_2x2):
        """(2, 2, n_theta, N) -> (2, 2, N, N) with spin-1/2 rotation phases."""
        surf = self.surf
        nt, nph, N = surf.n_theta, surf.n_phi, surf.n_nodes
        cols = self._rotation_cols()
        out = np.empty((2, 2, N, N), dtype=complex)
        row_idx = np.arange(nt) * nph
        phi = 2.0 * np.pi * np.arange(nph) / nph
        ph_off = np.exp(-1j * phi)
        for jp in range(nph):
            sel = rows0_2x2[:, :, :, cols[jp]]
            out[0, 0, row_idx + jp, :] = sel[0, 0]
            out[1, 1, row_idx + jp, :] = sel[1, 1]
            out[0, 1, row_idx + jp, :] = ph_off[jp] * sel[0, 1]
            out[1, 0, row_idx + jp, :] = np.conj(ph_off[jp]) * sel[1, 0]
        return out

    # -- operators -----------------------------------------------------------

    def scalar_layer(self, mu):
        """Single layer with Helmholtz kernel at parameter mu, (N, N)."""
        vals = kernels.helmholtz_kernel_r(mu, self.polar.rnear)
        rows = self._assemble_rows(vals)
        return self._expand_scalar(rows) if self.use_symmetry else rows

    def t_block(self, sp: kernels.SpectralPoint):
        """Strongly singular 2x2 block operator, (2, 2, N, N)."""
        d = self.polar
        tk = kernels.t_kernel(sp, d.xdiff)
        rows = np.empty((2, 2, d.n_targets, self.surf.n_nodes), dtype=complex)
        for a in range(2):
            for b in range(2):
                rows[a, b] = self._assemble_rows(tk[..., a, b])
        return self._expand_spin(rows) if self.use_symmetry else rows

    def scalar_rows(self, mu):
        """Generator rows (n_theta, N) of scalar_layer, targets on phi = 0.

        Only meaningful on the axisymmetric fast path, where the full
        matrix is block circulant in phi and these rows generate it.
        """
        if not self.use_symmetry:
            raise ValueError("generator rows need an axisymmetric grid")
        vals = kernels.helmholtz_kernel_r(mu, self.polar.rnear)
        return self._assemble_rows(vals)

    def t_rows(self, sp: kernels.SpectralPoint):
        """Generator rows (2, 2, n_theta, N) of t_block, targets on phi = 0."""
        if not self.use_symmetry:
            raise ValueError("generator rows need an axisymmetric grid")
        d = self.polar
        tk = kernels.t_kernel(sp, d.xdiff)
        rows = np.empty((2, 2, d.n_targets, self.surf.n_nodes), dtype=complex)
        for a in range(2):
            for b in range(2):
                rows[a, b] = self._assemble_rows(tk[..., a, b])
        return rows

    # -- interior potentials of fixed sources ---------------------------------

    def _tile_scalar(self, vals):
        """(n_s, n_theta) on the phi = 0 column -> (n_s, N) by symmetry."""
        return np.repeat(vals, self.surf.n_phi, axis=1)

    def _tile_vector(self, vecs):
        """(n_s, n_theta, 3) -> (n_s, N, 3), rotating each vector with its
        phi column."""
        nph = self.surf.n_phi
        phi = self.surf.phi
        cp, sp_ = np.cos(phi), np.sin(phi)
        n_s, nt, _ = vecs.shape
        out = np.empty((n_s, nt, nph, 3), dtype=vecs.dtype)
        out[..., 0] = vecs[:, :, None, 0] * cp - vecs[:, :, None, 1] * sp_
        out[..., 1] = vecs[:, :, None, 0] * sp_ + vecs[:, :, None, 1] * cp
        out[..., 2] = vecs[:, :, None, 2]
        return out.reshape(n_s, nt * nph, 3)

    def _interior_points(self, s):
        d = self.polar
        x = s * d.targets
        diff = d.pts - x[:, None, :]
        return diff, np.linalg.norm(diff, axis=-1)

    def unit_volume_potential(self, mu, s_values):
        """int_Omega phi_mu(|x - y|) dy at the ray points x = s X(node).

        The Newton potential of the constant source is pushed to the wall
        through the divergence identity: the field psi(r) (y - x) with
        psi(r) = r^{-3} int_0^r t phi(t) dt has divergence phi(|y - x|),
        so the volume integral equals oint psi (y - x).nu dS.  The chart
        quadrature resolves the near-wall peak of psi because the peak
        sits at the chart center.  Returns (n_s, N), volume-slab layout.
        """
        d = self.polar
        out = np.empty((len(s_values), d.n_targets), dtype=complex)
        for i, s in enumerate(s_values):
            diff, r = self._interior_points(s)
            psi = kernels.ball_kernel_integral(mu, r) / (4.0 * np.pi * r**3)
            out[i] = np.sum(d.fac * psi * np.sum(diff * d.nrm, -1), axis=1)
        return self._tile_scalar(out) if self.use_symmetry else out

    def normal_layer_potential(self, mu, s_values):
        """oint phi_mu(|x - y|) nu(y) dS(y) at x = s X(node), (n_s, N, 3).

        By the divergence theorem this equals int_Omega grad_y phi dy, so
        it carries the volume integrals of the gradient-type kernels: the
        off-diagonal relativistic kernel integrates to i sigma . (this)
        because t_j(x - y) = d/dy_j [i phi(|y - x|)].
        """
        d = self.polar
        out = np.empty((len(s_values), d.n_targets, 3), dtype=complex)
        for i, s in enumerate(s_values):
            _, r = self._interior_points(s)
            phi = kernels.helmholtz_kernel_r(mu, r)
            out[i] = np.sum((d.fac * phi)[..., None] * d.nrm, axis=1)
        return self._tile_vector(out) if self.use_symmetry else out

    def first_moment_volume_potential(self, mu, s_values):
        """int_Omega phi_mu(|x - y|) (y - x) dy at x = s X(node), (n_s, N, 3).

        Divergence identity with the field chi(r) (y - x)_j (y - x): the
        radial profile chi solves r chi' + 4 chi = phi, so the volume
        moment equals oint chi (y - x)_j (y - x).nu dS.
        """
        d = self.polar
        out = np.empty((len(s_values), d.n_targets, 3), dtype=complex)
        for i, s in enumerate(s_values):
            diff, r = self._interior_points(s)
            chi = kernels.ball_kernel_moment(mu, r) / r**4
            w = d.fac * chi * np.sum(diff * d.nrm, -1)
            out[i] = np.einsum("tq,tqj->tj", w, diff)
        return self._tile_vector(out) if self.use_symmetry else out

    def shell_scalar_rows(self, mu, s):
        """Rows (N, N) sending node samples of f on the scaled surface s X
        to oint phi(|x_t - s y|) f(s y) (y.nu(y)) dS(y) at every node x_t.

        These are the building blocks of the volume-to-trace map: with the
        radial substitution y = s X the volume element is
        s^2 (X.nu) J ds dtheta dphi, so the trace of the Newton potential
        is the s-weighted sum of these shell integrals, and the shell
        samples coincide with the product volume grid.
        """
        d = self.polar
        dist = np.linalg.norm(d.targets[:, None, :] - s * d.pts, axis=-1)
        vals = kernels.helmholtz_kernel_r(mu, dist) * d.xdn
        rows = self._assemble_rows(vals)
        return self._expand_scalar(rows) if self.use_symmetry else rows

    def shell_to_shell_rows(self, mu, s_target, s_source):
        """Rows (N, N) of the shell integral taken at interior ray points
        s_target X(node) instead of the wall; same convention as
        shell_scalar_rows otherwise.

        The chart quadrature keeps its accuracy when the two shells come
        close, because the kernel peak then sits at the chart center.
        """
        d = self.polar
        dist = np.linalg.norm(s_target * d.targets[:, None, :]
                              - s_source * d.pts, axis=-1)
        vals = kernels.helmholtz_kernel_r(mu, dist) * d.xdn
        rows = self._assemble_rows(vals)
        return self._expand_scalar(rows) if self.use_symmetry else rows

    def layer_rows_at_shell(self, mu, s):
        """Single layer rows (N, N) evaluated at the interior ray points
        s X(node) instead of on the wall; same density convention as
        scalar_layer.

        Stays accurate at small wall clearance: the nearest wall point of
        an interior ray target is its own chart center, so the kernel
        peak falls where the chart nodes cluster.
        """
        d = self.polar
        dist = np.linalg.norm(s * d.targets[:, None, :] - d.pts, axis=-1)
        vals = kernels.helmholtz_kernel_r(mu, dist)
        rows = self._assemble_rows(vals)
        return self._expand_scalar(rows) if self.use_symmetry else rows

    def layer_t_rows_at_shell(self, sp: kernels.SpectralPoint, s):
        """(2, 2, N, N) analogue of layer_rows_at_shell for the
        off-diagonal relativistic kernel."""
        d = self.polar
        diff = s * d.targets[:, None, :] - d.pts
        tk = kernels.t_kernel(sp, diff)
        rows = np.empty((2, 2, d.n_targets, self.surf.n_nodes), dtype=complex)
        for a in range(2):
            for b in range(2):
                rows[a, b] = self._assemble_rows(tk[..., a, b])
        return self._expand_spin(rows) if self.use_symmetry else rows

    def shell_t_rows(self, sp: kernels.SpectralPoint, s):
        """(2, 2, N, N) analogue of shell_scalar_rows for the off-diagonal
        relativistic kernel."""
        d = self.polar
        diff = d.targets[:, None, :] - s * d.pts
        tk = kernels.t_kernel(sp, diff) * d.xdn[..., None, None]
        rows = np.empty((2, 2, d.n_targets, self.surf.n_nodes), dtype=complex)
        for a in range(2):
            for b in range(2):
                rows[a, b] = self._assemble_rows(tk[..., a, b])
        return self._expand_spin(rows) if self.use_symmetry else rows

    def green_block(self, sp: kernels.SpectralPoint):
        """Full 4x4 block operator with the relativistic Green kernel."""
        N = self.surf.n_nodes
        S = self.scalar_layer(sp.mu)
        T = self.t_block(sp)
        zn, c = sp.z_nr, sp.c
        C = np.zeros((4, 4, N, N), dtype=complex)
        C[0, 0] = C[1, 1] = (zn / c**2 + 1.0) * S
        C[2, 2] = C[3, 3] = (zn / c**2) * S
        C[:2, 2:] = T / c
        C[2:, :2] = T / c
        return C

    # -- pointwise multiplication fields --------------------------------------

    def alpha_nu_field(self):
        """(4, 4, N): alpha . nu at each node, as a node-diagonal operator."""
        return np.transpose(spinor.alpha_dot(self.surf.normals), (1, 2, 0))

    def sigma_nu_field(self):
        return np.transpose(spinor.sigma_dot(self.surf.normals), (1, 2, 0))


def _lagrange_weights(xnodes, x):
    """Lagrange cardinal weights; xnodes (..., p), x (...)."""
    p = xnodes.shape[-1]
    diff = x[..., None] - xnodes
    w = np.empty_like(xnodes)
    for a in range(p):
        num = np.ones_like(x)
        den = 1.0
        xa = xnodes[..., a]
        for b in range(p):
            if b == a:
                continue
            num = num * diff[..., b]
            den = den * (xa - xnodes[..., b])
        w[..., a] = num / den
    return w


# -- block layout helpers ------------------------------------------------------


def blocks_to_dense(blk):
    """(b, b, N, N) -> (bN, bN), component-major (row index a*N + i)."""
    b, _, n, _ = blk.shape
    return np.transpose(blk, (0, 2, 1, 3)).reshape(b * n, b * n)


def dense_to_blocks(mat, b):
    n = mat.shape[0] // b
    return np.transpose(mat.reshape(b, n, b, n), (0, 2, 1, 3))


def field_to_blocks(field):
    """Node-diagonal (b, b, N) multiplication operator as (b, b, N, N)."""
    b, _, n = field.shape
    out = np.zeros((b, b, n, n), dtype=field.dtype)
    idx = np.arange(n)
    out[:, :, idx, idx] = field
    return out


def diag_left(field, blk):
    """Node-diagonal field times block operator."""
    return np.einsum("abi,bcij->acij", field, blk)


def diag_right(blk, field):
    return np.einsum("abij,bcj->acij", blk, field)


# -- Birman-Schwinger style operators --------------------------------------------


def bs_blocks(grid: BoundaryGrid, sp: kernels.SpectralPoint, kappa):
    """theta_c + M_c C_z M_c as (4, 4, N, N) blocks."""
    c = sp.c
    a_plus, a_minus = spinor.bag_coefficients(kappa)
    m = np.array([1.0, 1.0, np.sqrt(c), np.sqrt(c)])
    th = np.array([a_plus / c, a_plus / c, a_minus, a_minus])
    C = grid.green_block(sp)
    out = m[:, None, None, None] * m[None, :, None, None] * C
    n = grid.surf.n_nodes
    idx = np.arange(n)
    for a in range(4):
        out[a, a, idx, idx] += th[a]
    return out


def _schur_pieces(grid, sp, kappa):
    c = sp.c
    a_plus, a_minus = spinor.bag_coefficients(kappa)
    S = grid.scalar_layer(sp.mu)
    T = grid.t_block(sp)
    n = S.shape[0]
    K = a_minus * np.eye(n) + (sp.z_nr / c) * S
    return S, T, K, a_plus


def schur_blocks(grid: BoundaryGrid, sp: kernels.SpectralPoint, kappa):
    """Schur complement of the lower-right block of bs_blocks, (2, 2, N, N).

    The lower-right block is scalar, a_minus I + (z_nr/c) S acting
    componentwise, so one size-N inverse serves both spinor components.
    """
    c = sp.c
    S, T, K, a_plus = _schur_pieces(grid, sp, kappa)
    n = S.shape[0]
    flatT = np.transpose(T, (2, 0, 1, 3)).reshape(n, -1)
    KinvT = np.linalg.solve(K, flatT).reshape(n, 2, 2, n).transpose(1, 2, 0, 3)
    out = np.empty((2, 2, n, n), dtype=complex)
    coef = sp.z_nr / c**2 + 1.0
    idx = np.arange(n)
    for a in range(2):
        for b in range(2):
            acc = T[a, 0] @ KinvT[0, b] + T[a, 1] @ KinvT[1, b]
            out[a, b] = -acc / c
            if a == b:
                out[a, b] += coef * S
                out[a, b, idx, idx] += a_plus / c
    return out


def schur_solve(grid: BoundaryGrid, sp: kernels.SpectralPoint, kappa, rhs):
    """Solve (theta_c + M_c C M_c) x = rhs through the Schur factorization."""
    import scipy.linalg as sla

    c = sp.c
    S, T, K, a_plus = _schur_pieces(grid, sp, kappa)
    n = S.shape[0]
    rhs = np.asarray(rhs)
    u = rhs[: 2 * n].reshape(2, n)
    low = rhs[2 * n:].reshape(2, n)

    lu_K = sla.lu_factor(K)

    def K_inv(vec2):
        return sla.lu_solve(lu_K, vec2.T).T

    def T_apply(vec2):
        return np.einsum("abij,bj->ai", T, vec2) / np.sqrt(c)

    St = blocks_to_dense(schur_blocks(grid, sp, kappa))
    xu = np.linalg.solve(St, (u - T_apply(K_inv(low))).reshape(-1)).reshape(2, n)
    xl = K_inv(low - T_apply(xu))
    return np.concatenate([xu.reshape(-1), xl.reshape(-1)])


def neumann_lower_inverse(S, sp: kernels.SpectralPoint, kappa, n_terms=20):
    """(a_minus I + (z_nr/c) S)^{-1} by geometric series; converges when
    |z_nr| ||S|| < |a_minus| c."""
    a_minus = spinor.bag_coefficients(kappa)[1]
    n = S.shape[0]
    ratio = -sp.z_nr / (a_minus * sp.c)
    acc = np.eye(n, dtype=complex)
    term = np.eye(n, dtype=complex)
    for _ in range(n_terms - 1):
        term = ratio * (S @ term)
        acc += term
    return acc / a_minus


# -- smooth probe band ---------------------------------------------------------------


def smooth_probe_basis(surf, degree):
    """Weight-orthonormal band of smooth parametric densities, (N, K).

    Columns span associated-Legendre-times-trig functions of the chart
    angles up to the given degree, orthonormalized under the surface
    quadrature weights.  Operator identities are certified against this
    band: a principal-value or jump defect shows up on smooth densities at
    full strength, whereas matrix norms over the whole node space are
    dominated by interpolation damping of modes near the grid Nyquist,
    which no pointwise quadrature controls.
    """
    from scipy.special import lpmv

    th = np.repeat(surf.theta, surf.n_phi)
    ph = np.tile(surf.phi, surf.n_theta)
    ct = np.cos(th)
    cols = []
    for l in range(degree + 1):
        for m in range(-l, l + 1):
            P = lpmv(abs(m), l, ct)
            if m < 0:
                f = P * np.sin(abs(m) * ph)
            elif m == 0:
                f = P
            else:
                f = P * np.cos(m * ph)
            nrm = np.sqrt(np.sum(surf.weights * f * f))
            cols.append(f / nrm)
    B = np.array(cols).T
    G = B.T @ (surf.weights[:, None] * B)
    L = np.linalg.cholesky(G)
    return np.linalg.solve(L, B.T).T


def _spinor_probe(surf, degree, b):
    B = smooth_probe_basis(surf, degree)
    return np.kron(np.eye(b), B)


# -- Calderon-type identity --------------------------------------------------------


def calderon_residual(grid: BoundaryGrid, probe_degree=8):
    """Residual of 4 (C A_nu)^2 + I at z = 0, c = 1 on the smooth probe band.

    The identity holds in the continuum for any smooth boundary, so the
    projected residual measures the quality of the principal-value
    discretization and must vanish under grid refinement.
    """
    sp = kernels.SpectralPoint(0.0, 1.0)
    M = blocks_to_dense(diag_right(grid.green_block(sp), grid.alpha_nu_field()))
    surf = grid.surf
    B = _spinor_probe(surf, probe_degree, 4)
    RB = 4.0 * (M @ (M @ B)) + B
    del M
    w = np.tile(surf.weights, 4)
    proj = B.T @ (w[:, None] * RB)
    return float(np.linalg.norm(proj, 2))


def layer_positivity_metrics(grid: BoundaryGrid, mu, probe_degree=8):
    """(hermiticity residual, smallest eigenvalue) of S_mu on the probe band.

    For mu < 0 the continuum operator is self-adjoint and non-negative.
    """
    S = grid.scalar_layer(mu)
    surf = grid.surf
    B = smooth_probe_basis(surf, probe_degree)
    proj = B.T @ (surf.weights[:, None] * (S @ B))
    herm = float(np.linalg.norm(proj - proj.conj().T, 2))
    ev = np.linalg.eigvalsh(0.5 * (proj + proj.conj().T))
    return herm, float(ev.min())


# -- off-surface potentials --------------------------------------------------------


def _target_distances(surf, targets, guard):
    d = np.asarray(targets, dtype=float)[:, None, :] - surf.nodes[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    if np.min(r) < guard * surf.mesh_h:
        raise ValueError(
            "target within %.1f mesh lengths of the surface; plain quadrature "
            "is unreliable there" % guard)
    return d, r


def apply_scalar_layer_potential(mu, surf, density, targets, guard=2.0):
    """Evaluate the scalar single-layer potential at off-surface targets."""
    _, r = _target_distances(surf, targets, guard)
    return (kernels.helmholtz_kernel_r(mu, r) * surf.weights[None, :]) @ density


def apply_dirac_layer_potential(sp, surf, density, targets, guard=2.0):
    """Evaluate the 4-spinor layer potential; density (N, 4) -> (M, 4)."""
    d, _ = _target_distances(surf, targets, guard)
    G = kernels.green_matrix(sp, d)
    return np.einsum("mnab,n,nb->ma", G, surf.weights, np.asarray(density))


# -- serialization ------------------------------------------------------------------

_MAGIC = b"BBOP"
_VERSION = 1


def dump_blocks(path, blk):
    """Write a block operator as dense complex128 LE with a 16-byte header."""
    blk = np.asarray(blk)
    b, n = blk.shape[0], blk.shape[2]
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<III", _VERSION, b, n))
        f.write(np.ascontiguousarray(blocks_to_dense(blk)).astype("<c16").tobytes())


def load_blocks(path):
    with open(path, "rb") as f:
        head = f.read(16)
        if head[:4] != _MAGIC:
            raise ValueError("not a block operator dump")
        ver, b, n = struct.unpack("<III", head[4:16])
        if ver != _VERSION:
            raise ValueError(f"unsupported dump version {ver}")
        data = np.frombuffer(f.read(), dtype="<c16").reshape(b * n, b * n)
    return dense_to_blocks(data.astype(complex), b)
