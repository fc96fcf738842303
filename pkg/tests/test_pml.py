"""Absorbing-layer coefficient tests against a finite-difference map oracle."""

import numpy as np
import pytest

from fiberfem.pml import PmlProfile, coeffs_at, coeffs_grid, phi

PROFILE = PmlProfile(r0=4.385, r1=8.05166666, alpha=2.0)


def map_fd_jacobian(profile, x, step=1e-6):
    """Independent oracle: central differences of the complex stretch map.

    The map is Phi(x) = x * zeta(|x|); kappa and gamma follow from its
    Jacobian as kappa = 1/det(J) and gamma = det(J) J^{-T} J^{-1}.
    """

    def mapped(p):
        from fiberfem.pml import phi_derivatives

        r = np.hypot(p[0], p[1])
        zeta = 1.0 - 1j * phi_derivatives(profile, r)[0]
        return p * zeta

    J = np.zeros((2, 2), dtype=complex)
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        J[:, j] = (mapped(x + e) - mapped(x - e)) / (2 * step)
    return J


class TestPhi:
    def test_zero_at_inner_radius(self):
        assert phi(PROFILE, PROFILE.r0) == 0.0

    def test_alpha_at_outer_radius(self):
        assert phi(PROFILE, PROFILE.r1) == pytest.approx(PROFILE.alpha, abs=1e-14)

    def test_half_alpha_at_midpoint(self):
        mid = 0.5 * (PROFILE.r0 + PROFILE.r1)
        assert phi(PROFILE, mid) == pytest.approx(PROFILE.alpha / 2, abs=1e-14)

    def test_clamped_outside(self):
        assert phi(PROFILE, 0.0) == 0.0
        assert phi(PROFILE, 2 * PROFILE.r1) == pytest.approx(PROFILE.alpha, abs=1e-14)


class TestCoeffsAt:
    def test_identity_inside(self):
        c = coeffs_at(PROFILE, np.array([1.0, -2.0]))
        assert c.kappa == 1.0
        np.testing.assert_array_equal(c.gamma, np.eye(2))
        np.testing.assert_array_equal(c.grad_kappa, np.zeros(2))
        np.testing.assert_array_equal(c.div_gamma_rows, np.zeros(2))

    def test_alpha_zero_degenerates_to_identity(self):
        prof = PmlProfile(r0=1.0, r1=2.0, alpha=0.0)
        c = coeffs_at(prof, np.array([1.5, 0.3]))
        assert c.kappa == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(c.gamma, np.eye(2), atol=1e-15)

    def test_against_map_oracle_at_midpoint(self):
        rmid = 0.5 * (PROFILE.r0 + PROFILE.r1)
        x = rmid * np.array([np.cos(0.7), np.sin(0.7)])
        J = map_fd_jacobian(PROFILE, x)
        det = np.linalg.det(J)
        Jinv = np.linalg.inv(J)
        kappa_fd = 1.0 / det
        gamma_fd = det * (Jinv.T @ Jinv)
        c = coeffs_at(PROFILE, x)
        np.testing.assert_allclose(c.kappa, kappa_fd, rtol=1e-6)
        np.testing.assert_allclose(c.gamma, gamma_fd, rtol=1e-6)

    def test_frozen_midpoint_values(self):
        # frozen from the finite-difference map oracle above (step 1e-6)
        rmid = 0.5 * (PROFILE.r0 + PROFILE.r1)
        x = np.array([rmid, 0.0])
        c = coeffs_at(PROFILE, x)
        np.testing.assert_allclose(c.kappa, FROZEN_KAPPA, rtol=1e-9)
        np.testing.assert_allclose(c.gamma, FROZEN_GAMMA, rtol=1e-9)


class TestDerivativeConsistency:
    def test_grad_kappa_and_div_gamma_match_fd(self):
        rng = np.random.default_rng(7)
        step = 1e-6
        for _ in range(100):
            r = rng.uniform(PROFILE.r0 + 0.05, PROFILE.r1 - 0.05)
            th = rng.uniform(0, 2 * np.pi)
            x = r * np.array([np.cos(th), np.sin(th)])
            c = coeffs_at(PROFILE, x)
            gk_fd = np.zeros(2, dtype=complex)
            dg_fd = np.zeros(2, dtype=complex)
            for j in range(2):
                e = np.zeros(2)
                e[j] = step
                cp = coeffs_at(PROFILE, x + e)
                cm = coeffs_at(PROFILE, x - e)
                gk_fd[j] = (cp.kappa - cm.kappa) / (2 * step)
                # row divergence: sum_j d(gamma_ij)/dx_j
                dg_fd += (cp.gamma[:, j] - cm.gamma[:, j]) / (2 * step)
            np.testing.assert_allclose(c.grad_kappa, gk_fd, rtol=1e-6)
            np.testing.assert_allclose(c.div_gamma_rows, dg_fd, rtol=1e-6)


class TestInvariants:
    def test_continuity_across_inner_radius(self):
        for th in (0.0, 1.1, 3.9):
            d = np.array([np.cos(th), np.sin(th)])
            cin = coeffs_at(PROFILE, (PROFILE.r0 - 1e-9) * d)
            cout = coeffs_at(PROFILE, (PROFILE.r0 + 1e-9) * d)
            assert abs(cin.kappa - cout.kappa) < 1e-10
            assert np.abs(cin.gamma - cout.gamma).max() < 1e-10

    def test_det_consistency_from_eta_fields(self):
        # gamma rebuilt as zeta*eta' * J^{-T} J^{-1} with J from the eta fields
        rng = np.random.default_rng(3)
        for _ in range(20):
            r = rng.uniform(PROFILE.r0, PROFILE.r1)
            th = rng.uniform(0, 2 * np.pi)
            x = r * np.array([np.cos(th), np.sin(th)])
            c = coeffs_at(PROFILE, x)
            xc = x.astype(complex)
            J = (c.zeta_p / r) * np.outer(xc, xc) + c.zeta * np.eye(2)
            Jinv = np.linalg.inv(J)
            gamma_j = c.det_j * (Jinv.T @ Jinv)
            np.testing.assert_allclose(c.gamma, gamma_j, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(np.linalg.det(J), c.det_j, rtol=1e-12)
            np.testing.assert_allclose(np.trace(c.gamma), np.trace(gamma_j), rtol=1e-12)

    def test_conjugate_coefficients_are_field_conjugates(self):
        x = np.array([5.0, 1.0])
        c = coeffs_at(PROFILE, x)
        g = coeffs_grid(PROFILE, x[None, :])
        np.testing.assert_array_equal(np.conj(g["kappa"][0]), np.conj(c.kappa))
        np.testing.assert_array_equal(np.conj(g["gamma"][0]), np.conj(c.gamma))
        np.testing.assert_array_equal(
            np.conj(g["det_j"][0]), np.conj(c.zeta * c.eta_p)
        )

    def test_grid_matches_pointwise(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-PROFILE.r1, PROFILE.r1, size=(50, 2))
        g = coeffs_grid(PROFILE, pts)
        for i, p in enumerate(pts):
            c = coeffs_at(PROFILE, p)
            np.testing.assert_allclose(g["kappa"][i], c.kappa, rtol=1e-14)
            np.testing.assert_allclose(g["gamma"][i], c.gamma, rtol=1e-14, atol=1e-16)


class TestValidation:
    def test_bad_radii_rejected(self):
        with pytest.raises(ValueError):
            PmlProfile(r0=2.0, r1=1.0, alpha=1.0)
        with pytest.raises(ValueError):
            PmlProfile(r0=-1.0, r1=1.0, alpha=1.0)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            PmlProfile(r0=1.0, r1=2.0, alpha=-0.5)


# frozen oracle values, see TestCoeffsAt.test_frozen_midpoint_values
FROZEN_KAPPA = complex(-0.057642592959517167, 0.075770166171575837)
FROZEN_GAMMA = np.array([
    [complex(0.15154033234317374, 0.11528518591903136), 0.0],
    [0.0, complex(4.17982955003278, -3.1798295498927391)],
])
