"""Radial absorbing-layer coordinate map and its induced complex coefficients.

The layer occupies the annulus ``r0 < |x| < r1``.  Coordinates are stretched
radially by ``x -> x * zeta(r)`` with ``zeta(r) = 1 - i phi(r)``, where ``phi``
is a quintic ramp vanishing together with its first two derivatives at ``r0``
and flattening out at the strength value ``alpha`` for ``r >= r1``.  Writing
``eta(r) = r zeta(r)`` for the stretched radius, the map Jacobian is

    J = (zeta'/r) x x^T + zeta I,      det J = zeta eta',

and pulling the stretched curl/grad/mass terms back to the unstretched frame
produces a scalar coefficient ``kappa = 1/(zeta eta')`` on curl-curl terms, a
symmetric matrix ``gamma = zeta eta' J^{-T} J^{-1}`` on vector terms, and the
volume factor ``zeta eta'`` on scalar terms.  In the eigenvalue plane this
stretch direction puts lossy (leaky) modes at ``Im(Z^2) >= 0``.

Everything here is closed form: ``phi`` is an explicit quintic polynomial and
all derivatives are evaluated by the chain rule, never by numerical
differentiation or quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PmlProfile", "PmlCoeffs", "phi", "phi_derivatives", "coeffs_at", "coeffs_grid"]


@dataclass(frozen=True)
class PmlProfile:
    """Radial absorber profile: inner radius, outer radius, strength."""

    r0: float
    r1: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.r0 < self.r1:
            raise ValueError(f"need 0 < r0 < r1, got r0={self.r0}, r1={self.r1}")
        if self.alpha < 0.0:
            raise ValueError(f"strength alpha must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class PmlCoeffs:
    """Stretch map data and derived coefficients at a single point.

    ``gamma`` is the symmetric 2x2 matrix weighting vector terms,
    ``kappa`` the scalar weighting curl-curl terms, ``grad_kappa`` its
    gradient and ``div_gamma_rows`` the divergence of each row of gamma.
    ``det_j = zeta * eta_p`` is the complex volume factor.
    """

    eta: complex
    eta_p: complex
    eta_pp: complex
    zeta: complex
    zeta_p: complex
    kappa: complex
    gamma: np.ndarray
    grad_kappa: np.ndarray
    div_gamma_rows: np.ndarray

    @property
    def det_j(self) -> complex:
        return self.zeta * self.eta_p


def _ramp_constants(profile: PmlProfile):
    # antiderivative of (s - r0)^2 (s - r1)^2 from r0, normalized to reach 1 at r1
    c = profile.r1 - profile.r0
    return c, c**5 / 30.0


def phi(profile: PmlProfile, r: float) -> float:
    """Quintic ramp: 0 for r <= r0, alpha for r >= r1, smooth (C^2) between."""
    return phi_derivatives(profile, r)[0]


def phi_derivatives(profile: PmlProfile, r):
    """Return (phi, phi', phi'') at radius r (scalar or array)."""
    r = np.asarray(r, dtype=float)
    c, norm = _ramp_constants(profile)
    x = np.clip(r - profile.r0, 0.0, c)
    scale = profile.alpha / norm
    p = scale * (x**5 / 5.0 - c * x**4 / 2.0 + c**2 * x**3 / 3.0)
    inside = (r > profile.r0) & (r < profile.r1)
    dp = np.where(inside, scale * x**2 * (x - c) ** 2, 0.0)
    ddp = np.where(inside, scale * 2.0 * x * (x - c) * (2.0 * x - c), 0.0)
    if p.ndim == 0:
        return float(p), float(dp), float(ddp)
    return p, dp, ddp


def coeffs_grid(profile: PmlProfile, points: np.ndarray) -> dict:
    """Vectorized coefficient evaluation at an array of points.

    Parameters
    ----------
    points : array of shape (..., 2)

    Returns
    -------
    dict with complex arrays: ``kappa (...)``, ``gamma (..., 2, 2)``,
    ``grad_kappa (..., 2)``, ``div_gamma_rows (..., 2)``, ``det_j (...)``,
    plus the scalar map data ``eta, eta_p, eta_pp, zeta, zeta_p``.
    """
    pts = np.asarray(points, dtype=float)
    r = np.sqrt(pts[..., 0] ** 2 + pts[..., 1] ** 2)
    p, dp, ddp = phi_derivatives(profile, r)

    zeta = 1.0 - 1j * p
    zeta_p = -1j * dp
    zeta_pp = -1j * ddp
    eta = r * zeta
    eta_p = zeta + r * zeta_p
    eta_pp = 2.0 * zeta_p + r * zeta_pp

    kappa = 1.0 / (zeta * eta_p)
    det_j = zeta * eta_p

    # radial/tangential eigenvalues of gamma and their radial derivatives
    a = zeta / eta_p
    b = eta_p / zeta
    a_p = (zeta_p * eta_p - zeta * eta_pp) / eta_p**2
    kappa_p = -(zeta_p * eta_p + zeta * eta_pp) / det_j**2

    # unit radial direction; coefficients are constant (identity) where the
    # ramp vanishes, so the r=0 branch never divides by r
    active = dp != 0.0
    inv_r = np.where(r > 0.0, 1.0 / np.where(r > 0.0, r, 1.0), 0.0)
    xhat = pts * inv_r[..., None]

    eye = np.zeros(pts.shape[:-1] + (2, 2), dtype=complex)
    eye[..., 0, 0] = 1.0
    eye[..., 1, 1] = 1.0
    gamma = b[..., None, None] * eye + (a - b)[..., None, None] * (
        xhat[..., :, None] * xhat[..., None, :]
    )

    grad_kappa = np.where(active[..., None], kappa_p[..., None] * xhat, 0.0 + 0.0j)
    div_g = a_p + (a - b) * inv_r
    div_gamma_rows = np.where(active[..., None], div_g[..., None] * xhat, 0.0 + 0.0j)

    return {
        "kappa": kappa,
        "gamma": gamma,
        "grad_kappa": grad_kappa,
        "div_gamma_rows": div_gamma_rows,
        "det_j": det_j,
        "eta": eta,
        "eta_p": eta_p,
        "eta_pp": eta_pp,
        "zeta": zeta,
        "zeta_p": zeta_p,
    }


def coeffs_at(profile: PmlProfile, x) -> PmlCoeffs:
    """Evaluate the map and all derived coefficients at one point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"expected a single 2d point, got shape {x.shape}")
    r = float(np.hypot(x[0], x[1]))
    if r == 0.0 and profile.r0 < 0.0:  # pragma: no cover - unreachable, r0 > 0
        raise ValueError("origin lies inside the absorbing annulus")
    g = coeffs_grid(profile, x[None, :])
    return PmlCoeffs(
        eta=complex(g["eta"][0]),
        eta_p=complex(g["eta_p"][0]),
        eta_pp=complex(g["eta_pp"][0]),
        zeta=complex(g["zeta"][0]),
        zeta_p=complex(g["zeta_p"][0]),
        kappa=complex(g["kappa"][0]),
        gamma=g["gamma"][0],
        grad_kappa=g["grad_kappa"][0],
        div_gamma_rows=g["div_gamma_rows"][0],
    )
