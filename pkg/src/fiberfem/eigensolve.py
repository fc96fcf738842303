"""Contour-filtered subspace eigensolver for sparse complex pencils.

Solves K u = lambda B u for all eigenvalues inside a circular search region,
by subspace iteration on the contour-filtered operator

    P = sum_q w_q (z_q B - K)^{-1} B,

a trapezoidal discretization of the resolvent integral over the circle.  One
sparse LU factorization per quadrature node is built and reused for every
subspace iteration, for the multiple right-hand sides, and (via
conjugate-transpose solves) for the left eigenvectors, which satisfy
u~^H K = lambda u~^H B and are obtained from the same filter applied to the
(K^H, B^H) pencil over the conjugate contour.

Right eigenvectors are normalized in the norm induced by an optional Gram
matrix (Euclidean by default); left eigenvectors are then rescaled so that
B(u_j, u~_k) = delta_jk across the returned cluster.  Zero rows/columns in B
push constraint unknowns to infinite eigenvalues, which a finite contour
never sees, so singular B needs no deflation.

Determinism: fixed quadrature nodes, a seeded initial subspace, and
fixed-order reductions make repeated solves bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "SearchRegion",
    "SolveOptions",
    "EigenCluster",
    "EigensolveError",
    "solve_cluster",
    "solve_pencil",
    "hausdorff",
    "track_center",
]


class EigensolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchRegion:
    center: complex
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("search radius must be positive")

    def contains(self, z, slack=1e-12) -> bool:
        return abs(z - self.center) <= self.radius * (1 + slack)


@dataclass(frozen=True)
class SolveOptions:
    n_nodes: int = 8
    subspace: int = 8
    tol: float = 1e-11
    resid_tol: float = 1e-8
    max_iter: int = 30
    seed: int = 0
    min_radius: float = 5e-3


@dataclass
class EigenCluster:
    """Eigenvalues inside the region with paired right/left eigenvectors."""

    values: np.ndarray
    right: np.ndarray
    left: np.ndarray
    residuals: np.ndarray
    left_residuals: np.ndarray
    region: SearchRegion

    def __len__(self):
        return len(self.values)


def hausdorff(set1, set2) -> float:
    """Symmetric Hausdorff distance between two finite complex sets."""
    a = np.atleast_1d(np.asarray(set1, dtype=complex))
    b = np.atleast_1d(np.asarray(set2, dtype=complex))
    if a.size == 0 or b.size == 0:
        raise ValueError("hausdorff distance needs nonempty sets")
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def track_center(previous: EigenCluster, min_radius: float = 5e-3) -> SearchRegion:
    """Recentered region: mean of the cluster, radius from its spread."""
    if len(previous) == 0:
        raise ValueError("cannot track an empty cluster")
    vals = previous.values
    center = complex(vals.mean())
    diam = float(np.abs(vals[:, None] - vals[None, :]).max())
    return SearchRegion(center=center, radius=max(min_radius, 3.0 * diam))


def _factorize(K, B, region, opts):
    q = np.arange(opts.n_nodes)
    theta = 2 * np.pi * (q + 0.5) / opts.n_nodes
    nodes = region.center + region.radius * np.exp(1j * theta)
    weights = region.radius * np.exp(1j * theta) / opts.n_nodes
    lus = []
    for z in nodes:
        lus.append(splu((z * B - K).tocsc()))
    return nodes, weights, lus


def _filtered(lus, weights, rhs, trans):
    out = np.zeros_like(rhs)
    for lu, w in zip(lus, weights):
        if trans == "N":
            out += w * lu.solve(rhs)
        else:
            out += np.conj(w) * lu.solve(rhs, trans="H")
    return out


def _rayleigh_ritz(Kop, Bop, Q):
    Ak = Q.conj().T @ (Kop @ Q)
    Bk = Q.conj().T @ (Bop @ Q)
    theta, W = sla.eig(Ak, Bk)
    return theta, W


def _subspace_iterate(K, B, lus, weights, region, opts, rng, trans):
    """Run filtered subspace iteration; returns (values, vectors)."""
    n = K.shape[0]
    m0 = min(opts.subspace, n)
    Y = rng.standard_normal((n, m0)) + 1j * rng.standard_normal((n, m0))
    if trans == "N":
        Kop, Bop = K, B
        inside_center = region.center
    else:
        Kop, Bop = K.conj().T.tocsr(), B.conj().T.tocsr()
        inside_center = np.conj(region.center)

    prev_vals = None
    vals = np.array([], dtype=complex)
    U = None
    for _ in range(opts.max_iter):
        S = _filtered(lus, weights, Bop @ Y, trans)
        Q, _ = np.linalg.qr(S)
        theta, W = _rayleigh_ritz(Kop, Bop, Q)
        finite = np.isfinite(theta)
        inside = finite & (np.abs(theta - inside_center) <= region.radius * (1 + 1e-12))
        Y = Q @ W
        if not inside.any():
            prev_vals = None
            continue
        order = np.lexsort((theta[inside].imag, theta[inside].real))
        vals = theta[inside][order]
        U = (Q @ W[:, inside])[:, order]
        resid = _residuals(Kop, Bop, vals, U)
        scale = max(1.0, abs(region.center))
        if (
            prev_vals is not None
            and len(prev_vals) == len(vals)
            and hausdorff(vals, prev_vals) <= opts.tol * scale
            and np.all(resid <= opts.resid_tol)
        ):
            return vals, U
        prev_vals = vals
    if U is None or len(vals) == 0:
        raise EigensolveError(
            f"no eigenvalue found inside the search region "
            f"(center {region.center}, radius {region.radius})"
        )
    resid = _residuals(Kop, Bop, vals, U)
    if np.all(resid <= opts.resid_tol):
        return vals, U
    raise EigensolveError(
        f"subspace iteration did not converge: worst residual {resid.max():.3e}"
    )


def _residuals(Kop, Bop, vals, U):
    KU = Kop @ U
    BU = Bop @ U
    num = np.linalg.norm(KU - BU * vals[None, :], axis=0)
    den = np.linalg.norm(KU, axis=0)
    return num / np.where(den > 0, den, 1.0)


def solve_pencil(K, B, region: SearchRegion, opts: SolveOptions = SolveOptions(),
                 norm_mat=None) -> EigenCluster:
    """Right and left eigenpairs of (K, B) inside a circular region.

    ``norm_mat``: optional Hermitian Gram matrix for right-vector
    normalization (Euclidean norm when omitted).
    """
    K = sp.csr_matrix(K, dtype=complex)
    B = sp.csr_matrix(B, dtype=complex)
    if K.shape != B.shape or K.shape[0] != K.shape[1]:
        raise ValueError("pencil matrices must be square and of equal shape")

    try:
        nodes, weights, lus = _factorize(K, B, region, opts)
    except RuntimeError:
        # contour hit the spectrum: retry once with a perturbed radius
        region = replace(region, radius=region.radius * 1.01)
        try:
            nodes, weights, lus = _factorize(K, B, region, opts)
        except RuntimeError as e:
            raise EigensolveError(
                "contour factorization failed twice (search circle passes "
                "through an eigenvalue)"
            ) from e

    rng = np.random.default_rng(opts.seed)
    vals, U = _subspace_iterate(K, B, lus, weights, region, opts, rng, "N")
    lvals, V = _subspace_iterate(K, B, lus, weights, region, opts, rng, "H")

    # pair left eigenvalues (conjugated) with right ones
    lv = np.conj(lvals)
    if len(lv) != len(vals):
        raise EigensolveError(
            f"left/right cluster sizes differ: {len(lv)} vs {len(vals)}"
        )
    perm = []
    remaining = list(range(len(lv)))
    scale = max(1.0, abs(region.center))
    for j, v in enumerate(vals):
        k = min(remaining, key=lambda i: abs(lv[i] - v))
        if abs(lv[k] - v) > 1e-6 * scale:
            raise EigensolveError(
                f"cannot pair left eigenvalue to right eigenvalue {v}"
            )
        perm.append(k)
        remaining.remove(k)
    V = V[:, perm]

    # normalize right vectors
    for j in range(U.shape[1]):
        if norm_mat is not None:
            nrm = np.sqrt(max(np.real(np.vdot(U[:, j], norm_mat @ U[:, j])), 0.0))
        else:
            nrm = np.linalg.norm(U[:, j])
        U[:, j] /= nrm

    # bi-orthonormalize the left block: (V X)^H B U = I
    W = V.conj().T @ (B @ U)
    sv = np.linalg.svd(W, compute_uv=False)
    if sv[-1] < 1e-12 * sv[0]:
        j = int(np.argmin(np.abs(np.diag(W))))
        raise EigensolveError(
            f"near-defective pair at eigenvalue {vals[j]}: B(u, u~) ~ 0"
        )
    V = V @ np.linalg.inv(W.conj().T)

    res = _residuals(K, B, vals, U)
    KH = K.conj().T.tocsr()
    BH = B.conj().T.tocsr()
    lres = _residuals(KH, BH, np.conj(vals), V)
    return EigenCluster(
        values=vals, right=U, left=V,
        residuals=res, left_residuals=lres, region=region,
    )


def solve_cluster(sys, region: SearchRegion, opts: SolveOptions = SolveOptions()) -> EigenCluster:
    """Eigencluster of an assembled system, H-normalized right vectors."""
    return solve_pencil(
        sys.stiffness, sys.mass, region, opts, norm_mat=sys.h_norm_mat
    )
