"""Independent oracles shared by the test suite.

The quadrature here is a different family from the production rules: a
uniform subdivision of the reference triangle with a classical 7-point
degree-5 rule on each cell, driven through plain Python loops with explicit
covariant push-forwards.  It exists to cross-check assembly quadrature,
vectorization, and scatter logic, so it deliberately avoids the batched
production code path.
"""

import numpy as np

from fiberfem.fespace import (
    geometry_nodes,
    map_geometry,
    tabulate_lagrange,
    tabulate_nedelec,
)
from fiberfem.pml import coeffs_at

_S15 = np.sqrt(15.0)
_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [(6 - _S15) / 21, (6 - _S15) / 21, (9 + 2 * _S15) / 21],
        [(6 - _S15) / 21, (9 + 2 * _S15) / 21, (6 - _S15) / 21],
        [(9 + 2 * _S15) / 21, (6 - _S15) / 21, (6 - _S15) / 21],
        [(6 + _S15) / 21, (6 + _S15) / 21, (9 - 2 * _S15) / 21],
        [(6 + _S15) / 21, (9 - 2 * _S15) / 21, (6 + _S15) / 21],
        [(9 - 2 * _S15) / 21, (6 + _S15) / 21, (6 + _S15) / 21],
    ]
)
_W7 = np.array(
    [9 / 40]
    + [(155 - _S15) / 1200] * 3
    + [(155 + _S15) / 1200] * 3
)


def subdivision_rule(k: int):
    """Degree-5 rule on each cell of a k x k uniform split of the triangle."""
    pts = []
    wts = []
    for i in range(k):
        for j in range(k - i):
            v = np.array([[i, j], [i + 1, j], [i, j + 1]]) / k
            pts.extend(_BARY @ v)
            wts.extend(_W7 / (2 * k * k))
            if i + j < k - 1:
                v = np.array([[i + 1, j], [i + 1, j + 1], [i, j + 1]]) / k
                pts.extend(_BARY @ v)
                wts.extend(_W7 / (2 * k * k))
    return np.array(pts), np.array(wts)


def collapsed_gl_rule(n: int):
    """Plain Gauss-Legendre tensor rule on the collapsed square.

    Unlike the production rule this keeps the (1 - v) area factor in the
    weights explicitly instead of absorbing it into a Jacobi weight, so the
    node/weight family is genuinely different.
    """
    xg, wg = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (xg + 1)
    w1 = 0.5 * wg
    uu, vv = np.meshgrid(u, u, indexing="ij")
    pts = np.column_stack([(uu * (1 - vv)).ravel(), vv.ravel()])
    wts = (np.outer(w1, w1) * (1 - vv)).ravel()
    return pts, wts


def local_matrices_oracle(mesh, spaces, coeff, T, n_gauss=24):
    """Dense per-point evaluation of all five local forms on element T."""
    pts, wts = collapsed_gl_rule(n_gauss)
    flips = tuple(bool(f) for f in spaces.edge_flips[T])
    ned = tabulate_nedelec(spaces.p, flips, pts)
    lag = tabulate_lagrange(spaces.p + 1, pts)
    geo = map_geometry(geometry_nodes(mesh)[T : T + 1], pts, element_ids=[T])

    mat = int(mesh.materials[T])
    ntau2 = coeff.n_tau2[mat]
    n2sq = coeff.n_2sq[mat]
    V = coeff.v_well(mat)

    nb_n = ned["val"].shape[0]
    nb_l = lag["val"].shape[0]
    a = np.zeros((nb_n, nb_n), complex)
    m = np.zeros((nb_n, nb_n), complex)
    c = np.zeros((nb_n, nb_l), complex)
    b = np.zeros((nb_l, nb_n), complex)
    d = np.zeros((nb_l, nb_l), complex)

    for q in range(len(pts)):
        J = geo["jac"][0, q]
        det = geo["det"][0, q]
        invJT = np.linalg.inv(J).T
        x = geo["x"][0, q]
        pc = coeffs_at(coeff.pml, x)
        w = wts[q] * det
        vals = ned["val"][:, q] @ invJT.T        # (nb_n, 2) covariant push
        curls = ned["curl"][:, q] / det
        lvals = lag["val"][:, q]
        lgrads = lag["grad"][:, q] @ invJT.T
        gvals = vals @ pc.gamma.T
        glgrads = lgrads @ pc.gamma.T
        a += w * (pc.kappa * np.outer(curls, curls) + V * vals @ gvals.T)
        m += w * (vals @ gvals.T)
        c += w * (vals @ glgrads.T)
        b += w * ntau2 * (lgrads @ gvals.T)
        d -= w * n2sq * pc.det_j * np.outer(lvals, lvals)
    return {"a": a, "m": m, "c": c, "b": b, "d": d}


def random_triangle(rng, center, scale, min_angle=25.0):
    """Well-shaped random triangle around a center point (ccw)."""
    while True:
        v = center + scale * rng.uniform(-1, 1, size=(3, 2))
        e1, e2 = v[1] - v[0], v[2] - v[0]
        det = e1[0] * e2[1] - e1[1] * e2[0]
        if det < 0:
            v = v[[0, 2, 1]]
        angs = []
        for i in range(3):
            a = v[(i + 1) % 3] - v[i]
            b = v[(i + 2) % 3] - v[i]
            cosang = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
            angs.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
        if min(angs) >= min_angle:
            return v
