"""Reference elements, quadrature, dof management and push-forward maps.

Two spaces are managed as a pair on one triangle mesh: a tangentially
continuous edge-element (Nedelec first kind) space of degree ``p`` for the
transverse field and a continuous Lagrange space of degree ``p + 1`` for the
scalar unknown, both with homogeneous essential conditions on the outer
boundary circle.

Reference bases are constructed once per degree from exact rational
arithmetic (dual-basis inversion over ``fractions.Fraction``), so tabulated
basis functions are machine-exact members of their spans.  Edge degrees of
freedom are moments against shifted Legendre polynomials taken along the
*global* edge direction; per-element orientation is absorbed into one of
eight reference-basis variants, which makes shared tangential dofs agree
between neighbours without sign bookkeeping during assembly.

Elements are mapped with a 6-node quadratic geometry map whose mid-edge
nodes coincide with chord midpoints on straight elements (the map is then
exactly affine) and with circle-projected midpoints on curved ones.  Vector
fields push forward covariantly, ``F = J^{-T} Fhat``, scalar curls by
``curl F = curlhat / det J``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = [
    "QuadRule",
    "SpacePair",
    "DofMap",
    "build_spaces",
    "eval_basis",
    "nedelec_dim",
    "lagrange_dim",
]

_LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))  # edge i is opposite vertex i
_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadRule:
    """Rules on the reference triangle and reference edge [0, 1].

    Verified at construction: triangle monomials ``x^a y^b`` with
    ``a + b <= degree`` and edge monomials ``t^a`` with ``a <= edge_degree``
    integrate exactly (relative error below 5e-13).
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int
    edge_points: np.ndarray
    edge_weights: np.ndarray
    edge_degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0) or np.any(self.edge_weights <= 0):
            raise ValueError("quadrature weights must be positive")
        self._verify()

    def _verify(self):
        from math import factorial

        x, y = self.points[:, 0], self.points[:, 1]
        for a in range(self.degree + 1):
            for b in range(self.degree + 1 - a):
                exact = factorial(a) * factorial(b) / factorial(a + b + 2)
                got = float(self.weights @ (x**a * y**b))
                if abs(got - exact) > 5e-13 * max(1.0, abs(exact)) + 1e-15:
                    raise ValueError(
                        f"triangle rule fails monomial x^{a} y^{b}: {got} vs {exact}"
                    )
        t = self.edge_points
        for a in range(self.edge_degree + 1):
            exact = 1.0 / (a + 1)
            got = float(self.edge_weights @ t**a)
            if abs(got - exact) > 5e-13:
                raise ValueError(f"edge rule fails monomial t^{a}")


@lru_cache(maxsize=32)
def make_quadrule(degree: int, edge_degree: int) -> QuadRule:
    """Collapsed Gauss(-Jacobi) rule on the triangle plus Gauss edge rule."""
    from scipy.special import roots_jacobi

    n = max(2, (degree + 3) // 2)
    xg, wg = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (xg + 1.0)
    wu = 0.5 * wg
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (xj + 1.0)
    wv = 0.25 * wj  # Jacobi weight absorbs the (1 - v) area factor

    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([(uu * (1.0 - vv)).ravel(), vv.ravel()])
    wts = np.outer(wu, wv).ravel()

    ne = max(2, (edge_degree + 3) // 2)
    xe, we = np.polynomial.legendre.leggauss(ne)
    return QuadRule(
        points=pts,
        weights=wts,
        degree=degree,
        edge_points=0.5 * (xe + 1.0),
        edge_weights=0.5 * we,
        edge_degree=edge_degree,
    )


def volume_degree(p: int, curved: bool) -> int:
    d = 2 * (p + 2) + 4
    return d + 4 if curved else d


def edge_quad_degree(p: int) -> int:
    return 2 * (p + 2) + 2


# ---------------------------------------------------------------------------
# exact rational linear algebra for reference-basis construction
# ---------------------------------------------------------------------------


def _frac_solve(A, B):
    """Solve A X = B exactly over Fraction (A: n x n nested lists)."""
    n = len(A)
    m = len(B[0])
    M = [list(map(Fraction, row)) + list(map(Fraction, brow)) for row, brow in zip(A, B)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        inv = Fraction(1, 1) / M[col][col]
        M[col] = [x * inv for x in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [[M[r][n + c] for c in range(m)] for r in range(n)]


def _monomials(deg):
    return [(a, b) for tot in range(deg + 1) for a in range(tot + 1) for b in [tot - a]]


def _poly1_pow(p, k):
    """k-th power of a Fraction 1d polynomial (coefficient list)."""
    out = [Fraction(1)]
    for _ in range(k):
        res = [Fraction(0)] * (len(out) + len(p) - 1)
        for i, a in enumerate(out):
            for j, b in enumerate(p):
                res[i + j] += a * b
        out = res
    return out


def _poly1_mul(a, b):
    res = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            res[i + j] += x * y
    return res


def _poly1_int01(p):
    return sum(c / Fraction(k + 1) for k, c in enumerate(p))


@lru_cache(maxsize=16)
def _shifted_legendre(k):
    """Shifted Legendre P_k(2t - 1) coefficients over Fraction."""
    if k == 0:
        return (Fraction(1),)
    if k == 1:
        return (Fraction(-1), Fraction(2))
    pm2, pm1 = _shifted_legendre(k - 2), _shifted_legendre(k - 1)
    x = (Fraction(-1), Fraction(2))
    t1 = _poly1_mul(x, list(pm1))
    out = [Fraction(0)] * (k + 1)
    for i, c in enumerate(t1):
        out[i] += Fraction(2 * k - 1, k) * c
    for i, c in enumerate(pm2):
        out[i] -= Fraction(k - 1, k) * c
    return tuple(out)


def _tri_monomial_integral(a, b):
    from math import factorial

    return Fraction(factorial(a) * factorial(b), factorial(a + b + 2))


# ---------------------------------------------------------------------------
# Lagrange reference basis (nodal, degree q)
# ---------------------------------------------------------------------------


def lagrange_dim(q: int) -> int:
    return (q + 1) * (q + 2) // 2


def _lagrange_nodes(q):
    """Rational lattice nodes: vertices, edge nodes (local order), interior."""
    verts = [(Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (Fraction(0), Fraction(1))]
    nodes = list(verts)
    for a, b in _LOCAL_EDGES:
        for j in range(1, q):
            t = Fraction(j, q)
            nodes.append(
                (verts[a][0] + t * (verts[b][0] - verts[a][0]),
                 verts[a][1] + t * (verts[b][1] - verts[a][1]))
            )
    for i in range(1, q):
        for j in range(1, q - i):
            nodes.append((Fraction(i, q), Fraction(j, q)))
    return nodes


@lru_cache(maxsize=8)
def lagrange_coeffs(q: int) -> np.ndarray:
    """Monomial coefficients of the nodal basis, shape (ndof, nmono)."""
    monos = _monomials(q)
    nodes = _lagrange_nodes(q)
    V = [[x**a * y**b for (a, b) in monos] for (x, y) in nodes]
    n = len(nodes)
    eye = [[Fraction(1 if i == j else 0) for j in range(n)] for i in range(n)]
    Cinv = _frac_solve(V, eye)  # V C = I with C[m][k]: coeff of mono m in basis k
    C = np.array([[float(Cinv[m][k]) for m in range(n)] for k in range(n)])
    return C


# ---------------------------------------------------------------------------
# Nedelec reference basis (degree p, eight orientation variants)
# ---------------------------------------------------------------------------


def nedelec_dim(p: int) -> int:
    return (p + 1) * (p + 3)


def _nedelec_span(p):
    """Span of the edge-element space as monomial coefficient pairs.

    Entries are dicts {(a, b): Fraction} per component over monomials of
    degree <= p + 1: full P_p vector polynomials plus the rotated
    homogeneous tail (y q, -x q) with q homogeneous of degree p.
    """
    span = []
    for a, b in _monomials(p):
        span.append(({(a, b): Fraction(1)}, {}))
        span.append(({}, {(a, b): Fraction(1)}))
    for a in range(p + 1):
        b = p - a
        span.append(({(a, b + 1): Fraction(1)}, {(a + 1, b): Fraction(-1)}))
    return span


def _compose_edge(coefs, A, B):
    """Restrict a monomial 2d polynomial to the segment A + t (B - A)."""
    xt = [A[0], B[0] - A[0]]
    yt = [A[1], B[1] - A[1]]
    out = [Fraction(0)]
    for (a, b), c in coefs.items():
        term = _poly1_mul(_poly1_pow(xt, a), _poly1_pow(yt, b))
        if len(term) > len(out):
            out += [Fraction(0)] * (len(term) - len(out))
        for i, v in enumerate(term):
            out[i] += c * v
    return out


@lru_cache(maxsize=32)
def nedelec_coeffs(p: int, flips: tuple) -> np.ndarray:
    """Monomial coefficients (ndof, 2, nmono) for one orientation variant.

    ``flips[i]`` is True when local edge i runs against the global
    (ascending vertex id) direction; the edge moment dofs are always taken
    along the global direction, so flipped edges use parameter 1 - t and
    the reversed tangent.
    """
    span = _nedelec_span(p)
    nspan = len(span)
    monos1 = _monomials(p + 1)
    verts = [(Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (Fraction(0), Fraction(1))]

    D = []
    # edge moments against shifted Legendre along the global direction
    for e, (la, lb) in enumerate(_LOCAL_EDGES):
        A, B = (verts[lb], verts[la]) if flips[e] else (verts[la], verts[lb])
        tau = (B[0] - A[0], B[1] - A[1])
        for k in range(p + 1):
            leg = list(_shifted_legendre(k))
            row = []
            for cx, cy in span:
                ft = _compose_edge(cx, A, B)
                gt = _compose_edge(cy, A, B)
                tdot = [tau[0] * c for c in ft]
                if len(gt) > len(tdot):
                    tdot += [Fraction(0)] * (len(gt) - len(tdot))
                for i, c in enumerate(gt):
                    tdot[i] += tau[1] * c
                row.append(_poly1_int01(_poly1_mul(tdot, leg)))
            D.append(row)
    # interior moments against P_{p-1} vector monomials
    for a, b in _monomials(p - 1) if p >= 1 else []:
        for comp in (0, 1):
            row = []
            for cx, cy in span:
                comp_coefs = (cx, cy)[comp]
                val = Fraction(0)
                for (ma, mb), c in comp_coefs.items():
                    val += c * _tri_monomial_integral(ma + a, mb + b)
                row.append(val)
            D.append(row)

    n = len(D)
    assert n == nspan == nedelec_dim(p)
    eye = [[Fraction(1 if i == j else 0) for j in range(n)] for i in range(n)]
    Cdual = _frac_solve(D, eye)  # columns: span coefficients of each basis fn

    nm = len(monos1)
    midx = {m: i for i, m in enumerate(monos1)}
    C = np.zeros((n, 2, nm))
    for k in range(n):
        for s, (cx, cy) in enumerate(span):
            w = Cdual[s][k]
            if w == 0:
                continue
            for m, c in cx.items():
                C[k, 0, midx[m]] += float(w * c)
            for m, c in cy.items():
                C[k, 1, midx[m]] += float(w * c)
    return C


# ---------------------------------------------------------------------------
# monomial tables and reference tabulation
# ---------------------------------------------------------------------------


def _mono_tables(deg, pts):
    """Values and derivatives of all monomials of degree <= deg at pts."""
    monos = _monomials(deg)
    x, y = pts[:, 0], pts[:, 1]
    xp = np.vstack([x**k for k in range(deg + 2)])
    yp = np.vstack([y**k for k in range(deg + 2)])
    nm, npt = len(monos), len(pts)
    M = np.zeros((nm, npt))
    Mx = np.zeros((nm, npt))
    My = np.zeros((nm, npt))
    Mxx = np.zeros((nm, npt))
    Mxy = np.zeros((nm, npt))
    Myy = np.zeros((nm, npt))
    for i, (a, b) in enumerate(monos):
        M[i] = xp[a] * yp[b]
        if a >= 1:
            Mx[i] = a * xp[a - 1] * yp[b]
        if b >= 1:
            My[i] = b * xp[a] * yp[b - 1]
        if a >= 2:
            Mxx[i] = a * (a - 1) * xp[a - 2] * yp[b]
        if a >= 1 and b >= 1:
            Mxy[i] = a * b * xp[a - 1] * yp[b - 1]
        if b >= 2:
            Myy[i] = b * (b - 1) * xp[a] * yp[b - 2]
    return M, Mx, My, Mxx, Mxy, Myy


def tabulate_lagrange(q: int, pts: np.ndarray) -> dict:
    """Nodal basis values/gradients/Hessians at reference points.

    Returns ``val (nb, np)``, ``grad (nb, np, 2)``, ``hess (nb, np, 2, 2)``.
    """
    C = lagrange_coeffs(q)
    M, Mx, My, Mxx, Mxy, Myy = _mono_tables(q, pts)
    val = C @ M
    grad = np.stack([C @ Mx, C @ My], axis=-1)
    hxx, hxy, hyy = C @ Mxx, C @ Mxy, C @ Myy
    hess = np.stack(
        [np.stack([hxx, hxy], axis=-1), np.stack([hxy, hyy], axis=-1)], axis=-2
    )
    return {"val": val, "grad": grad, "hess": hess}


def tabulate_nedelec(p: int, flips: tuple, pts: np.ndarray) -> dict:
    """Edge-element basis tables for one orientation variant.

    Returns ``val (nb, np, 2)``, ``curl (nb, np)``, ``jac (nb, np, 2, 2)``
    with ``jac[..., i, j] = d F_i / d xi_j``, and ``gradcurl (nb, np, 2)``.
    """
    C = nedelec_coeffs(p, flips)
    M, Mx, My, Mxx, Mxy, Myy = _mono_tables(p + 1, pts)
    val = np.stack([C[:, 0] @ M, C[:, 1] @ M], axis=-1)
    jac = np.stack(
        [
            np.stack([C[:, 0] @ Mx, C[:, 0] @ My], axis=-1),
            np.stack([C[:, 1] @ Mx, C[:, 1] @ My], axis=-1),
        ],
        axis=-2,
    )
    curl = C[:, 1] @ Mx - C[:, 0] @ My
    gradcurl = np.stack(
        [C[:, 1] @ Mxx - C[:, 0] @ Mxy, C[:, 1] @ Mxy - C[:, 0] @ Myy], axis=-1
    )
    return {"val": val, "curl": curl, "jac": jac, "gradcurl": gradcurl}


# ---------------------------------------------------------------------------
# quadratic geometry map
# ---------------------------------------------------------------------------


def p2_shape(pts):
    """6-node quadratic shape functions: values, gradients, second derivs.

    Node order: three vertices then the three edge midpoints in local edge
    order.  Returns (N (6, np), dN (6, np, 2), d2N (6, 2, 2)).
    """
    x, y = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - x - y, x, y])
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    npnt = len(pts)
    N = np.zeros((6, npnt))
    dN = np.zeros((6, npnt, 2))
    d2N = np.zeros((6, 2, 2))
    for i in range(3):
        N[i] = lam[i] * (2 * lam[i] - 1)
        dN[i] = (4 * lam[i] - 1)[:, None] * g[i]
        d2N[i] = 4 * np.outer(g[i], g[i])
    for e, (a, b) in enumerate(_LOCAL_EDGES):
        N[3 + e] = 4 * lam[a] * lam[b]
        dN[3 + e] = 4 * (lam[b][:, None] * g[a] + lam[a][:, None] * g[b])
        d2N[3 + e] = 4 * (np.outer(g[a], g[b]) + np.outer(g[b], g[a]))
    return N, dN, d2N


def geometry_nodes(mesh) -> np.ndarray:
    """Per-element 6-node coordinates (vertices + possibly curved midpoints)."""
    tri = mesh.triangles
    verts = mesh.vertices
    nodes = np.zeros((len(tri), 6, 2))
    nodes[:, :3] = verts[tri]
    for e, (a, b) in enumerate(_LOCAL_EDGES):
        nodes[:, 3 + e] = 0.5 * (verts[tri[:, a]] + verts[tri[:, b]])
    for t in range(len(tri)):
        for e, (a, b) in enumerate(_LOCAL_EDGES):
            key = tuple(sorted((tri[t, a], tri[t, b])))
            cur = mesh.curved.get(key)
            if cur is not None:
                nodes[t, 3 + e] = cur[1]
    return nodes


def map_geometry(nodes: np.ndarray, pts: np.ndarray, element_ids=None) -> dict:
    """Evaluate the quadratic map for a batch of elements at reference points.

    Returns ``x (ne, np, 2)``, ``jac (ne, np, 2, 2)``, ``det (ne, np)``,
    ``inv_t (ne, np, 2, 2)`` (inverse transpose), ``d2 (ne, 2, 2, 2)`` with
    ``d2[:, k, i, j] = d^2 F_k / d xi_i d xi_j`` (constant per element).

    Raises if det(J) <= 0 at any point, naming the offending element.
    """
    N, dN, d2N = p2_shape(pts)
    x = np.einsum("enk,np->epk", nodes, N, optimize=False)
    # jac[e, p, i, j] = sum_n nodes[e, n, i] dN[n, p, j]
    jac = np.einsum("eni,npj->epij", nodes, dN, optimize=False)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    if np.any(det <= 0):
        bad = np.argwhere(det <= 0)
        eid = bad[0][0] if element_ids is None else element_ids[bad[0][0]]
        raise ValueError(
            f"degenerate geometry map: det(J) = {det[tuple(bad[0])]:.3e} "
            f"at a quadrature point of element {eid}"
        )
    inv_t = np.empty_like(jac)
    inv_t[..., 0, 0] = jac[..., 1, 1]
    inv_t[..., 0, 1] = -jac[..., 1, 0]
    inv_t[..., 1, 0] = -jac[..., 0, 1]
    inv_t[..., 1, 1] = jac[..., 0, 0]
    inv_t /= det[..., None, None]
    d2 = np.einsum("enk,nij->ekij", nodes, d2N, optimize=False)
    return {"x": x, "jac": jac, "det": det, "inv_t": inv_t, "d2": d2}


# ---------------------------------------------------------------------------
# dof maps and the space pair
# ---------------------------------------------------------------------------


@dataclass
class DofMap:
    n_dofs: int
    n_free: int
    element_dofs: np.ndarray  # (nt, nloc) global dof ids
    free_index: np.ndarray  # (n_dofs,) free position or -1
    boundary: np.ndarray  # (n_dofs,) bool


@dataclass
class SpacePair:
    """Degree-p edge-element space paired with degree-(p+1) Lagrange space."""

    mesh: object
    p: int
    ned: DofMap
    lag: DofMap
    edge_flips: np.ndarray  # (nt, 3) bool, local edge runs against global dir

    _tab_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_free_total(self) -> int:
        return self.ned.n_free + self.lag.n_free

    def nedelec_tables(self, pts_key, pts, flips):
        key = ("ned", pts_key, flips)
        if key not in self._tab_cache:
            self._tab_cache[key] = tabulate_nedelec(self.p, flips, pts)
        return self._tab_cache[key]

    def lagrange_tables(self, pts_key, pts):
        key = ("lag", pts_key)
        if key not in self._tab_cache:
            self._tab_cache[key] = tabulate_lagrange(self.p + 1, pts)
        return self._tab_cache[key]


def build_spaces(mesh, p: int) -> SpacePair:
    """Construct global dof maps with boundary elimination.

    Tangential edge dofs are shared through ascending-vertex-id edge
    orientation; Lagrange edge nodes are ordered along the same direction.
    """
    if p < 0:
        raise ValueError("degree p must be >= 0")
    tri = mesh.triangles
    nt = len(tri)
    edges = mesh.edges  # (ne, 2) ascending vertex pairs
    tri_edges = mesh.tri_edges  # (nt, 3) into edges, local edge i opposite vertex i
    ne = len(edges)
    nv = len(mesh.vertices)
    bnd_edge = mesh.boundary_edge_mask
    bnd_vert = np.zeros(nv, dtype=bool)
    bnd_vert[edges[bnd_edge].ravel()] = True

    flips = np.zeros((nt, 3), dtype=bool)
    for e, (a, b) in enumerate(_LOCAL_EDGES):
        flips[:, e] = tri[:, a] > tri[:, b]

    # --- Nedelec: (p+1) moments per edge + p(p+1) interior dofs
    n_edge_dofs = (p + 1) * ne
    n_int = p * (p + 1)
    ned_total = n_edge_dofs + n_int * nt
    ned_elem = np.zeros((nt, nedelec_dim(p)), dtype=np.int64)
    for e in range(3):
        eid = tri_edges[:, e]
        for k in range(p + 1):
            ned_elem[:, e * (p + 1) + k] = eid * (p + 1) + k
    if n_int:
        base = n_edge_dofs + n_int * np.arange(nt)
        for k in range(n_int):
            ned_elem[:, 3 * (p + 1) + k] = base + k
    ned_bnd = np.zeros(ned_total, dtype=bool)
    for k in range(p + 1):
        ned_bnd[np.flatnonzero(bnd_edge) * (p + 1) + k] = True
    ned_free = _free_index(ned_bnd)

    # --- Lagrange degree q = p + 1: vertices, (q-1) per edge, interior
    q = p + 1
    n_edge_nodes = q - 1
    n_int_lag = (q - 1) * (q - 2) // 2
    lag_total = nv + n_edge_nodes * ne + n_int_lag * nt
    lag_elem = np.zeros((nt, lagrange_dim(q)), dtype=np.int64)
    lag_elem[:, :3] = tri
    col = 3
    for e in range(3):
        eid = tri_edges[:, e]
        for j in range(n_edge_nodes):
            jj = np.where(flips[:, e], n_edge_nodes - 1 - j, j)
            lag_elem[:, col] = nv + eid * n_edge_nodes + jj
            col += 1
    if n_int_lag:
        base = nv + n_edge_nodes * ne + n_int_lag * np.arange(nt)
        for k in range(n_int_lag):
            lag_elem[:, col] = base + k
            col += 1
    lag_bnd = np.zeros(lag_total, dtype=bool)
    lag_bnd[:nv] = bnd_vert
    if n_edge_nodes:
        for j in range(n_edge_nodes):
            lag_bnd[nv + np.flatnonzero(bnd_edge) * n_edge_nodes + j] = True
    lag_free = _free_index(lag_bnd)

    ned = DofMap(ned_total, int((~ned_bnd).sum()), ned_elem, ned_free, ned_bnd)
    lag = DofMap(lag_total, int((~lag_bnd).sum()), lag_elem, lag_free, lag_bnd)
    return SpacePair(mesh=mesh, p=p, ned=ned, lag=lag, edge_flips=flips)


def _free_index(bnd_mask):
    idx = -np.ones(len(bnd_mask), dtype=np.int64)
    free = np.flatnonzero(~bnd_mask)
    idx[free] = np.arange(len(free))
    return idx


def eval_basis(space: SpacePair, T: int, pts: np.ndarray, second_order=False) -> dict:
    """Mapped basis data for one element at reference points.

    Returns a dict with Nedelec ``ned_val (nb, np, 2)``, ``ned_curl``,
    Lagrange ``lag_val``, ``lag_grad`` and the geometry ``x``; with
    ``second_order=True`` adds ``ned_gradcurl``, ``ned_jac``, ``lag_hess``.
    """
    pts = np.asarray(pts, dtype=float)
    nodes = geometry_nodes(space.mesh)[T : T + 1]
    geo = map_geometry(nodes, pts, element_ids=[T])
    flips = tuple(bool(f) for f in space.edge_flips[T])
    ned = tabulate_nedelec(space.p, flips, pts)
    lag = tabulate_lagrange(space.p + 1, pts)
    out = physical_fields(geo, ned, lag, second_order=second_order)
    return {k: v[0] for k, v in out.items()} | {"x": geo["x"][0]}


def physical_fields(geo: dict, ned: dict, lag: dict, second_order=False) -> dict:
    """Push reference tables through a geometry batch.

    Shapes: ``ned_val (ne, nb, np, 2)``, ``ned_curl (ne, nb, np)``,
    ``lag_val (nb, np)`` (geometry independent), ``lag_grad (ne, nb, np, 2)``;
    second-order extras follow the same layout.
    """
    inv_t = geo["inv_t"]  # (ne, np, 2, 2)
    det = geo["det"]
    ne = det.shape[0]
    out = {}
    # ned_val[e, b, p, i] = inv_t[e, p, i, j] * val[b, p, j]
    out["ned_val"] = np.einsum("epij,bpj->ebpi", inv_t, ned["val"], optimize=False)
    out["ned_curl"] = ned["curl"][None, :, :] / det[:, None, :]
    out["lag_val"] = np.broadcast_to(lag["val"], (ne,) + lag["val"].shape)
    out["lag_grad"] = np.einsum("epij,bpj->ebpi", inv_t, lag["grad"], optimize=False)
    if not second_order:
        return out

    inv = np.swapaxes(inv_t, -1, -2)  # J^{-1}
    d2 = geo["d2"]  # (ne, 2, 2, 2): d2[e, k, i, j]
    jac = geo["jac"]
    # derivative of det along reference directions (point dependent via J)
    ddet = np.empty(det.shape + (2,))
    for r in range(2):
        ddet[..., r] = (
            d2[:, 0, 0, r][:, None] * jac[..., 1, 1]
            + jac[..., 0, 0] * d2[:, 1, 1, r][:, None]
            - d2[:, 0, 1, r][:, None] * jac[..., 1, 0]
            - jac[..., 0, 1] * d2[:, 1, 0, r][:, None]
        )

    # grad of physical curl: J^{-T} [grad_ref(curlhat)/det - curlhat ddet/det^2]
    gc_ref = ned["gradcurl"][None] / det[:, None, :, None] - (
        ned["curl"][None, :, :, None] * ddet[:, None, :, :] / (det**2)[:, None, :, None]
    )
    out["ned_gradcurl"] = np.einsum("epij,ebpj->ebpi", inv_t, gc_ref, optimize=False)

    # d(J^{-1})/dxi_r = -J^{-1} (dJ/dxi_r) J^{-1}, with dJ/dxi_r constant
    dinv = np.empty(inv.shape[:2] + (2, 2, 2))  # (ne, np, i, m, r)
    for r in range(2):
        Drm = d2[:, :, :, r]  # (ne, a, b) = d J_{ab} / d xi_r
        dinv[..., r] = -np.einsum(
            "epia,eab,epbm->epim", inv, Drm, inv, optimize=False
        )

    # physical Hessian of Lagrange: inv_t (H_ref - sum_k d2[k] g_k) inv
    g_phys = out["lag_grad"]  # (ne, nb, np, 2)
    corr = np.einsum("ekij,ebpk->ebpij", d2, g_phys, optimize=False)
    hmod = lag["hess"][None] - corr
    out["lag_hess"] = np.einsum(
        "epmi,ebpij,epjn->ebpmn", inv_t, hmod, np.swapaxes(inv_t, -1, -2), optimize=False
    )

    # full physical Jacobian of Nedelec fields:
    # dE_m/dx_n = [ d(J^{-1})_{im}/dxi_r Fhat_i + (J^{-1})_{im} dFhat_i/dxi_r ] (J^{-1})_{rn}
    t1 = np.einsum("epimr,bpi->ebpmr", dinv, ned["val"], optimize=False)
    t2 = np.einsum("epim,bpir->ebpmr", inv, ned["jac"], optimize=False)
    out["ned_jac"] = np.einsum("ebpmr,eprn->ebpmn", t1 + t2, inv, optimize=False)
    return out
