"""Assembly of the sparse complex block system for the mode eigenproblem.

Five forms are assembled over the free dofs of a SpacePair, with conjugation
on the test argument (all reference bases are real, so matrix entries are
plain weighted integrals with complex coefficients):

    a(E, F)   = (kappa curl E, curl F) + (V gamma E, F)
    b(E, psi) = (n_tau^2 gamma E, grad psi)
    c(phi, F) = (gamma grad phi, F)
    d(phi,psi)= -(n_2^2 det_j phi, psi)
    m(E, F)   = (gamma E, F)

The combined stiffness is K = [[A, C], [B, D]] and the combined mass has the
single nonzero block M, so constraint unknowns are pushed to infinity in the
pencil K u = lambda B u.  An unweighted Gram matrix for the norm
(||E||^2 + ||curl E||^2 + ||phi||^2 + ||grad phi||^2)^(1/2) is assembled
alongside for eigenvector normalization.

Element loops run in deterministic chunked batches grouped by curvature and
edge orientation; global matrices are accumulated in COO order fixed by the
element numbering, so assembly is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import (
    SpacePair,
    geometry_nodes,
    make_quadrule,
    map_geometry,
    physical_fields,
    volume_degree,
    edge_quad_degree,
)
from .pml import PmlProfile, coeffs_grid

__all__ = ["CoefficientField", "DiscreteSystem", "assemble", "apply_forms",
           "h_norm", "dump_matrix"]

_CHUNK = 1024


@dataclass(frozen=True)
class CoefficientField:
    """Material data per region id plus the absorber profile.

    ``lk`` is the nondimensionalization factor L*k; the index well is
    V = (lk)^2 (n0^2 - n_tau^2), piecewise constant per material.
    """

    pml: PmlProfile
    n0: float
    lk: float
    n_tau2: dict
    n_2sq: dict

    def v_well(self, material: int) -> float:
        return self.lk**2 * (self.n0**2 - self.n_tau2[material])


@dataclass
class DiscreteSystem:
    """Assembled sparse blocks and combined pencil over free dofs."""

    a_ee: sp.csr_matrix
    c_ephi: sp.csr_matrix
    b_phie: sp.csr_matrix
    d_phiphi: sp.csr_matrix
    m_ee: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    h_norm_mat: sp.csr_matrix
    n_free_e: int
    n_free_phi: int

    @property
    def n_free(self) -> int:
        return self.n_free_e + self.n_free_phi

    def split(self, u):
        return u[: self.n_free_e], u[self.n_free_e :]


def element_groups(mesh, spaces: SpacePair):
    """Deterministic grouping by (curved, edge-orientation variant)."""
    curved_mask = np.zeros(mesh.n_triangles, dtype=bool)
    if mesh.curved:
        curved_keys = set(mesh.curved)
        tri = mesh.triangles
        for e, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
            for t in range(mesh.n_triangles):
                key = (min(tri[t, a], tri[t, b]), max(tri[t, a], tri[t, b]))
                if key in curved_keys:
                    curved_mask[t] = True
    flips = spaces.edge_flips
    codes = flips[:, 0] * 4 + flips[:, 1] * 2 + flips[:, 2] + 8 * curved_mask
    for code in np.unique(codes):
        ids = np.flatnonzero(codes == code)
        f = (bool(code & 4), bool(code & 2), bool(code & 1))
        yield f, bool(code & 8), ids


def _pair_form(test, trial, w):
    """sum_q w[e,q] test[e,i,q,(d)] trial[e,j,q,(d)] -> (e, i, j)."""
    if test.ndim == 3:
        tw = test * w[:, None, :]
        return tw @ trial.transpose(0, 2, 1)
    ne, nb, nq, dim = test.shape
    nbj = trial.shape[1]
    tw = (test * w[:, None, :, None]).reshape(ne, nb, nq * dim)
    return tw @ trial.reshape(ne, nbj, nq * dim).transpose(0, 2, 1)


def _material_arrays(mesh, coeff):
    mats = mesh.materials
    try:
        ntau2 = np.array([coeff.n_tau2[int(m)] for m in mats])
        n2sq = np.array([coeff.n_2sq[int(m)] for m in mats])
    except KeyError as e:
        raise KeyError(f"material id {e} has no coefficients") from e
    v = coeff.lk**2 * (coeff.n0**2 - ntau2)
    return ntau2, n2sq, v


def _local_forms(rule, geo, phys, pmlc, vloc, nt2, n2s):
    """Local element matrices of all five forms plus the norm Gram blocks."""
    w = rule.weights[None, :] * geo["det"]
    val = phys["ned_val"]
    curl = phys["ned_curl"]
    lval = np.ascontiguousarray(phys["lag_val"])
    lgrad = phys["lag_grad"]
    gamma = pmlc["gamma"]
    gval = np.einsum("eqik,ebqk->ebqi", gamma, val, optimize=True)
    glgrad = np.einsum("eqik,ebqk->ebqi", gamma, lgrad, optimize=True)
    return {
        "a": _pair_form(curl, curl, w * pmlc["kappa"])
        + _pair_form(val, gval, (w * vloc).astype(complex)),
        "m": _pair_form(val, gval, w.astype(complex)),
        "c": _pair_form(val, glgrad, w.astype(complex)),
        "b": _pair_form(lgrad, gval, (w * nt2).astype(complex)),
        "d": -_pair_form(lval, lval, w * n2s * pmlc["det_j"]),
        "hn": _pair_form(curl, curl, w) + _pair_form(val, val, w),
        "hl": _pair_form(lgrad, lgrad, w) + _pair_form(lval, lval, w),
    }


def local_matrices(mesh, spaces: SpacePair, coeff: CoefficientField, T: int) -> dict:
    """Un-eliminated local matrices of one element (debugging/verification)."""
    ntau2_all, n2sq_all, v_all = _material_arrays(mesh, coeff)
    curved = any(
        (min(a, b), max(a, b)) in mesh.curved
        for a, b in mesh.triangles[T][[[1, 2], [2, 0], [0, 1]]]
    )
    rule = make_quadrule(volume_degree(spaces.p, curved), edge_quad_degree(spaces.p))
    flips = tuple(bool(f) for f in spaces.edge_flips[T])
    ned = spaces.nedelec_tables(("vol", curved), rule.points, flips)
    lag = spaces.lagrange_tables(("vol", curved), rule.points)
    geo = map_geometry(geometry_nodes(mesh)[T : T + 1], rule.points, element_ids=[T])
    phys = physical_fields(geo, ned, lag)
    pmlc = coeffs_grid(coeff.pml, geo["x"])
    loc = _local_forms(
        rule, geo, phys, pmlc,
        v_all[T : T + 1, None], ntau2_all[T : T + 1, None], n2sq_all[T : T + 1, None],
    )
    return {k: v[0] for k, v in loc.items()}


def assemble(mesh, spaces: SpacePair, coeff: CoefficientField) -> DiscreteSystem:
    """Assemble all five forms and the combined pencil over free dofs."""
    p = spaces.p
    ntau2_all, n2sq_all, v_all = _material_arrays(mesh, coeff)
    nodes_all = geometry_nodes(mesh)

    nE = spaces.ned.n_free
    nP = spaces.lag.n_free
    acc = {k: ([], [], []) for k in ("a", "c", "b", "d", "m", "hn", "hl")}

    def scatter(key, rows_f, cols_f, loc):
        mask = (rows_f >= 0) & (cols_f >= 0)
        r, c, v = acc[key]
        r.append(rows_f[mask])
        c.append(cols_f[mask])
        v.append(loc[mask])

    for flips, curved, ids in element_groups(mesh, spaces):
        rule = make_quadrule(volume_degree(p, curved), edge_quad_degree(p))
        key = ("vol", curved)
        ned = spaces.nedelec_tables(key, rule.points, flips)
        lag = spaces.lagrange_tables(key, rule.points)
        for lo in range(0, len(ids), _CHUNK):
            idx = ids[lo : lo + _CHUNK]
            geo = map_geometry(nodes_all[idx], rule.points, element_ids=idx)
            phys = physical_fields(geo, ned, lag)
            pmlc = coeffs_grid(coeff.pml, geo["x"])
            loc = _local_forms(
                rule, geo, phys, pmlc,
                v_all[idx][:, None], ntau2_all[idx][:, None], n2sq_all[idx][:, None],
            )
            a_loc, m_loc, c_loc = loc["a"], loc["m"], loc["c"]
            b_loc, d_loc, hn_loc, hl_loc = loc["b"], loc["d"], loc["hn"], loc["hl"]

            edofs = spaces.ned.free_index[spaces.ned.element_dofs[idx]]
            ldofs = spaces.lag.free_index[spaces.lag.element_dofs[idx]]
            er = np.repeat(edofs[:, :, None], edofs.shape[1], axis=2)
            ec = np.swapaxes(er, 1, 2)
            lr = np.repeat(ldofs[:, :, None], ldofs.shape[1], axis=2)
            lc = np.swapaxes(lr, 1, 2)
            mixed_r = np.repeat(edofs[:, :, None], ldofs.shape[1], axis=2)
            mixed_c = np.repeat(ldofs[:, None, :], edofs.shape[1], axis=1)

            scatter("a", er, ec, a_loc)
            scatter("m", er, ec, m_loc)
            scatter("hn", er, ec, hn_loc)
            scatter("c", mixed_r, mixed_c, c_loc)
            scatter("b", np.swapaxes(mixed_c, 1, 2), np.swapaxes(mixed_r, 1, 2), b_loc)
            scatter("d", lr, lc, d_loc)
            scatter("hl", lr, lc, hl_loc)

    def build(key, shape, dtype=complex):
        r, c, v = acc[key]
        if not r:
            return sp.csr_matrix(shape, dtype=dtype)
        rows = np.concatenate([x.ravel() for x in r])
        cols = np.concatenate([x.ravel() for x in c])
        vals = np.concatenate([x.ravel() for x in v]).astype(dtype)
        out = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
        out.sum_duplicates()
        out.sort_indices()
        return out

    A = build("a", (nE, nE))
    C = build("c", (nE, nP))
    B = build("b", (nP, nE))
    D = build("d", (nP, nP))
    M = build("m", (nE, nE))
    HN = build("hn", (nE, nE), dtype=float)
    HL = build("hl", (nP, nP), dtype=float)

    K = sp.bmat([[A, C], [B, D]], format="csr")
    Bblk = sp.bmat(
        [[M, sp.csr_matrix((nE, nP), dtype=complex)],
         [sp.csr_matrix((nP, nE), dtype=complex), sp.csr_matrix((nP, nP), dtype=complex)]],
        format="csr",
    )
    H = sp.bmat(
        [[HN, sp.csr_matrix((nE, nP))], [sp.csr_matrix((nP, nE)), HL]], format="csr"
    )
    return DiscreteSystem(
        a_ee=A, c_ephi=C, b_phie=B, d_phiphi=D, m_ee=M,
        stiffness=K, mass=Bblk, h_norm_mat=H,
        n_free_e=nE, n_free_phi=nP,
    )


def apply_forms(sys: DiscreteSystem, u, v):
    """Evaluate (A(u, v), B(u, v)) = (v^H K u, v^H B u) for coefficient vectors."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != (sys.n_free,) or v.shape != (sys.n_free,):
        raise ValueError(
            f"expected vectors of length {sys.n_free}, got {u.shape} and {v.shape}"
        )
    return complex(np.vdot(v, sys.stiffness @ u)), complex(np.vdot(v, sys.mass @ u))


def h_norm(sys: DiscreteSystem, u) -> float:
    """Unweighted graph norm combining both fields and their derivatives."""
    u = np.asarray(u)
    if u.shape != (sys.n_free,):
        raise ValueError(f"expected vector of length {sys.n_free}, got {u.shape}")
    return float(np.sqrt(max(np.real(np.vdot(u, sys.h_norm_mat @ u)), 0.0)))


def dump_matrix(mat, path):
    """Coordinate-format text dump: row col re im, sorted by (row, col)."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as f:
        for k in order:
            v = coo.data[k]
            f.write(f"{coo.row[k]} {coo.col[k]} {v.real:.17g} {np.imag(v):.17g}\n")
