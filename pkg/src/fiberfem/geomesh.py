"""Circle-composed geometries, conforming triangle meshes, bisection refinement.

Geometries are prioritized unions of disks: a point's region is the first
region in the list whose circle contains it, so tube bores shadow tube walls,
walls shadow jackets, and the outermost disk is the computational boundary.
Every interface circle is kept exactly (center, radius); the mesh stores
degree-2 midpoint nodes on the true circles for curved edges.

The initial mesh samples all material-separating circle arcs at the local
target size, fills regions with smoothed hexagonal lattices, and Delaunay
triangulates; interface chords are verified to be mesh edges and no element
may straddle an active arc.  Refinement is newest-vertex bisection with
recursive compatibility closure; triangles are stored as (peak, a, b) with
the refinement edge (a, b) opposite the peak, so genealogy and shape
regularity follow the standard bisection guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

__all__ = [
    "Circle",
    "Region",
    "Geometry",
    "Mesh",
    "GeometryError",
    "MeshGenerationError",
    "generate_initial",
    "refine",
    "element_metrics",
    "export_mesh",
]

_LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))


class GeometryError(ValueError):
    pass


class MeshGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    @property
    def center(self):
        return np.array([self.cx, self.cy])


@dataclass(frozen=True)
class Region:
    """Material region claimed by one disk; earlier regions take priority."""

    name: str
    material: int
    circle: int


@dataclass(frozen=True)
class Geometry:
    circles: tuple
    regions: tuple
    boundary_circle: int

    def __post_init__(self):
        # names may repeat (shared sizing class, e.g. six identical tubes)
        if self.regions[-1].circle != self.boundary_circle:
            raise GeometryError("last region must be claimed by the boundary disk")

    @property
    def outer_radius(self) -> float:
        return self.circles[self.boundary_circle].r

    def region_index_at(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = -np.ones(len(pts), dtype=np.int64)
        for i, rg in enumerate(self.regions):
            c = self.circles[rg.circle]
            unset = out < 0
            if not unset.any():
                break
            d2 = (pts[unset, 0] - c.cx) ** 2 + (pts[unset, 1] - c.cy) ** 2
            hit = d2 <= c.r**2
            idx = np.flatnonzero(unset)[hit]
            out[idx] = i
        return out

    def material_at(self, pts) -> np.ndarray:
        ridx = self.region_index_at(pts)
        mats = np.array([rg.material for rg in self.regions])
        out = np.where(ridx >= 0, mats[np.clip(ridx, 0, None)], -1)
        return out


def circle_intersections(a: Circle, b: Circle):
    """Transversal intersection points of two circles (possibly none)."""
    d = np.hypot(b.cx - a.cx, b.cy - a.cy)
    if d < 1e-14 or d >= a.r + b.r - 1e-12 or d <= abs(a.r - b.r) + 1e-12:
        return []
    x = (d**2 + a.r**2 - b.r**2) / (2 * d)
    h2 = a.r**2 - x**2
    if h2 <= 0:
        return []
    h = np.sqrt(h2)
    ex = np.array([(b.cx - a.cx) / d, (b.cy - a.cy) / d])
    ey = np.array([-ex[1], ex[0]])
    base = a.center + x * ex
    return [base + h * ey, base - h * ey]


# ---------------------------------------------------------------------------
# mesh container
# ---------------------------------------------------------------------------


class Mesh:
    """Immutable conforming triangle mesh with curved-interface metadata.

    ``triangles[t, 0]`` is the newest (peak) vertex; the refinement edge is
    ``(triangles[t, 1], triangles[t, 2])``.  ``curved`` maps an ascending
    vertex pair to ``(circle_id, midpoint)`` with the midpoint on the exact
    circle.  ``parent`` refers to triangle ids of the mesh this one was
    refined from (-1 on generated meshes).
    """

    def __init__(self, vertices, triangles, materials, levels=None, curved=None,
                 geometry=None, parent=None, bisections_by_material=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.materials = np.asarray(materials, dtype=np.int64)
        nt = len(self.triangles)
        self.levels = (np.zeros(nt, dtype=np.int64) if levels is None
                       else np.asarray(levels, dtype=np.int64))
        self.curved = dict(curved) if curved else {}
        self.geometry = geometry
        self.parent = (-np.ones(nt, dtype=np.int64) if parent is None
                       else np.asarray(parent, dtype=np.int64))
        self.bisections_by_material = dict(bisections_by_material or {})
        self._derived = None
        if len(self.materials) != nt or len(self.levels) != nt:
            raise ValueError("per-triangle arrays must match triangle count")
        self._check_orientation()

    def _check_orientation(self):
        v = self.vertices
        t = self.triangles
        a = v[t[:, 1]] - v[t[:, 0]]
        b = v[t[:, 2]] - v[t[:, 0]]
        d = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        if np.any(d <= 0):
            raise ValueError(f"{np.sum(d <= 0)} triangles are not counterclockwise")

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_vertices(self):
        return len(self.vertices)

    def _build_derived(self):
        t = self.triangles
        pairs = np.concatenate(
            [np.sort(t[:, list(e)], axis=1) for e in _LOCAL_EDGES], axis=0
        )
        edges, inv = np.unique(pairs, axis=0, return_inverse=True)
        tri_edges = inv.reshape(3, -1).T.copy()
        counts = np.bincount(inv, minlength=len(edges))
        if counts.max() > 2:
            raise ValueError("nonconforming connectivity: edge shared by >2 triangles")
        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        for e in range(3):
            for t_id, eid in enumerate(tri_edges[:, e]):
                slot = 0 if edge_tris[eid, 0] < 0 else 1
                edge_tris[eid, slot] = t_id
        self._derived = {
            "edges": edges,
            "tri_edges": tri_edges,
            "edge_tris": edge_tris,
            "boundary_edge_mask": counts == 1,
        }

    def _d(self, key):
        if self._derived is None:
            self._build_derived()
        return self._derived[key]

    @property
    def edges(self):
        return self._d("edges")

    @property
    def tri_edges(self):
        return self._d("tri_edges")

    @property
    def edge_tris(self):
        return self._d("edge_tris")

    @property
    def boundary_edge_mask(self):
        return self._d("boundary_edge_mask")

    @property
    def edge_normals(self):
        """Fixed unit normal per edge: left normal of the ascending direction."""
        e = self.edges
        t = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def min_angle(self) -> float:
        """Smallest interior angle over all (straight) triangles, degrees."""
        v = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = v[:, (i + 1) % 3] - v[:, i]
            b = v[:, (i + 2) % 3] - v[:, i]
            cosang = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
        return float(np.min(angles))


def element_metrics(mesh: Mesh, T: int):
    """Diameter (longest chord between vertices) and vertex-patch of T."""
    if not 0 <= T < mesh.n_triangles:
        raise IndexError(f"unknown triangle id {T}")
    v = mesh.vertices[mesh.triangles[T]]
    h = max(
        np.linalg.norm(v[0] - v[1]),
        np.linalg.norm(v[1] - v[2]),
        np.linalg.norm(v[2] - v[0]),
    )
    verts = set(mesh.triangles[T])
    patch = [
        t for t in range(mesh.n_triangles) if verts & set(mesh.triangles[t])
    ]
    return float(h), patch


def element_diameters(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices[mesh.triangles]
    return np.maximum.reduce([
        np.linalg.norm(v[:, 0] - v[:, 1], axis=1),
        np.linalg.norm(v[:, 1] - v[:, 2], axis=1),
        np.linalg.norm(v[:, 2] - v[:, 0], axis=1),
    ])


# ---------------------------------------------------------------------------
# newest-vertex bisection with conformity closure
# ---------------------------------------------------------------------------


def refine(mesh: Mesh, marks) -> Mesh:
    """Bisect all marked triangles, closing until the mesh conforms.

    New vertices on curved edges are placed on the true circle.  Children
    inherit material ids; genealogy (parent id and level) is recorded.
    """
    marks = sorted(set(int(m) for m in marks))
    if any(m < 0 or m >= mesh.n_triangles for m in marks):
        raise IndexError("mark outside mesh")
    if not marks:
        return mesh

    verts = [tuple(p) for p in mesh.vertices]
    tris = [list(t) for t in mesh.triangles]
    mats = list(mesh.materials)
    levels = list(mesh.levels)
    ancestors = list(range(len(tris)))
    alive = [True] * len(tris)
    curved = dict(mesh.curved)
    bis_count = dict(mesh.bisections_by_material)
    geometry = mesh.geometry

    edge2tris = {}
    for tid, t in enumerate(tris):
        for a, b in _LOCAL_EDGES:
            key = (min(t[a], t[b]), max(t[a], t[b]))
            edge2tris.setdefault(key, []).append(tid)

    def ref_edge(tid):
        t = tris[tid]
        return (min(t[1], t[2]), max(t[1], t[2]))

    def project(circle_id, p):
        c = geometry.circles[circle_id]
        d = p - c.center
        return tuple(c.center + c.r * d / np.linalg.norm(d))

    def split_edge(key):
        """Create the midpoint vertex of edge key, updating curved metadata."""
        cur = curved.pop(key, None)
        if cur is not None:
            cid, mid = cur
            m_xy = tuple(mid)
        else:
            m_xy = tuple(0.5 * (np.asarray(verts[key[0]]) + np.asarray(verts[key[1]])))
        verts.append(m_xy)
        mid_id = len(verts) - 1
        if cur is not None:
            for end in key:
                child = (min(end, mid_id), max(end, mid_id))
                chord_mid = 0.5 * (np.asarray(verts[end]) + np.asarray(m_xy))
                curved[child] = (cid, np.asarray(project(cid, chord_mid)))
        return mid_id

    def split_one(tid, mid_id):
        p, v1, v2 = tris[tid]
        alive[tid] = False
        for a, b in _LOCAL_EDGES:
            key = (min(tris[tid][a], tris[tid][b]), max(tris[tid][a], tris[tid][b]))
            lst = edge2tris.get(key)
            if lst and tid in lst:
                lst.remove(tid)
        for child in ([mid_id, p, v1], [mid_id, v2, p]):
            cid = len(tris)
            tris.append(child)
            mats.append(mats[tid])
            levels.append(levels[tid] + 1)
            ancestors.append(ancestors[tid])
            alive.append(True)
            for a, b in _LOCAL_EDGES:
                key = (min(child[a], child[b]), max(child[a], child[b]))
                edge2tris.setdefault(key, []).append(cid)
        bis_count[int(mats[tid])] = bis_count.get(int(mats[tid]), 0) + 1

    max_ops = 64 * (mesh.n_triangles + len(marks)) + int(mesh.levels.max() + 2) * mesh.n_triangles
    ops = 0

    def bisect(tid):
        nonlocal ops
        stack = [tid]
        while stack:
            ops += 1
            if ops > max_ops:
                raise MeshGenerationError("bisection closure failed to terminate")
            t = stack[-1]
            if not alive[t]:
                stack.pop()
                continue
            e = ref_edge(t)
            others = [o for o in edge2tris.get(e, []) if o != t and alive[o]]
            nb = others[0] if others else None
            if nb is not None and ref_edge(nb) != e:
                stack.append(nb)
                continue
            mid = split_edge(e)
            split_one(t, mid)
            if nb is not None:
                split_one(nb, mid)
            stack.pop()

    for m in marks:
        if alive[m]:
            bisect(m)

    keep = [i for i, a in enumerate(alive) if a]
    remap_parent = np.array([ancestors[i] for i in keep], dtype=np.int64)
    new = Mesh(
        vertices=np.array(verts),
        triangles=np.array([tris[i] for i in keep], dtype=np.int64),
        materials=np.array([mats[i] for i in keep], dtype=np.int64),
        levels=np.array([levels[i] for i in keep], dtype=np.int64),
        curved=curved,
        geometry=geometry,
        parent=remap_parent,
        bisections_by_material=bis_count,
    )
    return new


# ---------------------------------------------------------------------------
# initial mesh generation
# ---------------------------------------------------------------------------


def _region_h(geometry, target_h):
    h = []
    for rg in geometry.regions:
        if rg.name not in target_h:
            raise GeometryError(f"no target size for region '{rg.name}'")
        val = float(target_h[rg.name])
        if val <= 0:
            raise GeometryError(f"target size for region '{rg.name}' must be > 0")
        h.append(val)
    return np.array(h)


def _check_annulus_thickness(geometry, h_by_region):
    """Reject annular gaps thinner than a quarter of the local target size."""
    for i, rg in enumerate(geometry.regions):
        c = geometry.circles[rg.circle]
        inner = [
            geometry.circles[r2.circle].r
            for j, r2 in enumerate(geometry.regions)
            if j < i
            and abs(geometry.circles[r2.circle].cx - c.cx) < 1e-14
            and abs(geometry.circles[r2.circle].cy - c.cy) < 1e-14
            and geometry.circles[r2.circle].r < c.r
        ]
        if inner:
            thick = c.r - max(inner)
            if thick < h_by_region[i] / 4:
                raise GeometryError(
                    f"region '{rg.name}' is an annulus of thickness {thick:.4g}, "
                    f"thinner than a quarter of its target size {h_by_region[i]:.4g}"
                )


def _sample_circles(geometry, h_by_region, densify):
    """Sample material-separating arcs of every circle.

    Returns per-circle lists of (angle, point, mandatory) for active arcs,
    where mandatory points are circle-circle intersections.
    """
    probes = 128
    hlocs = []
    for ci, c in enumerate(geometry.circles):
        th = np.linspace(0, 2 * np.pi, probes, endpoint=False)
        d = np.column_stack([np.cos(th), np.sin(th)])
        delta = max(1e-9, 1e-7 * c.r)
        pin = c.center + (c.r - delta) * d
        pout = c.center + (c.r + delta) * d
        rin = geometry.region_index_at(pin)
        rout = geometry.region_index_at(pout)
        min_ = geometry.material_at(pin)
        mout = geometry.material_at(pout)
        active = (min_ != mout) | (mout < 0)
        if not active.any():
            hlocs.append(None)
            continue
        hloc = np.inf
        for k in np.flatnonzero(active):
            hloc = min(hloc, h_by_region[rin[k]])
            if rout[k] >= 0:
                hloc = min(hloc, h_by_region[rout[k]])
        hlocs.append(hloc)
    # equalize spacing of mutually crossing active circles; anchored equal
    # spacing at corners prevents the arcs encroaching each other's chords
    for _ in range(len(geometry.circles)):
        changed = False
        for i in range(len(geometry.circles)):
            if hlocs[i] is None:
                continue
            for j in range(i + 1, len(geometry.circles)):
                if hlocs[j] is None:
                    continue
                if circle_intersections(geometry.circles[i], geometry.circles[j]):
                    m = min(hlocs[i], hlocs[j])
                    if hlocs[i] != m or hlocs[j] != m:
                        hlocs[i] = hlocs[j] = m
                        changed = True
        if not changed:
            break

    out = []
    for ci, c in enumerate(geometry.circles):
        if hlocs[ci] is None:
            out.append(([], 16))
            continue
        hloc = hlocs[ci]
        n = max(16, int(np.ceil(2 * np.pi * c.r / hloc)))
        n = int(np.ceil(n * densify.get(ci, 1.0)))
        phase = 0.03 * (ci + 1)
        th = phase + 2 * np.pi * np.arange(n) / n
        d = np.column_stack([np.cos(th), np.sin(th)])
        pts = c.center + c.r * d
        delta = max(1e-9, 1e-7 * c.r)
        pin = c.center + (c.r - delta) * d
        pout = c.center + (c.r + delta) * d
        min_ = geometry.material_at(pin)
        mout = geometry.material_at(pout)
        act = (min_ != mout) | (mout < 0)
        samples = [
            (float(th[k] % (2 * np.pi)), pts[k], False) for k in np.flatnonzero(act)
        ]
        out.append((samples, n))
    # inject circle-circle intersections as mandatory samples, re-phasing the
    # neighbouring samples so spacing is uniform and anchored at the corner
    # (with crossing angles >= ~22 deg this prevents mutual encroachment of
    # the two arcs' chords near the corner)
    ncirc = len(geometry.circles)
    for i in range(ncirc):
        for j in range(i + 1, ncirc):
            for p in circle_intersections(geometry.circles[i], geometry.circles[j]):
                for ci in (i, j):
                    samples, n = out[ci]
                    if not samples:
                        continue
                    c = geometry.circles[ci]
                    ang = float(np.arctan2(p[1] - c.cy, p[0] - c.cx) % (2 * np.pi))
                    spacing = 2 * np.pi / n
                    samples = [
                        s for s in samples
                        if s[2] or _angdist(s[0], ang) > 2.2 * spacing
                    ]
                    samples.append((ang, p.copy(), True))
                    for side in (-1, 1):
                        for kk in (1, 2):
                            aa = (ang + side * kk * spacing) % (2 * np.pi)
                            if any(_angdist(s[0], aa) < 0.45 * spacing for s in samples):
                                continue
                            q = c.center + c.r * np.array([np.cos(aa), np.sin(aa)])
                            samples.append((float(aa), q, False))
                    out[ci] = (samples, n)
    final = []
    for samples, _ in out:
        samples.sort(key=lambda s: s[0])
        final.append(samples)
    return final


def _lfs_refine(geometry, samples, factor=0.9, floor=0.015, max_rounds=12):
    """Split chords longer than their clearance to other sampled circles.

    Local-feature-size sampling: in narrow throats between two interfaces
    (e.g. around welded capillaries) chord lengths must be comparable to
    the gap width or the triangulation cannot respect both arcs.
    """
    sampled = [ci for ci, ss in enumerate(samples) if ss]
    for _ in range(max_rounds):
        changed = False
        for ci in sampled:
            c = geometry.circles[ci]
            ss = samples[ci]
            n = len(ss)
            new = []
            for k in range(n):
                k2 = (k + 1) % n
                gap = (ss[k2][0] - ss[k][0]) % (2 * np.pi)
                if n == 1:
                    gap = 2 * np.pi
                if gap == 0:
                    continue
                chord = 2 * c.r * np.sin(min(gap / 2, np.pi / 2))
                if chord <= floor:
                    continue
                mid_ang = (ss[k][0] + gap / 2) % (2 * np.pi)
                mid = c.center + c.r * np.array([np.cos(mid_ang), np.sin(mid_ang)])
                clearance = np.inf
                for cj in sampled:
                    if cj == ci:
                        continue
                    oc = geometry.circles[cj]
                    clearance = min(clearance, abs(
                        np.hypot(mid[0] - oc.cx, mid[1] - oc.cy) - oc.r))
                if chord > factor * clearance + floor:
                    new.append((float(mid_ang), mid, False))
            if new:
                samples[ci] = sorted(ss + new, key=lambda s: s[0])
                changed = True
        if not changed:
            break
    return samples


def corner_balls(geometry, samples):
    """Protection disks around circle crossings: no refinement inside."""
    balls = []
    ncirc = len(geometry.circles)
    for i in range(ncirc):
        if not samples[i]:
            continue
        for j in range(i + 1, ncirc):
            if not samples[j]:
                continue
            for p in circle_intersections(geometry.circles[i], geometry.circles[j]):
                rad = 0.0
                for ci in (i, j):
                    ss = samples[ci]
                    c = geometry.circles[ci]
                    ang = np.arctan2(p[1] - c.cy, p[0] - c.cx) % (2 * np.pi)
                    gaps = sorted(_angdist(s[0], ang) for s in ss)[:3]
                    if len(gaps) > 1 and gaps[1] > 0:
                        rad = max(rad, 1.2 * gaps[1] * c.r)
                if rad > 0:
                    balls.append((p, rad))
    return balls


def _angdist(a, b):
    d = abs(a - b) % (2 * np.pi)
    return min(d, 2 * np.pi - d)


def _arc_chords(geometry, circle_id, samples):
    """Consecutive-sample pairs whose connecting arc separates materials."""
    c = geometry.circles[circle_id]
    chords = []
    n = len(samples)
    for k in range(n):
        a = samples[k][0]
        b = samples[(k + 1) % n][0]
        gap = (b - a) % (2 * np.pi)
        if n == 1:
            gap = 2 * np.pi
        mid_ang = a + gap / 2
        d = np.array([np.cos(mid_ang), np.sin(mid_ang)])
        delta = max(1e-9, 1e-7 * c.r)
        min_ = geometry.material_at((c.center + (c.r - delta) * d)[None])[0]
        mout = geometry.material_at((c.center + (c.r + delta) * d)[None])[0]
        if min_ != mout or mout < 0:
            chords.append((k, (k + 1) % n))
    return chords


def _hex_fill(geometry, h_by_region, circle_samples):
    """Interior fill: structured rim offset layers plus hexagonal lattices.

    A staggered layer of points is placed on both sides of each sampled arc
    at the chord midpoints, ~0.75 local spacings off the circle, so the
    first element layers along interfaces are well shaped by construction.
    Coarser hexagonal lattices fill region interiors, kept clear of rims
    and offset layers.
    """
    from scipy.spatial import cKDTree

    r_bnd = geometry.outer_radius
    offsets = []
    off_s = []
    for ci, ss in enumerate(circle_samples):
        if not ss:
            continue
        c = geometry.circles[ci]
        active = set()
        for a, b in _arc_chords(geometry, ci, ss):
            active.add(a)
        n = len(ss)
        for k in range(n):
            if n > 1 and k not in active:
                continue
            k2 = (k + 1) % n
            gap = (ss[k2][0] - ss[k][0]) % (2 * np.pi)
            if n == 1:
                gap = 2 * np.pi
            if gap == 0 or gap > np.pi / 2:
                continue
            s_loc = 2 * c.r * np.sin(gap / 2)
            mid_ang = ss[k][0] + gap / 2
            d = np.array([np.cos(mid_ang), np.sin(mid_ang)])
            for sign in (-1.0, 1.0):
                rr = c.r + sign * 0.75 * s_loc
                if rr <= 0.1 * s_loc:
                    continue
                p = c.center + rr * d
                if np.hypot(p[0], p[1]) >= r_bnd * (1 - 1e-9):
                    continue
                offsets.append(p)
                off_s.append(s_loc)
    offsets = np.array(offsets) if offsets else np.zeros((0, 2))
    off_s = np.array(off_s)

    # drop offsets too close to any rim or to an earlier offset
    rim_all = []
    rim_s = []
    for ss in circle_samples:
        if not ss:
            continue
        p = np.array([s[1] for s in ss])
        d = np.linalg.norm(np.diff(np.vstack([p, p[:1]]), axis=0), axis=1)
        rim_all.append(p)
        rim_s.append(np.minimum(d, np.roll(d, 1)))
    rim_all = np.vstack(rim_all) if rim_all else np.zeros((0, 2))
    rim_s = np.concatenate(rim_s) if len(rim_s) else np.zeros(0)

    keep = np.ones(len(offsets), dtype=bool)
    if len(offsets) and len(rim_all):
        tree = cKDTree(rim_all)
        dist, idx = tree.query(offsets)
        keep &= dist > 0.55 * np.minimum(off_s, rim_s[idx])
    sel = []
    if len(offsets):
        order = np.argsort(-off_s)  # keep coarser offsets first
        taken = []
        taken_s = []
        for i in order:
            if not keep[i]:
                continue
            p = offsets[i]
            ok = True
            for q, sq in zip(taken, taken_s):
                if np.hypot(p[0] - q[0], p[1] - q[1]) < 0.55 * min(off_s[i], sq):
                    ok = False
                    break
            if ok:
                taken.append(p)
                taken_s.append(off_s[i])
        sel = taken
        sel_s = taken_s
    else:
        sel_s = []

    pts = [tuple(p) for p in sel]
    guard_pts = np.vstack([rim_all, np.array(sel)]) if sel else rim_all
    guard_s = np.concatenate([rim_s, np.array(sel_s)]) if sel else rim_s
    guard_tree = cKDTree(guard_pts) if len(guard_pts) else None

    for i, rg in enumerate(geometry.regions):
        c = geometry.circles[rg.circle]
        h = h_by_region[i]
        dy = h * np.sqrt(3) / 2
        x0, x1 = c.cx - c.r, c.cx + c.r
        y0, y1 = c.cy - c.r, c.cy + c.r
        ny = int(np.ceil((y1 - y0) / dy)) + 1
        cand = []
        for row in range(ny):
            y = y0 + row * dy + 0.31 * dy
            xs = np.arange(x0 + (0.5 * h if row % 2 else 0.17 * h), x1, h)
            cand.extend((x, y) for x in xs)
        if not cand:
            continue
        cand = np.array(cand)
        ridx = geometry.region_index_at(cand)
        cand = cand[ridx == i]
        if len(cand) == 0:
            continue
        ok = np.ones(len(cand), dtype=bool)
        # keep clear of sampled rims proportionally to their local spacing
        if guard_tree is not None:
            dist, idx = guard_tree.query(cand)
            ok &= dist > 0.75 * np.minimum(h, guard_s[idx] * 1.3)
        cand = cand[ok]
        pts.extend(map(tuple, cand))
    # center seeds for small disks so no triangle spans a whole inclusion
    for i, rg in enumerate(geometry.regions):
        c = geometry.circles[rg.circle]
        if c.r < 2.2 * h_by_region[i] and circle_samples[rg.circle]:
            ctr = np.array([[c.cx, c.cy]])
            if geometry.region_index_at(ctr)[0] == i:
                pts.append((c.cx, c.cy))
    return pts


def generate_initial(geometry: Geometry, target_h: dict, min_angle: float = 20.0,
                     smoothing: int = 2, max_attempts: int = 6) -> Mesh:
    """Generate a conforming initial mesh resolving every interface circle.

    ``target_h`` maps region names to target element sizes.  Fails when an
    annular region is thinner than a quarter of its target size, and retries
    with densified circles until no element straddles an interface and the
    minimum angle reaches ``min_angle`` degrees.
    """
    h_by_region = _region_h(geometry, target_h)
    _check_annulus_thickness(geometry, h_by_region)

    densify = {}
    last_err = None
    for attempt in range(max_attempts):
        samples = _sample_circles(geometry, h_by_region, densify)
        samples = _lfs_refine(geometry, samples)
        fill = _hex_fill(geometry, h_by_region, samples)

        pts = []
        tags = []  # (circle_id, sample_index) or None for fill
        for ci, ss in enumerate(samples):
            for k, s in enumerate(ss):
                pts.append(tuple(s[1]))
                tags.append((ci, k))
        n_rim = len(pts)
        pts.extend(fill)
        tags.extend([None] * len(fill))

        pts = np.array(pts)
        # dedupe coincident points (tangencies), keeping the first occurrence
        keep = np.ones(len(pts), dtype=bool)
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        for a, b in zip(order[:-1], order[1:]):
            if keep[a] and np.linalg.norm(pts[a] - pts[b]) < 1e-9:
                keep[max(a, b)] = False
        pts = pts[keep]
        tags = [t for t, k in zip(tags, keep) if k]
        n_rim = sum(1 for t in tags if t is not None)

        for _ in range(smoothing + (attempt + 1) // 2):
            tri = Delaunay(pts)
            moved = pts.copy()
            indptr, indices = tri.vertex_neighbor_vertices
            for v in range(n_rim, len(pts)):
                nb = indices[indptr[v]:indptr[v + 1]]
                if len(nb) == 0:
                    continue
                cand = pts[nb].mean(axis=0)
                if geometry.region_index_at(cand[None])[0] == geometry.region_index_at(
                    pts[v][None]
                )[0]:
                    ok = True
                    for cc, ss in zip(geometry.circles, samples):
                        if ss and abs(np.hypot(cand[0] - cc.cx, cand[1] - cc.cy) - cc.r) < 0.4 * element_h_guess(
                            pts, v, nb
                        ):
                            ok = False
                            break
                    if ok:
                        moved[v] = cand
            pts = moved

        balls = corner_balls(geometry, samples)
        fixup_circles = set()
        for _ in range(12):
            pts, samples = _quality_insertion(geometry, pts, samples, min_angle,
                                              protect=balls)
            tri = Delaunay(pts)
            simplices = tri.simplices.copy()
            v = pts[simplices]
            ea = v[:, 1] - v[:, 0]
            eb = v[:, 2] - v[:, 0]
            det = ea[:, 0] * eb[:, 1] - ea[:, 1] * eb[:, 0]
            flip = det < 0
            simplices[flip] = simplices[flip][:, [0, 2, 1]]

            ok, fixups = _verify_interfaces(geometry, pts, simplices, samples)
            angle = _mesh_min_angle(pts, simplices)
            import os as _os
            if _os.environ.get("FIBERFEM_MESH_DEBUG"):
                print(f"[meshdbg] attempt {attempt} round: npts {len(pts)} "
                      f"angle {angle:.2f} fixups {len(fixups)}", flush=True)
            if ok and angle >= min_angle:
                return _finalize_mesh(geometry, pts, simplices, samples)
            if not fixups:
                break  # quality stall: make the next full attempt smoother
            applied = 0
            for ci, ang in fixups:
                c = geometry.circles[ci]
                fixup_circles.add(ci)
                # snap the request onto the midpoint of the containing chord,
                # so repairs never crowd an existing rim sample
                ss = samples[ci]
                angs = np.array([s[0] for s in ss])
                rel = (ang - angs) % (2 * np.pi)
                ka = int(np.argmin(np.where(rel > 1e-12, rel, np.inf)))
                kb = int(np.argmin(np.where((angs - ss[ka][0]) % (2 * np.pi) > 1e-12,
                                            (angs - ss[ka][0]) % (2 * np.pi), np.inf)))
                gap = (ss[kb][0] - ss[ka][0]) % (2 * np.pi)
                if gap == 0 or gap * c.r < 0.015:
                    continue
                mid = (ss[ka][0] + gap / 2) % (2 * np.pi)
                p = c.center + c.r * np.array([np.cos(mid), np.sin(mid)])
                if any(np.hypot(p[0] - q[0], p[1] - q[1]) < rad for q, rad in balls):
                    continue
                import os as _os
                if _os.environ.get("FIBERFEM_MESH_DEBUG"):
                    dnear = float(np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1]).min())
                    print(f"[meshdbg]   fixup c{ci} at ({p[0]:.4f},{p[1]:.4f}) dnear {dnear:.5f}")
                samples[ci].append((float(mid), p, False))
                applied += 1
            if applied == 0:
                break
            for ci in {f[0] for f in fixups}:
                samples[ci].sort(key=lambda s: s[0])
            pts = _rebuild_rim_points(pts, samples)

        last_err = (
            f"attempt {attempt}: min angle {angle:.2f} deg, "
            f"unresolved interface circles {sorted(fixup_circles)}"
        )
        for ci in fixup_circles:
            densify[ci] = densify.get(ci, 1.0) * 1.4
        if not fixup_circles:
            smoothing += 1
    raise MeshGenerationError(f"initial mesh generation failed: {last_err}")


def element_h_guess(pts, v, nb):
    return float(np.mean(np.hypot(*(pts[nb] - pts[v]).T)))


def _rim_spacings(geometry, samples):
    """Median chord length of each sampled circle (inf when unsampled)."""
    out = []
    for ci, ss in enumerate(samples):
        if len(ss) < 2:
            out.append(np.inf)
            continue
        p = np.array([s[1] for s in ss])
        d = np.linalg.norm(np.diff(np.vstack([p, p[:1]]), axis=0), axis=1)
        out.append(float(np.median(d)))
    return out


def _quality_insertion(geometry, pts, samples, min_angle, protect=(),
                       max_passes=60, per_pass=400):
    """Ruppert-style refinement: split bad triangles and encroached chords.

    Circumcenters of below-target triangles are inserted; a circumcenter
    encroaching a sampled interface chord is replaced by that chord's
    circle-projected midpoint, so interfaces refine along with the interior
    and grading between fine rims and coarse lattices emerges automatically.
    Returns updated (points, samples); new rim points are inserted into the
    per-circle sample lists so downstream chord/curved-edge bookkeeping
    stays consistent.
    """
    from scipy.spatial import cKDTree

    r_bnd = geometry.outer_radius
    target = min_angle + 1.5  # small cushion over the acceptance threshold
    samples = [list(ss) for ss in samples]

    def chord_index():
        """Diametral-disk data of every active-arc chord."""
        mids, half, who = [], [], []
        for ci, ss in enumerate(samples):
            if not ss:
                continue
            for a, b in _arc_chords(geometry, ci, ss):
                pa, pb = ss[a][1], ss[b][1]
                mids.append(0.5 * (pa + pb))
                half.append(0.5 * np.linalg.norm(pb - pa))
                who.append((ci, a, b))
        if not mids:
            return None, None, None
        return cKDTree(np.array(mids)), np.array(half), who

    def vertex_index():
        """Rim samples with their local spacings (vertex protection balls)."""
        rp, loc = [], []
        for ss in samples:
            if not ss:
                continue
            p = np.array([s[1] for s in ss])
            d = np.linalg.norm(np.diff(np.vstack([p, p[:1]]), axis=0), axis=1)
            rp.append(p)
            loc.append(np.minimum(d, np.roll(d, 1)))
        if not rp:
            return None, None
        return cKDTree(np.vstack(rp)), np.concatenate(loc)

    def in_protected(p):
        return any(np.hypot(p[0] - q[0], p[1] - q[1]) < rad for q, rad in protect)

    def split_chord(ci, ka, kb):
        """Insert the circle-projected midpoint of chord (ka, kb)."""
        ss = samples[ci]
        c = geometry.circles[ci]
        gap = (ss[kb][0] - ss[ka][0]) % (2 * np.pi)
        if gap == 0 or gap * c.r < 0.015:  # length floor near weld corners
            return False
        mid_ang = (ss[ka][0] + gap / 2) % (2 * np.pi)
        p = c.center + c.r * np.array([np.cos(mid_ang), np.sin(mid_ang)])
        if in_protected(p):
            return False
        samples[ci].append((float(mid_ang), p, False))
        samples[ci].sort(key=lambda s: s[0])
        return True

    for _ in range(max_passes):
        chord_tree, chord_half, chord_who = chord_index()
        vert_tree, vert_loc = vertex_index()
        tri = Delaunay(pts)
        v = pts[tri.simplices]
        angles = np.full(len(v), 180.0)
        for i in range(3):
            a = v[:, (i + 1) % 3] - v[:, i]
            b = v[:, (i + 2) % 3] - v[:, i]
            la = np.linalg.norm(a, axis=1)
            lb = np.linalg.norm(b, axis=1)
            cosang = np.einsum("ij,ij->i", a, b) / np.where(la * lb > 0, la * lb, 1)
            angles = np.minimum(angles, np.degrees(np.arccos(np.clip(cosang, -1, 1))))
        cen = v.mean(axis=1)
        inside = np.hypot(cen[:, 0], cen[:, 1]) < r_bnd
        bad = np.flatnonzero((angles < target) & inside)
        if len(bad) == 0:
            return pts, samples
        bad = bad[np.argsort(angles[bad])][:per_pass]

        # circumcenters, computed relative to vertex c for conditioning
        a, b, c = v[bad, 0], v[bad, 1], v[bad, 2]
        A = a - c
        B = b - c
        d = 2 * (A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0])
        d = np.where(np.abs(d) < 1e-300, 1e-300, d)
        na = np.einsum("ij,ij->i", A, A)
        nb = np.einsum("ij,ij->i", B, B)
        cc = c + np.column_stack([
            (B[:, 1] * na - A[:, 1] * nb) / d,
            (A[:, 0] * nb - B[:, 0] * na) / d,
        ])
        excl = 0.45 * np.linalg.norm(cc - a, axis=1)

        new_pts = []
        new_excl = []
        rim_added = False
        r_cc = np.hypot(cc[:, 0], cc[:, 1])
        if vert_tree is not None:
            vdist, vidx = vert_tree.query(cc)
        for i in range(len(cc)):
            if in_protected(cc[i]):
                continue
            # vertex protection: adjacent diametral disks pinch to zero at
            # shared rim samples, so points may not crowd the arc there
            if vert_tree is not None and vdist[i] < 0.6 * vert_loc[vidx[i]]:
                continue
            enc = None
            if r_cc[i] >= r_bnd * (1 - 1e-9):
                # outside the domain: treat as encroaching the nearest chord
                if chord_tree is not None:
                    _, j = chord_tree.query(cc[i])
                    enc = j
            elif chord_tree is not None:
                # encroached diametral disk of any nearby chord
                js = chord_tree.query_ball_point(cc[i], chord_half.max() * 1.01)
                for j in js:
                    if np.linalg.norm(cc[i] - chord_tree.data[j]) < chord_half[j] * 0.999:
                        enc = j
                        break
            if enc is not None:
                ci, ka, kb = chord_who[enc]
                rim_added = split_chord(ci, ka, kb) or rim_added
                continue
            if r_cc[i] < r_bnd * (1 - 1e-9):
                new_pts.append(cc[i])
                new_excl.append(excl[i])

        if new_pts:
            cand = np.array(new_pts)
            ex = np.array(new_excl)
            near, _ = cKDTree(pts).query(cand)
            ok = near >= 0.8 * ex
            cand, ex = cand[ok], ex[ok]
            keep = np.ones(len(cand), dtype=bool)
            for i in range(len(cand)):
                if not keep[i]:
                    continue
                dd = np.hypot(cand[i + 1:, 0] - cand[i, 0],
                              cand[i + 1:, 1] - cand[i, 1])
                keep[i + 1:] &= dd > 0.9 * np.maximum(ex[i + 1:], ex[i])
            if keep.any():
                pts = np.vstack([pts, cand[keep]])
            elif not rim_added:
                return pts, samples
        elif not rim_added:
            return pts, samples
        if rim_added:
            pts = _rebuild_rim_points(pts, samples)
    return pts, samples


def _rebuild_rim_points(pts, samples):
    """Append any rim samples not yet present as mesh points."""
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    extra = []
    for ss in samples:
        for s in ss:
            d, _ = tree.query(s[1])
            if d > 1e-12:
                extra.append(s[1])
    if extra:
        pts = np.vstack([pts, np.array(extra)])
    return pts


def _verify_interfaces(geometry, pts, simplices, samples):
    """Check chord edges are present and no element straddles an active arc.

    Returns (ok, fixups) with targeted arc-split requests (circle id, angle)
    that repair each violation by refining the offending arc segment.
    """
    edge_set = set()
    for s in simplices:
        for a, b in _LOCAL_EDGES:
            edge_set.add((min(s[a], s[b]), max(s[a], s[b])))

    point_ids = _rim_point_ids(pts, samples)
    fixups = []
    for ci, ss in enumerate(samples):
        if not ss:
            continue
        ids = point_ids[ci]
        for a, b in _arc_chords(geometry, ci, ss):
            key = (min(ids[a], ids[b]), max(ids[a], ids[b]))
            if key[0] != key[1] and key not in edge_set:
                gap = (ss[b][0] - ss[a][0]) % (2 * np.pi)
                fixups.append((ci, (ss[a][0] + gap / 2) % (2 * np.pi)))
    # straddle test against the material-separating (active) arcs only; a
    # triangle is in violation when an active arc point lies strictly inside
    v = pts[simplices]
    for ci, c in enumerate(geometry.circles):
        if not samples[ci]:
            continue
        sd = np.hypot(v[..., 0] - c.cx, v[..., 1] - c.cy) - c.r
        tol = max(1e-9, 1e-9 * c.r)
        crossing = np.flatnonzero((sd.min(axis=1) < -tol) & (sd.max(axis=1) > tol))
        for t in crossing:
            ang = _active_arc_inside_triangle(geometry, c, v[t])
            if ang is not None:
                fixups.append((ci, ang))
    return (len(fixups) == 0), fixups


def _active_arc_inside_triangle(geometry, c, tri_verts, n_probe=64):
    """Angle of a material-separating circle point strictly inside, or None."""
    ang = np.arctan2(tri_verts[:, 1] - c.cy, tri_verts[:, 0] - c.cx)
    mid = np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())
    rel = (ang - mid + np.pi) % (2 * np.pi) - np.pi
    span = max(rel.max() - rel.min(), 1e-3)
    th = mid + np.linspace(rel.min() - 0.2 * span, rel.max() + 0.2 * span, n_probe)
    d = np.column_stack([np.cos(th), np.sin(th)])
    arc = c.center + c.r * d
    # strict point-in-triangle via barycentric coordinates
    a, b, cc = tri_verts
    det = (b[0] - a[0]) * (cc[1] - a[1]) - (cc[0] - a[0]) * (b[1] - a[1])
    l1 = ((b[0] - arc[:, 0]) * (cc[1] - arc[:, 1])
          - (cc[0] - arc[:, 0]) * (b[1] - arc[:, 1])) / det
    l2 = ((cc[0] - arc[:, 0]) * (a[1] - arc[:, 1])
          - (a[0] - arc[:, 0]) * (cc[1] - arc[:, 1])) / det
    l3 = 1.0 - l1 - l2
    eps = 1e-7
    inside = (l1 > eps) & (l2 > eps) & (l3 > eps)
    if not inside.any():
        return None
    delta = max(1e-9, 1e-7 * c.r)
    dd = d[inside]
    m_in = geometry.material_at(c.center + (c.r - delta) * dd)
    m_out = geometry.material_at(c.center + (c.r + delta) * dd)
    active = (m_in != m_out) | (m_out < 0)
    if not active.any():
        return None
    return float(th[inside][active][0] % (2 * np.pi))


def _rim_point_ids(pts, samples):
    """Map each circle sample back to its vertex id in pts (exact match)."""
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    ids = {}
    for ci, ss in enumerate(samples):
        if not ss:
            ids[ci] = []
            continue
        q = np.array([s[1] for s in ss])
        _, idx = tree.query(q)
        ids[ci] = idx.tolist()
    return ids


def _mesh_min_angle(pts, simplices):
    v = pts[simplices]
    worst = 180.0
    for i in range(3):
        a = v[:, (i + 1) % 3] - v[:, i]
        b = v[:, (i + 2) % 3] - v[:, i]
        cosang = np.einsum("ij,ij->i", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        )
        worst = min(worst, float(np.degrees(np.arccos(np.clip(cosang, -1, 1))).min()))
    return worst


def _finalize_mesh(geometry, pts, simplices, samples):
    centroids = pts[simplices].mean(axis=1)
    mats = geometry.material_at(centroids)

    point_ids = _rim_point_ids(pts, samples)
    curved = {}
    for ci, c in enumerate(geometry.circles):
        ss = samples[ci]
        if not ss:
            continue
        ids = point_ids[ci]
        for a, b in _arc_chords(geometry, ci, ss):
            va, vb = ids[a], ids[b]
            if va == vb:
                continue
            key = (min(va, vb), max(va, vb))
            chord_mid = 0.5 * (pts[va] + pts[vb])
            d = chord_mid - c.center
            nd = np.linalg.norm(d)
            if nd < 1e-12 * c.r:
                continue
            curved[key] = (ci, c.center + c.r * d / nd)

    # peak = vertex opposite the longest edge, rotation keeps orientation
    v = pts[simplices]
    el = np.stack([
        np.linalg.norm(v[:, 2] - v[:, 1], axis=1),
        np.linalg.norm(v[:, 0] - v[:, 2], axis=1),
        np.linalg.norm(v[:, 1] - v[:, 0], axis=1),
    ], axis=1)
    peak = el.argmax(axis=1)
    rolled = simplices.copy()
    for k in (1, 2):
        m = peak == k
        rolled[m] = np.roll(simplices[m], -k, axis=1)

    return Mesh(
        vertices=pts,
        triangles=rolled,
        materials=mats,
        curved=curved,
        geometry=geometry,
    )


# ---------------------------------------------------------------------------
# text export
# ---------------------------------------------------------------------------


def export_mesh(mesh: Mesh, path):
    """Line-oriented text dump: VERTICES, TRIANGLES, CURVED sections."""
    lines = [f"VERTICES {mesh.n_vertices}"]
    for i, (x, y) in enumerate(mesh.vertices):
        lines.append(f"{i} {x:.17g} {y:.17g}")
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    for i, t in enumerate(mesh.triangles):
        lines.append(
            f"{i} {t[0]} {t[1]} {t[2]} {mesh.materials[i]} {mesh.levels[i]}"
        )
    lines.append(f"CURVED {len(mesh.curved)}")
    for (a, b) in sorted(mesh.curved):
        cid, mid = mesh.curved[(a, b)]
        lines.append(f"{a} {b} {cid} {mid[0]:.17g} {mid[1]:.17g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
