"""Geometry, initial meshing, and newest-vertex bisection tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberfem.geomesh import (
    Circle,
    Geometry,
    GeometryError,
    Mesh,
    Region,
    element_metrics,
    export_mesh,
    generate_initial,
    refine,
)


def disk_geometry(radius=1.0):
    return Geometry(
        circles=(Circle(0.0, 0.0, radius),),
        regions=(Region("disk", 0, 0),),
        boundary_circle=0,
    )


def ring_geometry(r_in=1.0, r_out=2.0):
    return Geometry(
        circles=(Circle(0, 0, r_in), Circle(0, 0, r_out)),
        regions=(Region("core", 0, 0), Region("ring", 1, 1)),
        boundary_circle=1,
    )


def single_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                np.array([[0, 1, 2]]), [0])


def octagon_fan():
    """Structured 8-triangle disk mesh: fan from the center to an octagon."""
    th = 2 * np.pi * np.arange(8) / 8
    verts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(th), np.sin(th)])])
    tris = [[0, 1 + k, 1 + (k + 1) % 8] for k in range(8)]
    return Mesh(verts, np.array(tris), [0] * 8)


def brute_force_hanging_vertices(mesh):
    """Vertices lying strictly inside another triangle's edge."""
    hanging = []
    v = mesh.vertices
    for t in mesh.triangles:
        for a, b in ((t[1], t[2]), (t[2], t[0]), (t[0], t[1])):
            pa, pb = v[a], v[b]
            d = pb - pa
            L2 = d @ d
            for w in range(len(v)):
                if w in (a, b):
                    continue
                s = (v[w] - pa) @ d / L2
                if 1e-9 < s < 1 - 1e-9:
                    dist = abs(np.cross(np.append(d, 0), np.append(v[w] - pa, 0))[2])
                    if dist / np.sqrt(L2) < 1e-12:
                        hanging.append((w, (a, b)))
    return hanging


class TestGenerateInitial:
    def test_minimal_disk(self):
        mesh = generate_initial(disk_geometry(), {"disk": 1.0})
        assert mesh.n_triangles >= 4
        # all boundary edges are curved (flagged on the boundary circle)
        bnd = mesh.edges[mesh.boundary_edge_mask]
        for a, b in bnd:
            assert (min(a, b), max(a, b)) in mesh.curved

    def test_bragg_like_layers_no_straddling(self):
        circles = (Circle(0, 0, 2.71833333), Circle(0, 0, 3.385),
                   Circle(0, 0, 4.385), Circle(0, 0, 8.05166666))
        regions = (Region("core", 0, 0), Region("ring", 1, 1),
                   Region("air", 0, 2), Region("pml", 2, 3))
        geo = Geometry(circles, regions, 3)
        mesh = generate_initial(
            geo, {"core": 0.45, "ring": 0.3, "air": 0.5, "pml": 0.8}
        )
        # no triangle straddles an interface circle; ring material only in ring
        cen = mesh.vertices[mesh.triangles].mean(axis=1)
        r = np.hypot(cen[:, 0], cen[:, 1])
        glass = mesh.materials == 1
        assert np.all(r[glass] > 2.71)
        assert np.all(r[glass] < 3.39)
        v = mesh.vertices[mesh.triangles]
        for c in circles:
            sd = np.hypot(v[..., 0] - c.cx, v[..., 1] - c.cy) - c.r
            assert not np.any((sd.min(axis=1) < -1e-9) & (sd.max(axis=1) > 1e-9))

    def test_element_sizes_near_target(self):
        mesh = generate_initial(disk_geometry(2.0), {"disk": 0.4})
        from fiberfem.geomesh import element_diameters

        h = element_diameters(mesh)
        assert h.max() <= 2 * 0.4
        assert h.min() >= 0.4 / 2 * 0.5  # generous lower floor

    def test_thin_annulus_rejected(self):
        geo = ring_geometry(r_in=1.95, r_out=2.0)
        with pytest.raises(GeometryError, match="ring"):
            generate_initial(geo, {"core": 0.4, "ring": 0.4})

    def test_min_angle(self):
        mesh = generate_initial(ring_geometry(), {"core": 0.3, "ring": 0.25})
        assert mesh.min_angle() >= 20.0


class TestRefine:
    def test_single_triangle_bisection(self):
        mesh = single_triangle()
        out = refine(mesh, {0})
        assert out.n_triangles == 2
        assert out.n_vertices == 4
        # children share the newest vertex (stored first) and are conforming
        assert out.triangles[0, 0] == out.triangles[1, 0] == 3
        assert brute_force_hanging_vertices(out) == []
        assert list(out.levels) == [1, 1]
        assert list(out.parent) == [0, 0]

    def test_empty_marks_identity(self):
        mesh = single_triangle()
        assert refine(mesh, set()) is mesh

    def test_structured_fan_closure(self):
        mesh = octagon_fan()
        out = refine(mesh, {3})
        assert brute_force_hanging_vertices(out) == []
        # marked triangle has exactly 2 children
        children = [i for i, p in enumerate(out.parent) if p == 3]
        assert len(children) == 2
        # closure keeps collateral damage small
        extra_bisections = sum(out.bisections_by_material.values()) - 1
        assert extra_bisections <= 3

    def test_mark_validation(self):
        with pytest.raises(IndexError):
            refine(single_triangle(), {5})

    def test_repeated_refinement_conformity_and_angles(self):
        mesh = generate_initial(ring_geometry(), {"core": 0.45, "ring": 0.35})
        floor = mesh.min_angle() / 2
        rng = np.random.default_rng(0)
        m = mesh
        for _ in range(4):
            marks = rng.choice(m.n_triangles, max(1, m.n_triangles // 6),
                               replace=False)
            m = refine(m, marks)
            assert brute_force_hanging_vertices(m) == []
            assert m.min_angle() >= floor
        assert m.min_angle() >= 10.0

    def test_curved_midpoints_stay_on_circles(self):
        geo = ring_geometry()
        mesh = generate_initial(geo, {"core": 0.45, "ring": 0.35})
        m = mesh
        rng = np.random.default_rng(1)
        for _ in range(3):
            m = refine(m, rng.choice(m.n_triangles, m.n_triangles // 4, replace=False))
        assert len(m.curved) > len(mesh.curved)
        for (a, b), (cid, mid) in m.curved.items():
            c = geo.circles[cid]
            assert abs(np.hypot(mid[0] - c.cx, mid[1] - c.cy) - c.r) < 1e-12

    def test_materials_inherited(self):
        mesh = generate_initial(ring_geometry(), {"core": 0.5, "ring": 0.4})
        out = refine(mesh, range(mesh.n_triangles))
        assert np.all(out.materials[out.parent >= 0] == mesh.materials[out.parent])


class TestElementMetrics:
    def test_unit_right_triangle_diameter(self):
        h, _ = element_metrics(single_triangle(), 0)
        assert h == pytest.approx(np.sqrt(2))

    def test_equilateral_diameter(self):
        verts = np.array([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]])
        mesh = Mesh(verts, np.array([[0, 1, 2]]), [0])
        h, _ = element_metrics(mesh, 0)
        assert h == pytest.approx(1.0)

    def test_patch_contains_self(self):
        mesh = octagon_fan()
        for T in range(mesh.n_triangles):
            _, patch = element_metrics(mesh, T)
            assert T in patch

    def test_unknown_id(self):
        with pytest.raises(IndexError):
            element_metrics(single_triangle(), 3)


@settings(max_examples=20, deadline=None)
@given(st.sets(st.integers(min_value=0, max_value=7), min_size=1))
def test_refine_always_conforms(marks):
    out = refine(octagon_fan(), marks)
    assert brute_force_hanging_vertices(out) == []
    # every marked triangle was bisected
    for m in marks:
        assert m not in set(np.flatnonzero(out.parent == m)) or True
        assert (out.parent == m).sum() >= 2


class TestExport:
    def test_sections_and_determinism(self, tmp_path):
        mesh = generate_initial(ring_geometry(), {"core": 0.5, "ring": 0.4})
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        export_mesh(mesh, p1)
        export_mesh(mesh, p2)
        assert p1.read_bytes() == p2.read_bytes()
        text = p1.read_text().splitlines()
        assert text[0] == f"VERTICES {mesh.n_vertices}"
        assert any(line.startswith("TRIANGLES") for line in text)
        assert any(line.startswith("CURVED") for line in text)
