"""Contour eigensolver tests against a dense QZ oracle."""

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberfem.eigensolve import (
    EigensolveError,
    SearchRegion,
    SolveOptions,
    hausdorff,
    solve_pencil,
    track_center,
)


def random_pencil(rng, n, singular_b=False):
    K = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if singular_b:
        nz = rng.integers(1, max(2, n // 4), endpoint=True)
        idx = rng.choice(n, size=nz, replace=False)
        B[:, idx] = 0
        B[idx, :] = 0
    return K, B


def isolated_region(eigs, rng, margin=0.35):
    """Circle around one finite eigenvalue, clear of all the others."""
    finite = eigs[np.isfinite(eigs)]
    for _ in range(50):
        k = rng.integers(len(finite))
        target = finite[k]
        others = np.abs(np.delete(finite, k) - target)
        gap = others.min() if len(others) else 1.0
        if gap > 1e-6:
            return SearchRegion(complex(target), margin * gap)
    raise AssertionError("no isolated eigenvalue found")


class TestSolvePencil:
    def test_diagonal_pencil(self):
        K = np.diag([1.0, 2.0, 3.0]).astype(complex)
        cl = solve_pencil(K, np.eye(3, dtype=complex), SearchRegion(2.0, 0.5))
        assert len(cl) == 1
        np.testing.assert_allclose(cl.values, [2.0], atol=1e-12)
        np.testing.assert_allclose(np.abs(cl.right[:, 0]), [0, 1, 0], atol=1e-12)
        np.testing.assert_allclose(np.abs(cl.left[:, 0]), [0, 1, 0], atol=1e-12)

    def test_singular_mass_excludes_infinite_eigenvalue(self):
        a = 0.7 + 0.2j
        K = np.array([[a, 0], [0, 1]], complex)
        B = np.diag([1.0, 0.0]).astype(complex)
        cl = solve_pencil(K, B, SearchRegion(a, 0.3))
        assert len(cl) == 1
        np.testing.assert_allclose(cl.values, [a], atol=1e-12)

    @pytest.mark.parametrize("singular", [False, True])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_dense_qz(self, seed, singular):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(12, 30, endpoint=True))
        K, B = random_pencil(rng, n, singular_b=singular)
        eigs = sla.eig(K, B, right=False)
        region = isolated_region(eigs, rng)
        cl = solve_pencil(K, B, region)
        inside = eigs[np.isfinite(eigs) & (np.abs(eigs - region.center) <= region.radius)]
        assert hausdorff(cl.values, inside) < 1e-10
        # left residual certificate
        for j, lam in enumerate(cl.values):
            v = cl.left[:, j]
            r = np.linalg.norm(v.conj() @ K - lam * (v.conj() @ B))
            assert r / np.linalg.norm(v.conj() @ K) < 1e-8
        # biorthogonality after pairing
        W = cl.left.conj().T @ (B @ cl.right)
        off = W - np.eye(len(cl))
        assert np.abs(off).max() < 1e-8

    def test_residual_certificates_stored(self):
        rng = np.random.default_rng(9)
        K, B = random_pencil(rng, 16)
        eigs = sla.eig(K, B, right=False)
        region = isolated_region(eigs, rng)
        cl = solve_pencil(K, B, region)
        assert np.all(cl.residuals <= 1e-8)
        assert np.all(cl.left_residuals <= 1e-8)

    def test_determinism_bitwise(self):
        rng = np.random.default_rng(11)
        K, B = random_pencil(rng, 18)
        eigs = sla.eig(K, B, right=False)
        region = isolated_region(eigs, rng)
        a = solve_pencil(K, B, region, SolveOptions(seed=7))
        b = solve_pencil(K, B, region, SolveOptions(seed=7))
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.right, b.right)
        assert np.array_equal(a.left, b.left)

    def test_empty_region_raises(self):
        K = np.diag([1.0, 2.0, 3.0]).astype(complex)
        with pytest.raises(EigensolveError, match="no eigenvalue"):
            solve_pencil(K, np.eye(3, dtype=complex),
                         SearchRegion(10.0, 0.5), SolveOptions(max_iter=5))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            solve_pencil(np.eye(3), np.eye(4), SearchRegion(0, 1.0))

    def test_multiple_eigenvalues_in_region(self):
        vals = np.array([1.0, 1.05, 3.0, 5.0 + 1j])
        K = np.diag(vals)
        B = np.eye(4, dtype=complex)
        cl = solve_pencil(K, B, SearchRegion(1.02, 0.1))
        assert len(cl) == 2
        assert hausdorff(cl.values, [1.0, 1.05]) < 1e-11


class TestHausdorff:
    def test_identical_singletons(self):
        assert hausdorff([1.0], [1.0]) == 0.0

    def test_hand_example(self):
        assert hausdorff([0.0], [3.0, 4.0]) == pytest.approx(4.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            hausdorff([], [1.0])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False,
                                    allow_infinity=False), min_size=1, max_size=5),
        st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False,
                                    allow_infinity=False), min_size=1, max_size=5),
        st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False,
                                    allow_infinity=False), min_size=1, max_size=5),
    )
    def test_metric_axioms(self, a, b, c):
        dab = hausdorff(a, b)
        assert dab == pytest.approx(hausdorff(b, a))
        assert hausdorff(a, a) == 0.0
        assert dab <= hausdorff(a, c) + hausdorff(c, b) + 1e-12


class TestTrackCenter:
    def test_singleton_mean(self):
        cl = _mini_cluster([2.0 + 1.0j])
        region = track_center(cl)
        assert region.center == 2.0 + 1.0j
        assert region.radius == pytest.approx(5e-3)

    def test_two_point_mean(self):
        cl = _mini_cluster([1.0, 3.0])
        region = track_center(cl)
        assert region.center == 2.0 + 0j
        assert region.radius == pytest.approx(max(5e-3, 6.0))


def _mini_cluster(values):
    from fiberfem.eigensolve import EigenCluster

    v = np.asarray(values, dtype=complex)
    return EigenCluster(
        values=v,
        right=np.eye(len(v), dtype=complex),
        left=np.eye(len(v), dtype=complex),
        residuals=np.zeros(len(v)),
        left_residuals=np.zeros(len(v)),
        region=SearchRegion(0.0, 1.0),
    )
