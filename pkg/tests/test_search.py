import math

import numpy as np
import pytest

from explab.search import (
    RowMesh,
    TransportPolytope,
    elog_batch,
    entropy_batch,
    golden_max,
    mi_batch,
    pattern_min,
    sup_ray,
    xlogx,
    zoom_slot_grids,
)


def test_golden_max_parabola():
    x, v = golden_max(lambda t: -(t - 1.3) ** 2 + 2.0, 0.0, 4.0)
    assert x == pytest.approx(1.3, abs=1e-6)
    assert v == pytest.approx(2.0, abs=1e-12)


def test_pattern_min_quadratic():
    f = lambda z: float((z[0] - 0.3) ** 2 + (z[1] + 0.7) ** 2)
    x, fx, evals = pattern_min(np.zeros(2), f, step=0.5, iters=40, shrink=0.5)
    assert fx < 1e-10
    assert np.allclose(x, [0.3, -0.7], atol=1e-5)
    assert evals > 0


def test_pattern_min_respects_infeasible():
    f = lambda z: float(z[0] ** 2) if z[0] >= 1.0 else math.inf
    x, fx, _ = pattern_min(np.array([2.0]), f, step=0.5, iters=30, shrink=0.5)
    assert fx == pytest.approx(1.0, abs=1e-6)


def test_sup_ray_boundary_doubling():
    res = sup_ray(lambda t: -((t - 20.0) ** 2), hi=8.0, doublings=3)
    assert res.arg == pytest.approx(20.0, rel=1e-3)
    assert res.domain_hi >= 20.0


def test_sup_ray_interior():
    res = sup_ray(lambda t: t * math.exp(-t), hi=8.0)
    assert res.arg == pytest.approx(1.0, abs=1e-3)
    assert not res.hit_boundary


def test_mi_batch_matches_scalar():
    rng = np.random.default_rng(0)
    j = rng.random((5, 3, 2))
    j /= j.sum(axis=(1, 2), keepdims=True)
    vals = mi_batch(j)
    for i in range(5):
        m = j[i]
        row, col = m.sum(axis=1), m.sum(axis=0)
        want = sum(m[a, b] * math.log(m[a, b] / (row[a] * col[b]))
                   for a in range(3) for b in range(2) if m[a, b] > 0)
        assert vals[i] == pytest.approx(want, abs=1e-12)


def test_elog_batch_zero_support():
    logw = np.array([[0.0, -np.inf], [-1.0, -2.0]])
    j = np.array([[[0.5, 0.0], [0.25, 0.25]],
                  [[0.25, 0.25], [0.25, 0.25]]])
    out = elog_batch(j, logw)
    assert out[0] == pytest.approx(0.5 * 0 + 0.25 * -1 + 0.25 * -2)
    assert out[1] == -math.inf


class TestTransportPolytope:
    def test_marginals_preserved(self):
        p = np.array([0.3, 0.7])
        q = np.array([0.6, 0.4])
        poly = TransportPolytope(p, q)
        c = np.array([[0.05], [-0.1], [0.0]])
        joints = poly.joints(c)
        assert np.allclose(joints.sum(axis=2), p)
        assert np.allclose(joints.sum(axis=1), q)

    def test_param_roundtrip(self):
        poly = TransportPolytope(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        j = np.array([[0.4, 0.1], [0.1, 0.4]])
        assert np.allclose(poly.joints(poly.param_of(j)), j)

    def test_feasible(self):
        poly = TransportPolytope(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        assert poly.feasible(poly.joints(np.array([0.2]))[None])[0]
        assert not poly.feasible(poly.joints(np.array([0.9]))[None])[0]

    def test_grid_respects_budget(self):
        poly = TransportPolytope(np.full(3, 1 / 3), np.full(3, 1 / 3))
        mesh = poly.grid(17, budget=10_000)
        assert mesh.shape[1] == poly.dim == 4
        assert mesh.shape[0] <= 10_000


class TestRowMesh:
    def mesh(self):
        logw = np.log(np.array([[0.9, 0.1], [0.1, 0.9]]))
        grid = np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
        return RowMesh(np.array([0.5, 0.5]), np.array([0, 1]), np.array([1, 0]),
                       grid, 2, logw)

    def test_build_matches_stats(self):
        mesh = self.mesh()
        arrs = mesh.build()
        for flat in range(mesh.size()):
            rows = mesh.rows_of(flat)
            st = mesh.stats_of(rows)
            assert np.allclose(arrs["qy"][flat], st["qy"])
            assert np.allclose(arrs["qxy"][flat], st["qxy"])
            assert np.allclose(arrs["qxpy"][flat], st["qxpy"])
            assert arrs["kl"][flat] == pytest.approx(st["kl"], abs=1e-12)

    def test_params_roundtrip(self):
        mesh = self.mesh()
        rows = np.array([[0.25, 0.75], [0.6, 0.4]])
        assert np.allclose(mesh.params_to_rows(mesh.rows_to_params(rows)), rows)
        assert mesh.params_to_rows(np.array([1.4, 0.2])) is None


def test_zoom_grids_contain_center():
    centers = np.array([[0.3, 0.7], [0.05, 0.95]])
    grids = zoom_slot_grids(centers, h=0.1, budget=10_000)
    for r, g in enumerate(grids):
        assert np.any(np.all(np.isclose(g, centers[r], atol=1e-12), axis=1))
        assert np.allclose(g.sum(axis=1), 1.0)
        assert np.all(g >= -1e-12)


def test_xlogx_and_entropy_batch():
    v = np.array([0.0, 0.5, 1.0])
    assert np.allclose(xlogx(v), [0.0, 0.5 * math.log(0.5), 0.0])
    assert entropy_batch(np.array([[0.5, 0.5]]))[0] == pytest.approx(math.log(2))
