"""Abundance estimation: SPU kernels, FCLS oracle, hidden activations."""

import numpy as np
import pytest

from endnet import (EndNetModel, SpectraMatrix, estimate_abundances, fcls,
                    hidden_abundances, spu_abundances, spu_sad)
from endnet.abundance import simplex_project
from endnet.errors import DegenerateSimplex


def _random_endmembers(k, d, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 1.0, (k, d))


# --- simplex projection -----------------------------------------------------

def _l2_dists(E, x):
    d2_ee = np.sum((E[:, None, :] - E[None, :, :]) ** 2, axis=2)
    d2_ep = np.sum((E - x) ** 2, axis=1)
    return d2_ee, d2_ep


def test_simplex_project_interior_point():
    E = _random_endmembers(3, 12, 0)
    a_true = np.array([0.2, 0.3, 0.5])
    d2_ee, d2_ep = _l2_dists(E, a_true @ E)
    np.testing.assert_allclose(simplex_project(d2_ee, d2_ep, 3), a_true,
                               atol=1e-9)


def test_simplex_project_output_valid():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(2, 6))
        E = rng.normal(size=(k, 8))
        x = 3.0 * rng.normal(size=8)  # usually outside the simplex
        d2_ee, d2_ep = _l2_dists(E, x)
        p = simplex_project(d2_ee, d2_ep, k)
        assert p.min() >= -1e-10
        assert abs(p.sum() - 1.0) < 1e-9


# --- spu --------------------------------------------------------------------

def test_spu_vertex_is_one_hot():
    E = _random_endmembers(4, 25, 1)
    np.testing.assert_allclose(spu_sad(E[2], E, kernel="l2"),
                               [0, 0, 1, 0], atol=1e-10)
    # the angle clamp leaves a ~1e-4 self-distance, so sad is only near one-hot
    np.testing.assert_allclose(spu_sad(E[2], E, kernel="sad"),
                               [0, 0, 1, 0], atol=1e-3)


def test_spu_k2_midpoint():
    E = np.array([[1.0, 0.0], [0.0, 1.0]])
    a = spu_sad(np.array([0.5, 0.5]), E, kernel="l2")
    np.testing.assert_allclose(a, [0.5, 0.5], atol=1e-10)


def test_spu_sad_scale_invariant():
    E = _random_endmembers(3, 20, 2)
    x = np.array([0.6, 0.3, 0.1]) @ E
    base = spu_sad(x, E, kernel="sad")
    for alpha in (0.1, 10.0):
        np.testing.assert_allclose(spu_sad(alpha * x, E, kernel="sad"),
                                   base, atol=1e-8)


def test_spu_coincident_endmembers():
    E = np.vstack([_random_endmembers(1, 10, 3)] * 2)
    with pytest.raises(DegenerateSimplex):
        spu_sad(E[0], E, kernel="sad")


def test_spu_needs_two_endmembers():
    E = _random_endmembers(1, 10, 4)
    with pytest.raises(ValueError):
        spu_sad(E[0], E)


def test_spu_unknown_kernel():
    E = _random_endmembers(3, 10, 5)
    with pytest.raises(ValueError):
        spu_sad(E[0], E, kernel="rbf")


# --- fcls -------------------------------------------------------------------

def test_fcls_recovers_interior_point():
    E = _random_endmembers(4, 30, 6)
    a_true = np.array([0.1, 0.2, 0.3, 0.4])
    a = fcls(a_true @ E, E)
    np.testing.assert_allclose(a, a_true, atol=1e-9)


def test_fcls_outside_face_clamps():
    # target beyond the e2 side of a 1-simplex in 2D projects to e2
    E = np.array([[1.0, 0.0], [0.0, 1.0]])
    a = fcls(np.array([-0.5, 1.5]), E)
    np.testing.assert_allclose(a, [0.0, 1.0], atol=1e-10)


def test_fcls_k1():
    E = _random_endmembers(1, 12, 7)
    np.testing.assert_allclose(fcls(0.3 * E[0], E), [1.0], atol=1e-12)


def test_fcls_optimal_vs_random_simplex_points():
    rng = np.random.default_rng(8)
    E = _random_endmembers(4, 15, 9)
    x = rng.random(15)
    a = fcls(x, E)
    best = np.linalg.norm(x - a @ E)
    samples = rng.dirichlet(np.ones(4), size=10000)
    cand = np.linalg.norm(x - samples @ E, axis=1).min()
    assert best <= cand + 1e-9


def test_fcls_rank_deficient():
    E = np.vstack([_random_endmembers(1, 10, 10)] * 3)
    with pytest.raises(DegenerateSimplex):
        fcls(E[0], E)


def test_spu_l2_matches_fcls_in_simplex():
    rng = np.random.default_rng(11)
    for k in (3, 4, 5):
        E = _random_endmembers(k, 40, 100 + k)
        A = rng.dirichlet(np.ones(k), size=50)
        for a_true in A:
            x = a_true @ E
            np.testing.assert_allclose(spu_sad(x, E, kernel="l2"),
                                       fcls(x, E), atol=1e-6)


# --- batched / hidden paths -------------------------------------------------

def _toy_model(seed=0, k=3, d=20):
    E = _random_endmembers(k, d, seed)
    model = EndNetModel.from_endmembers(E)
    model.run_mean[:] = 0.5
    model.run_var[:] = 1.0
    return model, E


def test_spu_abundances_valid_rows(small_scene):
    cube, endm, _ = small_scene
    amap = spu_abundances(endm, cube)
    assert amap.values.shape == (400, 3)
    assert amap.values.min() >= -1e-10
    np.testing.assert_allclose(amap.values.sum(axis=1), 1.0, atol=1e-8)


def test_spu_abundances_thread_parity(small_scene, monkeypatch):
    cube, endm, _ = small_scene
    monkeypatch.setenv("ENDNET_THREADS", "1")
    single = spu_abundances(endm, cube)
    monkeypatch.setenv("ENDNET_THREADS", "4")
    multi = spu_abundances(endm, cube)
    np.testing.assert_array_equal(single.values, multi.values)


def test_hidden_abundances_invariants(small_scene):
    cube, endm, _ = small_scene
    model = EndNetModel.from_endmembers(endm.rows)
    model.run_mean[:] = 0.5
    model.run_var[:] = 1.0
    amap = hidden_abundances(model, cube)
    assert amap.values.min() >= 0.0
    sums = amap.values.sum(axis=1)
    assert np.all((sums == 0.0) | (np.abs(sums - 1.0) < 1e-6))
    again = hidden_abundances(model, cube)
    np.testing.assert_array_equal(amap.values, again.values)


def test_hidden_dead_pixel_uniform(caplog):
    model, E = _toy_model(k=3, d=10)
    # push the shift far negative so every unit dies for every pixel
    model.rho[:] = -100.0
    model.run_mean[:] = 0.0
    model.run_var[:] = 1.0
    from endnet import HyperCube
    cube = HyperCube(1, 2, 10, np.abs(E[:2]))
    with caplog.at_level("INFO"):
        amap = hidden_abundances(model, cube)
    np.testing.assert_allclose(amap.values, 1.0 / 3.0, atol=1e-12)
    assert any("all-zero activation" in r.getMessage() for r in caplog.records)


def test_estimate_abundances_accuracy(small_scene):
    cube, endm, gt = small_scene
    model = EndNetModel.from_endmembers(endm.rows)
    amap = estimate_abundances(model, cube, method="spu")
    rmse = np.sqrt(np.mean((amap.values - gt.values) ** 2))
    assert rmse < 0.05  # 30 dB scene, true endmembers, angle-kernel spu


def test_estimate_abundances_unknown_method(small_scene):
    cube, endm, _ = small_scene
    model = EndNetModel.from_endmembers(endm.rows)
    with pytest.raises(ValueError):
        estimate_abundances(model, cube, method="nnls")
