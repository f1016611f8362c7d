"""Geometric initializers: exactness on pure-pixel data and tie rules."""

import itertools

import numpy as np
import pytest

from endnet import HyperCube, dmaxd, vca
from endnet.errors import DegenerateData


def _simplex_cube(seed=0, n_mixed=9):
    """3 pure vertices + noiseless mixtures, 12 pixels of 6 bands."""
    rng = np.random.default_rng(seed)
    verts = rng.uniform(0.1, 1.0, (3, 6))
    mixes = rng.dirichlet(np.ones(3) * 0.8, size=n_mixed) @ verts
    data = np.vstack([verts, mixes])
    return HyperCube(3, 4, 6, data), verts


def test_vca_recovers_pure_vertices():
    cube, verts = _simplex_cube()
    res = vca(cube, 3, seed=0)
    got = {tuple(np.round(r, 12)) for r in res.endmembers.rows}
    want = {tuple(np.round(v, 12)) for v in verts}
    assert got == want


def test_vca_deterministic_and_seed_sensitive():
    cube, _ = _simplex_cube()
    a = vca(cube, 3, seed=1)
    b = vca(cube, 3, seed=1)
    assert a.pixel_indices == b.pixel_indices
    np.testing.assert_array_equal(a.endmembers.rows, b.endmembers.rows)


def test_vca_k1_max_projection():
    cube, _ = _simplex_cube()
    res = vca(cube, 1, seed=0)
    assert len(res.pixel_indices) == 1
    # the pick is an actual data pixel
    np.testing.assert_array_equal(
        res.endmembers.rows[0], cube.data[res.pixel_indices[0]])


def test_vca_permutation_stable():
    cube, _ = _simplex_cube(seed=3)
    rng = np.random.default_rng(4)
    perm = rng.permutation(cube.n_pixels)
    shuffled = HyperCube(cube.height, cube.width, cube.bands, cube.data[perm])
    a = vca(cube, 3, seed=0)
    b = vca(shuffled, 3, seed=0)
    sa = {tuple(np.round(r, 12)) for r in a.endmembers.rows}
    sb = {tuple(np.round(r, 12)) for r in b.endmembers.rows}
    assert sa == sb


def test_dmaxd_two_cluster_tie_break():
    cube = HyperCube(1, 4, 1, [[0.0], [0.0], [1.0], [1.0]])
    res = dmaxd(cube, 2)
    assert res.pixel_indices == [0, 2]


def test_dmaxd_first_pair_is_max_distance():
    rng = np.random.default_rng(5)
    data = rng.random((40, 4))
    cube = HyperCube(5, 8, 4, data)
    res = dmaxd(cube, 3)
    i, j = res.pixel_indices[:2]
    got = np.linalg.norm(data[i] - data[j])
    best = max(np.linalg.norm(a - b) for a, b in itertools.combinations(data, 2))
    assert abs(got - best) < 1e-12


def test_dmaxd_matches_bruteforce_volume():
    """On a noiseless pure-pixel simplex, greedy picks = max-volume subset."""
    cube, verts = _simplex_cube(seed=6)
    res = dmaxd(cube, 3)
    data = cube.data

    def vol2(idx):
        v = data[list(idx)]
        g = (v[1:] - v[0]) @ (v[1:] - v[0]).T
        return np.linalg.det(g)

    best = max(itertools.combinations(range(12), 3), key=vol2)
    assert set(res.pixel_indices) == set(best)
    got = {tuple(np.round(r, 12)) for r in res.endmembers.rows}
    want = {tuple(np.round(v, 12)) for v in verts}
    assert got == want


def test_both_return_data_pixels(noiseless_scene):
    cube, _, _ = noiseless_scene
    for res in (vca(cube, 4, seed=0), dmaxd(cube, 4)):
        for idx, row in zip(res.pixel_indices, res.endmembers.rows):
            np.testing.assert_array_equal(row, cube.data[idx])
        assert len(set(res.pixel_indices)) == 4


def test_identical_pixels_degenerate():
    cube = HyperCube(1, 4, 3, np.ones((4, 3)))
    with pytest.raises(DegenerateData):
        vca(cube, 2)
    with pytest.raises(DegenerateData):
        dmaxd(cube, 2)


def test_k_out_of_range():
    cube = HyperCube(1, 3, 2, np.eye(3, 2))
    with pytest.raises(ValueError):
        vca(cube, 5)
    with pytest.raises(ValueError):
        dmaxd(cube, 0)


def test_dmaxd_rank_deficient_k():
    # 1-band data cannot support a 3-vertex simplex
    cube = HyperCube(1, 4, 1, [[0.0], [0.3], [0.7], [1.0]])
    with pytest.raises((DegenerateData, ValueError)):
        dmaxd(cube, 3)
