"""Per-pixel fractional abundance estimation.

Three routes: simplex projection in a similarity-induced feature space
(default, angle kernel), the encoder's hidden activations, and a fully
constrained least-squares solver used as an independent oracle.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from .datatypes import AbundanceMap, HyperCube, SpectraMatrix
from .errors import DegenerateSimplex
from .net import HyperParams, forward_batch

log = logging.getLogger(__name__)

_NEG_TOL = -1e-10


def _sad_kernel(A, B, theta_clip=1e-7):
    """Similarity matrix C(a_i, b_j) between rows of A and rows of B."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    an = np.linalg.norm(A, axis=1)
    bn = np.linalg.norm(B, axis=1)
    if (an == 0.0).any() or (bn == 0.0).any():
        raise ValueError("zero-norm spectrum in similarity kernel")
    raw = (A @ B.T) / np.outer(an, bn)
    theta = np.clip(raw, -1.0 + theta_clip, 1.0 - theta_clip)
    return 1.0 - np.arccos(theta) / np.pi


def _pairwise_d2(spectra, pixel, kernel):
    """Squared feature-space distances among endmembers and to the pixel."""
    if kernel == "sad":
        c_ee = _sad_kernel(spectra, spectra)
        c_ep = _sad_kernel(spectra, pixel[None, :])[:, 0]
        d2_ee = 2.0 - 2.0 * c_ee
        np.fill_diagonal(d2_ee, 0.0)
        d2_ep = 2.0 - 2.0 * c_ep
    elif kernel == "l2":
        diff = spectra[:, None, :] - spectra[None, :, :]
        d2_ee = np.einsum("ijk,ijk->ij", diff, diff)
        dp = spectra - pixel[None, :]
        d2_ep = np.einsum("ij,ij->i", dp, dp)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return d2_ee, d2_ep


def _bary_solve(d2_ee, d2_ep, active):
    """Affine barycentric coordinates from mutual squared distances.

    Uses the last active vertex as reference: G_ij = <v_i - v_r, v_j - v_r>
    recovered from distances, then a linear solve.
    """
    m = len(active)
    if m == 1:
        return np.array([1.0])
    ref = active[-1]
    others = active[:-1]
    dr = d2_ee[others, ref]
    G = 0.5 * (dr[:, None] + dr[None, :] - d2_ee[np.ix_(others, others)])
    b = 0.5 * (dr + d2_ep[ref] - d2_ep[others])
    try:
        if np.linalg.cond(G) > 1e12:
            raise DegenerateSimplex("ill-conditioned simplex system")
        sol = np.linalg.solve(G, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSimplex(f"coincident endmembers: {exc}") from exc
    if not np.isfinite(sol).all():
        raise DegenerateSimplex("non-finite barycentric solve")
    return np.append(sol, 1.0 - sol.sum())


def simplex_project(d2_ee, d2_ep, k):
    """Project a point onto the simplex of k vertices given mutual distances.

    Solves the affine system; while any coordinate is negative, drops the
    vertex with the most negative coordinate (ties: lower index) and
    re-solves on the facet. Dropped vertices get zero abundance.
    """
    active = list(range(k))
    while True:
        coords = _bary_solve(d2_ee, d2_ep, active)
        worst = int(np.argmin(coords))
        if coords[worst] >= _NEG_TOL or len(active) == 1:
            break
        del active[worst]
    out = np.zeros(k)
    out[active] = np.maximum(coords, 0.0)
    out /= out.sum()
    return out


def spu_sad(pixel, endmembers: SpectraMatrix, eps=1e-8, kernel="sad"):
    """Simplex-projection abundances with the angle-similarity kernel.

    ``kernel='l2'`` switches to plain Euclidean feature space, which on
    in-simplex pixels coincides with the fully constrained l2 solution.
    """
    E = endmembers.rows if isinstance(endmembers, SpectraMatrix) else np.atleast_2d(endmembers)
    k = E.shape[0]
    if k < 2:
        raise ValueError("simplex projection needs at least two endmembers")
    pixel = np.asarray(pixel, dtype=np.float64)
    if kernel == "sad":
        # angularly coincident endmembers collapse the feature-space simplex
        en = np.linalg.norm(E, axis=1)
        raw = (E @ E.T) / np.outer(en, en)
        np.fill_diagonal(raw, 0.0)
        if raw.max() >= 1.0 - 1e-9:
            raise DegenerateSimplex("angularly coincident endmembers")
    d2_ee, d2_ep = _pairwise_d2(E, pixel, kernel)
    return simplex_project(d2_ee, d2_ep, k)


def fcls(pixel, endmembers):
    """Fully constrained least squares: min ||x - E^T a||^2, a >= 0, sum a = 1.

    Active-set iteration on the KKT system of the convex problem; returns
    the global optimum.
    """
    E = endmembers.rows if isinstance(endmembers, SpectraMatrix) else np.atleast_2d(endmembers)
    k, d = E.shape
    x = np.asarray(pixel, dtype=np.float64)
    if k == 1:
        return np.array([1.0])
    if np.linalg.matrix_rank(E) < k:
        raise DegenerateSimplex("endmembers are linearly dependent")
    gram = E @ E.T
    ex = E @ x

    free = np.ones(k, dtype=bool)
    for _ in range(4 * k + 8):
        idx = np.flatnonzero(free)
        m = idx.size
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = 2.0 * gram[np.ix_(idx, idx)]
        kkt[:m, m] = 1.0
        kkt[m, :m] = 1.0
        rhs = np.append(2.0 * ex[idx], 1.0)
        sol = np.linalg.solve(kkt, rhs)
        a_free, lam = sol[:m], sol[m]
        if a_free.min() < -1e-12:
            free[idx[int(np.argmin(a_free))]] = False
            continue
        a = np.zeros(k)
        a[idx] = np.maximum(a_free, 0.0)
        # KKT multipliers of the clamped variables must be nonnegative
        grad = 2.0 * (gram @ a - ex)
        mu = grad - lam
        clamped = np.flatnonzero(~free)
        if clamped.size and mu[clamped].min() < -1e-9:
            free[clamped[int(np.argmin(mu[clamped]))]] = True
            continue
        a /= a.sum()
        return a
    raise RuntimeError("fcls active-set iteration did not converge")


def hidden_abundances(model, cube: HyperCube, hyper: HyperParams | None = None):
    """Encoder activations as abundances (inference-mode forward per pixel).

    All-zero activation vectors fall back to uniform 1/K; the occurrence
    count is logged.
    """
    hyper = hyper or HyperParams(top_n=min(2, model.k))
    trace = forward_batch(model, cube.data, hyper, mode="infer")
    y = trace.y.copy()
    dead = trace.z_star_sum <= 0.0
    n_dead = int(dead.sum())
    if n_dead:
        log.info("hidden_abundances: %d all-zero activation vectors set to uniform", n_dead)
        y[dead] = 1.0 / model.k
    # renormalize away the eps slack from the l1 layer
    y /= y.sum(axis=1, keepdims=True)
    return AbundanceMap(cube.height, cube.width, y)


def _worker_count():
    try:
        return max(1, int(os.environ.get("ENDNET_THREADS", "1")))
    except ValueError:
        return 1


def spu_abundances(endmembers, cube: HyperCube, kernel="sad"):
    """Per-pixel simplex projection over the whole cube (K x D endmembers)."""
    E = endmembers.rows if isinstance(endmembers, SpectraMatrix) else np.atleast_2d(endmembers)
    k = E.shape[0]
    n = cube.n_pixels
    out = np.empty((n, k))

    def run(span):
        for p in span:
            out[p] = spu_sad(cube.data[p], E, kernel=kernel)

    workers = _worker_count()
    if workers == 1 or n < 256:
        run(range(n))
    else:
        from concurrent.futures import ThreadPoolExecutor
        spans = np.array_split(np.arange(n), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, spans))
    return AbundanceMap(cube.height, cube.width, out)


def estimate_abundances(model, cube: HyperCube, method="spu"):
    """Dispatch abundance estimation; 'spu' (default) uses the decoder columns."""
    if method == "spu":
        return spu_abundances(model.endmembers(), cube)
    if method == "hidden":
        return hidden_abundances(model, cube)
    raise ValueError(f"unknown abundance method {method!r}")
