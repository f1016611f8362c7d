"""Geometric pure-pixel endmember initializers (VCA and Distance-MaxD).

Both selectors return actual data pixels, used to seed the autoencoder's
encoder/decoder filters before optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datatypes import HyperCube, SpectraMatrix
from .errors import DegenerateData

_RANK_TOL = 1e-12


@dataclass(frozen=True)
class InitResult:
    endmembers: SpectraMatrix
    pixel_indices: list

    @property
    def k(self):
        return self.endmembers.count


def vca(cube: HyperCube, k: int, seed: int = 0) -> InitResult:
    """Vertex-style endmember picking by repeated orthogonal projection.

    Data is projected onto its k-dim principal subspace; each round projects
    onto a random direction orthogonal to the span of the endmembers found
    so far and keeps the pixel with the largest absolute projection.

    The subspace is computed without mean removal: a simplex with k vertices
    spans a k-dim linear subspace but only k-1 dims once centered, so the
    centered variant would leave the final direction to numerical noise.
    """
    X = cube.data
    n, d = X.shape
    if k < 1 or k > min(d, n):
        raise ValueError(f"k={k} out of range for {n} pixels x {d} bands")

    Xm = X - X.mean(axis=0)
    if np.linalg.norm(Xm) < _RANK_TOL * max(1.0, np.linalg.norm(X)):
        raise DegenerateData("all pixels identical; cannot run vca")

    # k-dim principal subspace coordinates (n x k)
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    Y = X @ Vt[:k].T

    rng = np.random.default_rng(seed)
    A = np.zeros((k, k))
    indices = []
    for i in range(k):
        while True:
            w = rng.standard_normal(k)
            if i > 0:
                P = A[:, :i]
                w = w - P @ np.linalg.pinv(P) @ w
            nw = np.linalg.norm(w)
            if nw > 1e-12:
                break
        f = w / nw
        proj = np.abs(Y @ f)
        proj[indices] = -1.0  # never re-pick a chosen pixel
        idx = int(np.argmax(proj))
        A[:, i] = Y[idx]
        indices.append(idx)

    return InitResult(SpectraMatrix(X[indices].copy()), indices)


def dmaxd(cube: HyperCube, k: int) -> InitResult:
    """Greedy maximum-distance simplex selection (deterministic).

    Starts from the two pixels at maximal Euclidean distance, then keeps
    adding the pixel farthest from the affine hull of the current picks
    (Gram-Schmidt residual norm). Ties break toward the lowest pixel index.
    """
    X = cube.data
    n, d = X.shape
    # a k-vertex simplex is affinely (k-1)-dimensional, so d >= k-1 suffices
    if k < 1 or k > min(d + 1, n):
        raise ValueError(f"k={k} out of range for {n} pixels x {d} bands")

    # max pairwise distance, chunked to bound memory; first (i, j) wins ties
    sq = np.einsum("ij,ij->i", X, X)
    best = -1.0
    best_pair = (0, 0)
    chunk = 512
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (X[start:stop] @ X.T)
        # restrict to j > i to keep lexicographic tie order
        block = np.where(np.arange(n)[None, :] > np.arange(start, stop)[:, None], d2, -np.inf)
        flat = int(np.argmax(block))
        val = block.flat[flat]
        if val > best:
            best = float(val)
            best_pair = (start + flat // n, flat % n)
    if best <= _RANK_TOL:
        raise DegenerateData("all pixels identical; cannot run dmaxd")

    i0, j0 = best_pair
    indices = [i0, j0]
    v0 = X[i0]
    R = X - v0
    q = X[j0] - v0
    basis = [q / np.linalg.norm(q)]
    R = R - np.outer(R @ basis[0], basis[0])

    while len(indices) < k:
        dist = np.linalg.norm(R, axis=1)
        dist[indices] = -1.0
        idx = int(np.argmax(dist))
        if dist[idx] <= _RANK_TOL:
            raise DegenerateData("pixel cloud is rank-deficient for requested k")
        indices.append(idx)
        v = R[idx].copy()
        v /= np.linalg.norm(v)
        basis.append(v)
        R = R - np.outer(R @ v, v)

    return InitResult(SpectraMatrix(X[indices[:k]].copy()), indices[:k])
