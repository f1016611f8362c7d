"""Central finite-difference verification of every analytic gradient.

Random instances are resampled until they sit safely away from the ReLU,
top-n and cosine-clamp kinks, where the loss is not differentiable.
"""

from __future__ import annotations

import numpy as np

from . import net

FD_STEP = 1e-6
KINK_MARGIN = 1e-4
DEFAULT_TOL = 1e-4


def rel_error(a, b, floor=1e-12):
    """Norm-relative error with a scale floor for near-zero true gradients."""
    na = np.linalg.norm(np.asarray(a).ravel())
    nb = np.linalg.norm(np.asarray(b).ravel())
    return np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel()) / max(na, nb, floor)


def _central_diff(f, arr, step=FD_STEP):
    arr = np.asarray(arr, dtype=np.float64)
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        h = step * max(1.0, abs(orig))
        arr[idx] = orig + h
        fp = f()
        arr[idx] = orig - h
        fm = f()
        arr[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def check_sad(rng, d=None):
    """FD check of the similarity gradient w.r.t. the filter row."""
    d = d or int(rng.integers(5, 21))
    while True:
        x = rng.uniform(0.1, 1.0, d)
        w = rng.uniform(0.1, 1.0, d) + rng.normal(0.0, 0.3, d)
        if np.linalg.norm(w) < 1e-3:
            continue
        theta, _, _ = net.sad_similarity(x, w)
        if abs(theta) < 1.0 - 1e-3:
            break
    analytic = net.sad_similarity_grad(x, w)
    fd = _central_diff(lambda: net.sad_similarity(x, w)[2], w)
    return rel_error(analytic, fd)


def check_batchnorm(rng, n=None, k=None):
    """FD check of train-mode batch-norm backward (inputs and shift)."""
    n = n or int(rng.integers(2, 9))
    k = k or int(rng.integers(2, 7))
    # near-zero column variance makes 1/sqrt(var+eps) huge and wrecks the
    # finite-difference conditioning; keep a healthy spread
    while True:
        H = rng.normal(0.0, 1.0, (n, k))
        if H.var(axis=0).min() > 0.05:
            break
    rho = rng.normal(0.0, 0.5, k)
    G = rng.normal(0.0, 1.0, (n, k))

    def value():
        out, _, _, _ = net.batchnorm_forward(H, rho, mode="train")
        return float(np.sum(G * out))

    _, _, var, centered = net.batchnorm_forward(H, rho, mode="train")
    dH, drho = net.batchnorm_backward(G, var, centered)
    # n=2 batches normalize to +-1 exactly, leaving an eps-scale input
    # gradient; compare against the layer's characteristic scale then
    floor = 1e-5 * np.linalg.norm(G)
    err_h = rel_error(dH, _central_diff(value, H), floor)
    err_rho = rel_error(drho, _central_diff(value, rho), floor)
    return max(err_h, err_rho)


def check_l1norm(rng, k=None):
    """FD check of the l1-normalization backward on the active entries."""
    k = k or int(rng.integers(2, 7))
    z_star = rng.uniform(0.5, 3.0, k)
    z_star[rng.random(k) < 0.3] = 0.0
    # a one-hot row has a ~eps-scale gradient; need two active entries for
    # a meaningful relative comparison
    while (z_star > 0.0).sum() < 2:
        z_star[int(rng.integers(0, k))] = rng.uniform(0.5, 3.0)
    G = rng.normal(0.0, 1.0, k)
    eps = 1e-8

    def value():
        y = z_star / (z_star.sum() + eps)
        return float(np.dot(G, y))

    y = z_star / (z_star.sum() + eps)
    analytic = net.l1norm_backward(G[None, :], z_star[None, :], y[None, :], eps)[0]
    fd = _central_diff(value, z_star)
    fd[z_star == 0.0] = 0.0  # spec'd convention at the kink
    return rel_error(analytic, fd)


def _random_instance(rng, d, k, n, hyper):
    """Sample a model + batch whose forward sits away from every kink."""
    for _ in range(5000):
        X = rng.uniform(0.1, 1.0, (n, d))
        model = net.EndNetModel(
            w_enc=rng.uniform(0.1, 1.0, (k, d)),
            rho=rng.normal(0.2, 0.5, k),
            w_dec=rng.uniform(0.05, 1.0, (d, k)))
        trace = net.forward_batch(model, X, hyper, mode="train")
        if np.abs(trace.bn_out).min() < KINK_MARGIN:
            continue
        if np.abs(trace.theta).max() > 1.0 - 1e-3:
            continue
        if hyper.top_n < k:
            zs = -np.sort(-trace.z, axis=1)
            if (zs[:, hyper.top_n - 1] - zs[:, hyper.top_n]).min() < KINK_MARGIN:
                continue
        if trace.z_star_sum.min() < 1e-3:
            continue
        if trace.c_recon.min() < 0.02 or trace.c_recon.max() > 1.0 - 1e-3:
            continue
        return model, X
    raise RuntimeError("could not sample a kink-free gradcheck instance")


def check_full_loss(rng, d=None, k=None, n=None):
    """FD check of the complete loss gradient for every trainable array."""
    d = d or int(rng.integers(5, 21))
    k = k or int(rng.integers(2, 7))
    n = n or int(rng.integers(2, 9))
    hyper = net.HyperParams(top_n=min(2, k))
    model, X = _random_instance(rng, d, k, n, hyper)

    def value():
        trace = net.forward_batch(model, X, hyper, mode="train")
        return net.loss_value(trace, model, hyper, X)

    trace = net.forward_batch(model, X, hyper, mode="train")
    _, grads = net.loss(trace, model, hyper, X)
    worst = 0.0
    for name, arr in model.params().items():
        worst = max(worst, rel_error(grads[name], _central_diff(value, arr)))
    return worst


LAYERS = {
    "sad": check_sad,
    "batchnorm": check_batchnorm,
    "l1norm": check_l1norm,
    "full_loss": check_full_loss,
}


def run_all(trials=50, seed=0, tol=DEFAULT_TOL):
    """Run every layer check ``trials`` times; returns {layer: worst error}."""
    results = {}
    for name, fn in LAYERS.items():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            worst = max(worst, fn(rng))
        results[name] = worst
    return results, all(v < tol for v in results.values())
