"""Encoder/decoder forward pass, composite loss, and analytic gradients.

The encoder scores each pixel against every filter row with a normalized
spectral-angle similarity, applies shift-only batch normalization, ReLU,
dropout, hard top-n selection and l1 normalization; the decoder is a plain
bias-free linear map whose columns converge to the endmembers.  All
gradients are derived by hand and checked against finite differences in
the gradcheck module.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import NumericalDivergence

CHECKPOINT_MAGIC = b"ENDN"
CHECKPOINT_VERSION = 1
BN_MOMENTUM = 0.9


@dataclass
class HyperParams:
    """Loss weights and layer knobs; defaults follow the reference setup."""

    lambda0: float = 0.01
    lambda1: float = 10.0
    lambda2: float = 0.1
    lambda3: float = 1e-5
    lambda4: float = 1e-5
    lambda5: float = 1e-3
    dropout_p: float = 1.0
    top_n: int = 2
    eps: float = 1e-8
    theta_clip: float = 1e-7

    def validate(self, k=None):
        for name in ("lambda0", "lambda1", "lambda2", "lambda3", "lambda4", "lambda5"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.dropout_p <= 1.0:
            raise ValueError("dropout_p must lie in (0, 1]")
        if self.top_n < 1 or (k is not None and self.top_n > k):
            raise ValueError("top_n must lie in [1, k]")


class EndNetModel:
    """Trainable parameters plus running normalization statistics.

    No bias vectors exist anywhere; encoder and decoder use disjoint
    parameter sets (w_enc is K x D, w_dec is D x K).
    """

    def __init__(self, w_enc, rho, w_dec, run_mean=None, run_var=None):
        self.w_enc = np.array(w_enc, dtype=np.float64)
        self.rho = np.array(rho, dtype=np.float64)
        self.w_dec = np.array(w_dec, dtype=np.float64)
        k, d = self.w_enc.shape
        if self.w_dec.shape != (d, k) or self.rho.shape != (k,):
            raise ValueError("inconsistent parameter shapes")
        self.run_mean = np.zeros(k) if run_mean is None else np.array(run_mean, dtype=np.float64)
        self.run_var = np.ones(k) if run_var is None else np.array(run_var, dtype=np.float64)
        self._stats_initialized = False

    @property
    def k(self):
        return self.w_enc.shape[0]

    @property
    def d(self):
        return self.w_enc.shape[1]

    @property
    def n_trainable(self):
        return self.w_enc.size + self.rho.size + self.w_dec.size

    @classmethod
    def from_endmembers(cls, endmembers):
        """Seed both filter sets from a K x D endmember estimate; rho = 0."""
        e = np.array(endmembers, dtype=np.float64)
        return cls(w_enc=e.copy(), rho=np.zeros(e.shape[0]), w_dec=e.T.copy())

    def endmembers(self):
        return self.w_dec.T.copy()

    def params(self):
        return {"w_enc": self.w_enc, "rho": self.rho, "w_dec": self.w_dec}

    def update_run_stats(self, mean, var):
        if not self._stats_initialized:
            self.run_mean = mean.copy()
            self.run_var = var.copy()
            self._stats_initialized = True
        else:
            self.run_mean = BN_MOMENTUM * self.run_mean + (1.0 - BN_MOMENTUM) * mean
            self.run_var = BN_MOMENTUM * self.run_var + (1.0 - BN_MOMENTUM) * var

    def save(self, path):
        header = CHECKPOINT_MAGIC + struct.pack("<III", CHECKPOINT_VERSION, self.d, self.k)
        payload = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (self.w_enc, self.rho, self.run_mean, self.run_var, self.w_dec))
        tmp = str(path) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(header + payload)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        version, d, k = struct.unpack("<III", blob[4:16])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        body = np.frombuffer(blob[16:], dtype="<f8")
        sizes = [k * d, k, k, k, d * k]
        if body.size != sum(sizes):
            raise ValueError("checkpoint payload size mismatch")
        parts = np.split(body, np.cumsum(sizes)[:-1])
        model = cls(w_enc=parts[0].reshape(k, d), rho=parts[1],
                    w_dec=parts[4].reshape(d, k),
                    run_mean=parts[2], run_var=parts[3])
        model._stats_initialized = True
        return model


@dataclass
class ForwardTrace:
    """Per-batch intermediates retained for the backward pass."""

    x_in: np.ndarray          # forward input (possibly corrupted), N x D
    x_norm: np.ndarray        # row norms of x_in
    w_norm: np.ndarray        # row norms of w_enc at forward time
    dot: np.ndarray           # raw inner products x . w_k, N x K
    theta: np.ndarray         # clamped cosines, N x K
    theta_clipped: np.ndarray  # bool mask where the clamp engaged
    h: np.ndarray             # similarity scores C in [0,1], N x K
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_centered: np.ndarray   # (h - mean) / std, N x K
    bn_out: np.ndarray
    relu_mask: np.ndarray
    dropout_mask: np.ndarray  # r in {0, 1/p}
    z: np.ndarray
    topn_mask: np.ndarray
    z_star: np.ndarray
    z_star_sum: np.ndarray    # l1 mass per sample
    y: np.ndarray
    x_hat: np.ndarray
    mode: str = "train"
    c_recon: np.ndarray | None = None  # C(x_in, x_hat) per sample


def sad_similarity(x, w, theta_clip=1e-7):
    """Normalized spectral-angle similarity between two spectra.

    Returns (theta, s, c): clamped cosine, angle in [0, pi], and the
    similarity score c = 1 - s/pi in [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    nx, nw = np.linalg.norm(x), np.linalg.norm(w)
    if nx == 0.0 or nw == 0.0:
        raise ValueError("sad_similarity requires nonzero-norm inputs")
    theta = np.clip(np.dot(x, w) / (nx * nw), -1.0 + theta_clip, 1.0 - theta_clip)
    s = np.arccos(theta)
    return theta, s, 1.0 - s / np.pi


def sad_similarity_grad(x, w, theta_clip=1e-7):
    """d c / d w for the similarity above; zero where the cosine clamp engaged."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    nx, nw = np.linalg.norm(x), np.linalg.norm(w)
    if nx == 0.0 or nw == 0.0:
        raise ValueError("sad_similarity_grad requires nonzero-norm inputs")
    raw = np.dot(x, w) / (nx * nw)
    if abs(raw) >= 1.0 - theta_clip:
        return np.zeros_like(w)
    theta = raw
    # (dC/dS)(dS/dtheta) = (-1/pi)(-1/sqrt(1-theta^2))
    coef = 1.0 / (np.pi * np.sqrt(1.0 - theta * theta))
    dtheta_dw = x / (nw * nx) - w * np.dot(w, x) / (nw ** 3 * nx)
    return coef * dtheta_dw


def batchnorm_forward(H, rho, eps=1e-8, mode="train", run_stats=None):
    """Shift-only batch normalization: (h - mu)/sqrt(var + eps) + rho.

    Train mode computes per-column statistics over the mini-batch and
    returns them; infer mode uses the supplied running statistics.
    Returns (out, mean, var, centered).
    """
    H = np.asarray(H, dtype=np.float64)
    if mode == "train":
        if H.shape[0] < 2:
            raise ValueError("train-mode batch norm needs at least two samples")
        mean = H.mean(axis=0)
        var = H.var(axis=0)
    elif mode == "infer":
        mean, var = run_stats
    else:
        raise ValueError(f"unknown mode {mode!r}")
    centered = (H - mean) / np.sqrt(var + eps)
    return centered + rho, mean, var, centered


def batchnorm_backward(d_out, bn_var, bn_centered, eps=1e-8):
    """Full-batch backward through train-mode shift-only batch norm.

    Accounts for the dependence of the batch statistics on every sample.
    Returns (dH, drho).
    """
    d_out = np.asarray(d_out, dtype=np.float64)
    n = d_out.shape[0]
    inv_std = 1.0 / np.sqrt(bn_var + eps)
    g_sum = d_out.sum(axis=0)
    gc_sum = (d_out * bn_centered).sum(axis=0)
    dH = (inv_std / n) * (n * d_out - g_sum - bn_centered * gc_sum)
    return dH, g_sum


def relu_topn_l1(z_pre, dropout_mask, top_n, eps=1e-8):
    """ReLU gate, dropout, hard top-n selection, then l1 normalization.

    Ties in the top-n selection resolve toward the lower index.  Returns
    (z, z_star, y); an all-zero z yields the zero vector for y.
    """
    z_pre = np.atleast_2d(np.asarray(z_pre, dtype=np.float64))
    r = np.broadcast_to(np.asarray(dropout_mask, dtype=np.float64), z_pre.shape)
    z = r * np.maximum(z_pre, 0.0)
    mask = _topn_mask(z, top_n)
    z_star = z * mask
    s = z_star.sum(axis=1)
    y = z_star / (s + eps)[:, None]
    return z, z_star, y


def _topn_mask(z, top_n):
    """Boolean mask of the top_n largest entries per row; stable tie-break."""
    n, k = z.shape
    if top_n >= k:
        return np.ones_like(z, dtype=bool)
    order = np.argsort(-z, axis=1, kind="stable")
    mask = np.zeros_like(z, dtype=bool)
    rows = np.repeat(np.arange(n), top_n)
    mask[rows, order[:, :top_n].ravel()] = True
    return mask


def l1norm_backward(d_y, z_star, y, eps=1e-8):
    """Exact backward of y = z*/(||z*||_1 + eps).

    Entries where z*_k = 0 (including rows with no mass) get zero gradient.
    """
    d_y = np.atleast_2d(np.asarray(d_y, dtype=np.float64))
    z_star = np.atleast_2d(z_star)
    y = np.atleast_2d(y)
    s = z_star.sum(axis=1)
    active = z_star > 0.0
    inner = (d_y * y).sum(axis=1)
    dz = (d_y - inner[:, None]) / (s + eps)[:, None]
    dz[~active] = 0.0
    dz[s <= 0.0] = 0.0
    return dz


def _similarity_batch(X, W, theta_clip):
    """Similarity scores of every row of X against every row of W."""
    xn = np.linalg.norm(X, axis=1)
    wn = np.linalg.norm(W, axis=1)
    if (xn == 0.0).any():
        raise ValueError("zero-norm sample in batch")
    if (wn == 0.0).any():
        raise ValueError("zero-norm encoder filter")
    dot = X @ W.T
    raw = dot / np.outer(xn, wn)
    clipped = np.abs(raw) >= 1.0 - theta_clip
    theta = np.clip(raw, -1.0 + theta_clip, 1.0 - theta_clip)
    c = 1.0 - np.arccos(theta) / np.pi
    return xn, wn, dot, theta, clipped, c


def forward_batch(model, X, hyper, mode="train", rng=None, dropout_mask=None):
    """Run the full encoder/decoder on an N x D batch; returns a ForwardTrace.

    Dropout applies only in train mode (inverted convention); pass an
    explicit ``dropout_mask`` to pin it, e.g. for gradient checks.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.d:
        raise ValueError("band count mismatch between batch and model")
    hyper.validate(model.k)

    xn, wn, dot, theta, clipped, h = _similarity_batch(X, model.w_enc, hyper.theta_clip)

    if mode == "train":
        bn_out, mean, var, centered = batchnorm_forward(h, model.rho, hyper.eps, "train")
    else:
        bn_out, mean, var, centered = batchnorm_forward(
            h, model.rho, hyper.eps, "infer", (model.run_mean, model.run_var))

    relu_mask = bn_out > 0.0
    f = bn_out * relu_mask

    if dropout_mask is not None:
        r = np.broadcast_to(np.asarray(dropout_mask, dtype=np.float64), f.shape)
    elif mode == "train" and hyper.dropout_p < 1.0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        r = (rng.random(f.shape) < hyper.dropout_p) / hyper.dropout_p
    else:
        r = np.ones_like(f)

    z = r * f
    topn = _topn_mask(z, hyper.top_n)
    z_star = z * topn
    s = z_star.sum(axis=1)
    y = z_star / (s + hyper.eps)[:, None]
    x_hat = y @ model.w_dec.T

    trace = ForwardTrace(
        x_in=X, x_norm=xn, w_norm=wn, dot=dot, theta=theta, theta_clipped=clipped,
        h=h, bn_mean=mean, bn_var=var, bn_centered=centered, bn_out=bn_out,
        relu_mask=relu_mask, dropout_mask=r, z=z, topn_mask=topn, z_star=z_star,
        z_star_sum=s, y=y, x_hat=x_hat, mode=mode)
    trace.c_recon = _recon_similarity(X, x_hat, hyper.theta_clip)[0]
    return trace


def forward(model, x, hyper, mode="infer", rng=None):
    """Single-sample forward pass (train mode requires a batch; use infer)."""
    if mode == "train":
        raise ValueError("train-mode forward needs a batch of at least two samples")
    return forward_batch(model, np.atleast_2d(x), hyper, mode=mode, rng=rng)


def _recon_similarity(X, x_hat, theta_clip):
    """C(x, x_hat) per sample; defined as 0 where the reconstruction is zero."""
    xn = np.linalg.norm(X, axis=1)
    hn = np.linalg.norm(x_hat, axis=1)
    ok = hn > 0.0
    dot = np.einsum("ij,ij->i", X, x_hat)
    denom = np.where(ok, xn * hn, 1.0)
    raw = dot / denom
    clipped = np.abs(raw) >= 1.0 - theta_clip
    theta = np.clip(raw, -1.0 + theta_clip, 1.0 - theta_clip)
    c = np.where(ok, 1.0 - np.arccos(theta) / np.pi, 0.0)
    return c, theta, clipped, ok, xn, hn


def loss_value(trace, model, hyper, target):
    """Composite loss only (no gradients); target is the clean batch."""
    return _loss_impl(trace, model, hyper, target, want_grads=False)[0]


def loss(trace, model, hyper, target):
    """Composite loss and analytic gradients for w_enc, rho, w_dec.

    ``target`` is the uncorrupted batch the reconstruction terms compare
    against (the forward pass may have seen a corrupted version).
    """
    return _loss_impl(trace, model, hyper, target, want_grads=True)


def _loss_impl(trace, model, hyper, target, want_grads):
    X_clean = np.atleast_2d(np.asarray(target, dtype=np.float64))
    n = X_clean.shape[0]
    x_hat = trace.x_hat
    diff = x_hat - X_clean

    c, theta_r, clip_r, ok, xn_c, hn = _recon_similarity(X_clean, x_hat, hyper.theta_clip)

    recon = hyper.lambda0 * 0.5 * np.sum(diff * diff) / n
    kl = hyper.lambda1 * np.mean(-np.log(c + hyper.eps))
    sparsity = hyper.lambda2 * np.mean(trace.z.sum(axis=1))
    reg = (hyper.lambda3 * np.sum(model.w_enc ** 2)
           + hyper.lambda4 * np.sum(model.w_dec ** 2)
           + hyper.lambda5 * np.sum(model.rho ** 2))
    total = recon + kl + sparsity + reg
    if not np.isfinite(total):
        raise NumericalDivergence("loss is non-finite")
    if not want_grads:
        return total, None

    # d total / d x_hat: euclidean term + KL term through the angle chain
    d_xhat = hyper.lambda0 * diff / n
    dkl_dc = -hyper.lambda1 / (n * (c + hyper.eps))
    live = ok & ~clip_r
    coef = np.where(live, dkl_dc / (np.pi * np.sqrt(1.0 - theta_r ** 2)), 0.0)
    hn_safe = np.where(ok, hn, 1.0)
    dots = np.einsum("ij,ij->i", X_clean, x_hat)
    d_xhat = d_xhat + coef[:, None] * (
        X_clean / (hn_safe * xn_c)[:, None]
        - x_hat * (dots / (hn_safe ** 3 * xn_c))[:, None])

    d_wdec = d_xhat.T @ trace.y + 2.0 * hyper.lambda4 * model.w_dec
    d_y = d_xhat @ model.w_dec

    dz_star = l1norm_backward(d_y, trace.z_star, trace.y, hyper.eps)
    dz = dz_star * trace.topn_mask + (hyper.lambda2 / n) * (trace.z > 0.0)
    df = dz * trace.dropout_mask
    d_bn = df * trace.relu_mask

    if trace.mode == "train":
        d_h, g_sum = batchnorm_backward(d_bn, trace.bn_var, trace.bn_centered, hyper.eps)
    else:
        d_h = d_bn / np.sqrt(model.run_var + hyper.eps)
        g_sum = d_bn.sum(axis=0)
    d_rho = g_sum + 2.0 * hyper.lambda5 * model.rho

    # similarity layer: route d_h into the encoder filter rows
    live_enc = ~trace.theta_clipped
    sad_coef = np.where(live_enc, d_h / (np.pi * np.sqrt(1.0 - trace.theta ** 2)), 0.0)
    a = sad_coef / np.outer(trace.x_norm, trace.w_norm)
    b = sad_coef * trace.dot / np.outer(trace.x_norm, trace.w_norm ** 3)
    d_wenc = a.T @ trace.x_in - b.sum(axis=0)[:, None] * model.w_enc
    d_wenc = d_wenc + 2.0 * hyper.lambda3 * model.w_enc

    grads = {"w_enc": d_wenc, "rho": d_rho, "w_dec": d_wdec}
    for g in grads.values():
        if not np.isfinite(g).all():
            raise NumericalDivergence("gradient is non-finite")
    return total, grads
