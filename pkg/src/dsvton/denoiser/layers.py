"""Differentiable layer primitives (NHWC, float64) with explicit backward passes.

Each forward returns (output, cache); the matching backward consumes the
upstream gradient plus the cache and returns input/parameter gradients.
Convolutions use the shifted-slice GEMM strategy: one matmul per kernel
offset, which beats an im2col materialization at these sizes.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------- convolution

def conv2d_forward(x, w, b, stride=1):
    """3x3 (or any odd kernel) same-padded conv. x: (B,H,W,Cin), w: (kh,kw,Cin,Cout)."""
    B, H, W, Cin = x.shape
    kh, kw, _, Cout = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (W + 2 * pw - kw) // stride + 1
    y = np.empty((B, Ho, Wo, Cout))
    y[:] = b
    flat = y.reshape(-1, Cout)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, i:i + stride * (Ho - 1) + 1:stride,
                    j:j + stride * (Wo - 1) + 1:stride, :]
            sl = np.ascontiguousarray(sl).reshape(-1, Cin)
            flat += sl @ w[i, j]
    cache = (xp, w, stride, x.shape, (Ho, Wo))
    return y, cache


def conv2d_backward(dy, cache):
    xp, w, stride, xshape, (Ho, Wo) = cache
    B, H, W, Cin = xshape
    kh, kw, _, Cout = w.shape
    ph, pw = kh // 2, kw // 2
    dflat = dy.reshape(-1, Cout)
    db = dflat.sum(axis=0)
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + stride * (Ho - 1) + 1, stride)
            cols = slice(j, j + stride * (Wo - 1) + 1, stride)
            sl = np.ascontiguousarray(xp[:, rows, cols, :]).reshape(-1, Cin)
            dw[i, j] = sl.T @ dflat
            dxp[:, rows, cols, :] += (dflat @ w[i, j].T).reshape(B, Ho, Wo, Cin)
    dx = dxp[:, ph:ph + H, pw:pw + W, :]
    return dx, dw, db


# ----------------------------------------------------------------- activation

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu_forward(x):
    s = _sigmoid(x)
    return x * s, (x, s)


def silu_backward(dy, cache):
    x, s = cache
    return dy * s * (1.0 + x * (1.0 - s))


# ------------------------------------------------------------------ resampling

def nearest_up2_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2), x.shape


def nearest_up2_backward(dy, xshape):
    B, H, W, C = xshape
    return dy.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4))


# ------------------------------------------------------------- time embedding

def sinusoidal_embedding(t, dim):
    """Standard sin/cos positional features of integer timesteps. t: (B,)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    scale = np.log(10000.0) / max(half - 1, 1)
    freqs = np.exp(-scale * np.arange(half))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def time_bias_forward(x, emb, w, b):
    """Add a learned per-channel bias emb@w + b, broadcast over space."""
    bias = emb @ w + b
    return x + bias[:, None, None, :], emb


def time_bias_backward(dy, emb):
    dspatial = dy.sum(axis=(1, 2))
    dw = emb.T @ dspatial
    db = dspatial.sum(axis=0)
    return dy, dw, db


# -------------------------------------------------------------- self-attention

def attention_forward(x, ref, wq, wk, wv, wo):
    """Single-head self-attention with reference tokens appended to keys/values.

    x: (B,N,C) query tokens from the denoising path; ref: (B,M,C) or None.
    Output keeps the residual connection y = x + attn(x)Wo.
    """
    B, N, C = x.shape
    kv = x if ref is None else np.concatenate([x, ref], axis=1)
    q = x @ wq
    k = kv @ wk
    v = kv @ wv
    scale = 1.0 / np.sqrt(C)
    s = (q @ k.transpose(0, 2, 1)) * scale
    s -= s.max(axis=2, keepdims=True)
    e = np.exp(s)
    a = e / e.sum(axis=2, keepdims=True)
    o = a @ v
    p = o @ wo
    cache = (x, kv, q, k, v, a, o, wq, wk, wv, wo, scale, N)
    return x + p, cache


def attention_backward(dy, cache):
    x, kv, q, k, v, a, o, wq, wk, wv, wo, scale, N = cache
    B, _, C = x.shape

    def mm_acc(lhs, rhs):
        # sum over batch of lhs_b^T @ rhs_b
        L = lhs.reshape(-1, lhs.shape[-1])
        R = rhs.reshape(-1, rhs.shape[-1])
        return L.T @ R

    dwo = mm_acc(o, dy)
    do = dy @ wo.T
    da = do @ v.transpose(0, 2, 1)
    dv = a.transpose(0, 2, 1) @ do
    ds = a * (da - (da * a).sum(axis=2, keepdims=True))
    dq = (ds @ k) * scale
    dk = (ds.transpose(0, 2, 1) @ q) * scale
    dwq = mm_acc(x, dq)
    dwk = mm_acc(kv, dk)
    dwv = mm_acc(kv, dv)
    dkv = dk @ wk.T + dv @ wv.T
    dx = dy + dq @ wq.T + dkv[:, :N, :]
    dref = dkv[:, N:, :] if dkv.shape[1] > N else None
    return dx, dref, dwq, dwk, dwv, dwo
