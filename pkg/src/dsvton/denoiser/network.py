"""Reference-conditioned encoder-decoder denoiser with mirrored backprop.

The denoising path consumes the noisy latent concatenated with the person
image along channels; garment information enters only through the reference
encoder, whose feature map at the attention level is appended to the
self-attention keys/values (queries come from the denoising path alone).
The reference encoder is timestep-independent, so its features are computed
once per sample and reused across all denoising steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError, ValidationError
from .layers import (
    attention_backward,
    attention_forward,
    conv2d_backward,
    conv2d_forward,
    nearest_up2_backward,
    nearest_up2_forward,
    silu_backward,
    silu_forward,
    sinusoidal_embedding,
    time_bias_backward,
    time_bias_forward,
)
from .params import DenoiserParams


@dataclass(frozen=True)
class ReferenceFeatures:
    """Garment feature maps, one per attention site, keyed by level name."""

    sites: dict

    def tokens(self, site: str):
        f = self.sites[site]
        B, h, w, C = f.shape
        return f.reshape(B, h * w, C)


def _as_batch(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValidationError(f"expected (H,W,C) or (B,H,W,C), got shape {x.shape}")


class _Grads:
    """Flat gradient accumulator sharing the params layout."""

    def __init__(self, params: DenoiserParams):
        self.vec = np.zeros_like(params.vec)
        self._index = params._index

    def add(self, name, value):
        off, shape = self._index[name]
        self.vec[off:off + int(np.prod(shape))] += value.reshape(-1)


def _check_spatial(cfg, h, w, what):
    d = cfg.spatial_divisor
    if h % d or w % d:
        raise ValidationError(
            f"{what} spatial dims ({h}x{w}) must be divisible by {d} "
            f"for depth {cfg.depth}"
        )


# ------------------------------------------------------------- reference path

def _reference_forward(params: DenoiserParams, garment):
    cfg = params.cfg
    caches = []
    h, c = conv2d_forward(garment, params.get("ref_stem_w"), params.get("ref_stem_b"))
    caches.append(("conv", "ref_stem", c))
    h, c = silu_forward(h)
    caches.append(("silu", None, c))
    for l in range(cfg.attn_level + 1):
        h, c = conv2d_forward(h, params.get(f"ref_enc{l}_w"), params.get(f"ref_enc{l}_b"))
        caches.append(("conv", f"ref_enc{l}", c))
        h, c = silu_forward(h)
        caches.append(("silu", None, c))
        if l < cfg.attn_level:
            h, c = conv2d_forward(h, params.get(f"ref_down{l}_w"),
                                  params.get(f"ref_down{l}_b"), stride=2)
            caches.append(("conv", f"ref_down{l}", c))
            h, c = silu_forward(h)
            caches.append(("silu", None, c))
    return h, caches


def _reference_backward(dh, caches, grads: _Grads):
    for kind, name, cache in reversed(caches):
        if kind == "silu":
            dh = silu_backward(dh, cache)
        else:
            dh, dw, db = conv2d_backward(dh, cache)
            grads.add(f"{name}_w", dw)
            grads.add(f"{name}_b", db)
    return dh


def reference_encode(garment, params: DenoiserParams) -> ReferenceFeatures:
    """Encode a garment image once; reusable across all denoising steps."""
    cfg = params.cfg
    g, squeeze = _as_batch(np.asarray(garment, dtype=np.float64))
    if g.shape[-1] != cfg.person_channels:
        raise ValidationError(
            f"garment channels {g.shape[-1]} != configured {cfg.person_channels}"
        )
    _check_spatial(cfg, g.shape[1], g.shape[2], "garment")
    feats, _ = _reference_forward(params, g)
    if not np.all(np.isfinite(feats)):
        raise NumericalError("non-finite reference features")
    return ReferenceFeatures(sites={f"level{cfg.attn_level}": feats})


# ------------------------------------------------------------- denoising path

def _forward(params: DenoiserParams, latent, person, t, ref_tokens):
    """Full denoising forward. Returns (pred, tape) where tape drives backward."""
    cfg = params.cfg
    ch = cfg.channels
    emb = sinusoidal_embedding(t, cfg.time_embed_dim)
    x = np.concatenate([latent, person], axis=-1)

    tape = {"emb": emb, "enc": [], "dec": [], "attn": None}
    h, c = conv2d_forward(x, params.get("stem_w"), params.get("stem_b"))
    tape["stem_conv"] = c
    h, c = silu_forward(h)
    tape["stem_silu"] = c

    skips = []
    for l in range(cfg.depth):
        rec = {}
        h, rec["conv"] = conv2d_forward(h, params.get(f"enc{l}_w"),
                                        params.get(f"enc{l}_b"))
        h, rec["tb"] = time_bias_forward(h, emb, params.get(f"time_enc{l}_w"),
                                         params.get(f"time_enc{l}_b"))
        h, rec["silu"] = silu_forward(h)
        if l == cfg.attn_level:
            B, hh, ww, C = h.shape
            toks = h.reshape(B, hh * ww, C)
            y, c = attention_forward(toks, ref_tokens, params.get("attn_wq"),
                                     params.get("attn_wk"), params.get("attn_wv"),
                                     params.get("attn_wo"))
            h = y.reshape(B, hh, ww, C)
            tape["attn"] = (c, (B, hh, ww, C))
        skips.append(h)
        if l < cfg.depth - 1:
            h, rec["down_conv"] = conv2d_forward(h, params.get(f"down{l}_w"),
                                                 params.get(f"down{l}_b"), stride=2)
            h, rec["down_silu"] = silu_forward(h)
        tape["enc"].append(rec)

    h, tape["mid_conv"] = conv2d_forward(h, params.get("mid_w"), params.get("mid_b"))
    h, tape["mid_tb"] = time_bias_forward(h, emb, params.get("time_mid_w"),
                                          params.get("time_mid_b"))
    h, tape["mid_silu"] = silu_forward(h)

    for l in range(cfg.depth - 2, -1, -1):
        rec = {}
        h, rec["up2"] = nearest_up2_forward(h)
        h, rec["up_conv"] = conv2d_forward(h, params.get(f"up{l}_w"),
                                           params.get(f"up{l}_b"))
        h, rec["up_silu"] = silu_forward(h)
        h = np.concatenate([h, skips[l]], axis=-1)
        h, rec["conv"] = conv2d_forward(h, params.get(f"dec{l}_w"),
                                        params.get(f"dec{l}_b"))
        h, rec["tb"] = time_bias_forward(h, emb, params.get(f"time_dec{l}_w"),
                                         params.get(f"time_dec{l}_b"))
        h, rec["silu"] = silu_forward(h)
        rec["split"] = ch[l]
        tape["dec"].append((l, rec))

    pred, tape["head_conv"] = conv2d_forward(h, params.get("head_w"),
                                             params.get("head_b"))
    return pred, tape


def _backward(params: DenoiserParams, tape, dpred, grads: _Grads):
    """Mirror of _forward; returns gradient w.r.t. the reference tokens."""
    cfg = params.cfg

    dh, dw, db = conv2d_backward(dpred, tape["head_conv"])
    grads.add("head_w", dw)
    grads.add("head_b", db)

    dskips = {}
    for l, rec in reversed(tape["dec"]):
        dh = silu_backward(dh, rec["silu"])
        dh, dw, db = time_bias_backward(dh, rec["tb"])
        grads.add(f"time_dec{l}_w", dw)
        grads.add(f"time_dec{l}_b", db)
        dh, dw, db = conv2d_backward(dh, rec["conv"])
        grads.add(f"dec{l}_w", dw)
        grads.add(f"dec{l}_b", db)
        dup, dskips[l] = dh[..., :rec["split"]], dh[..., rec["split"]:]
        dup = silu_backward(dup, rec["up_silu"])
        dup, dw, db = conv2d_backward(dup, rec["up_conv"])
        grads.add(f"up{l}_w", dw)
        grads.add(f"up{l}_b", db)
        dh = nearest_up2_backward(dup, rec["up2"])

    dh = silu_backward(dh, tape["mid_silu"])
    dh, dw, db = time_bias_backward(dh, tape["mid_tb"])
    grads.add("time_mid_w", dw)
    grads.add("time_mid_b", db)
    dh, dw, db = conv2d_backward(dh, tape["mid_conv"])
    grads.add("mid_w", dw)
    grads.add("mid_b", db)

    dref_tokens = None
    for l in range(cfg.depth - 1, -1, -1):
        rec = tape["enc"][l]
        if l < cfg.depth - 1:
            dh = silu_backward(dh, rec["down_silu"])
            dh, dw, db = conv2d_backward(dh, rec["down_conv"])
            grads.add(f"down{l}_w", dw)
            grads.add(f"down{l}_b", db)
            dh = dh + dskips[l]
        if l == cfg.attn_level:
            c, shape = tape["attn"]
            B, hh, ww, C = shape
            dtoks, dref_tokens, dwq, dwk, dwv, dwo = attention_backward(
                dh.reshape(B, hh * ww, C), c
            )
            grads.add("attn_wq", dwq)
            grads.add("attn_wk", dwk)
            grads.add("attn_wv", dwv)
            grads.add("attn_wo", dwo)
            dh = dtoks.reshape(B, hh, ww, C)
        dh = silu_backward(dh, rec["silu"])
        dh, dw, db = time_bias_backward(dh, rec["tb"])
        grads.add(f"time_enc{l}_w", dw)
        grads.add(f"time_enc{l}_b", db)
        dh, dw, db = conv2d_backward(dh, rec["conv"])
        grads.add(f"enc{l}_w", dw)
        grads.add(f"enc{l}_b", db)

    dh = silu_backward(dh, tape["stem_silu"])
    _, dw, db = conv2d_backward(dh, tape["stem_conv"])
    grads.add("stem_w", dw)
    grads.add("stem_b", db)
    return dref_tokens


def predict_noise(x_in, person, t, ref: ReferenceFeatures,
                  params: DenoiserParams):
    """Deterministic noise-slot prediction at the latent's resolution."""
    cfg = params.cfg
    x, squeeze = _as_batch(np.asarray(x_in, dtype=np.float64))
    p, _ = _as_batch(np.asarray(person, dtype=np.float64))
    if x.shape[-1] != cfg.out_channels:
        raise ValidationError(
            f"latent channels {x.shape[-1]} != configured {cfg.out_channels}"
        )
    if p.shape[:3] != x.shape[:3] or p.shape[-1] != cfg.person_channels:
        raise ValidationError(
            f"person shape {p.shape} incompatible with latent {x.shape}"
        )
    _check_spatial(cfg, x.shape[1], x.shape[2], "latent")
    t_arr = np.atleast_1d(np.asarray(t))
    if t_arr.size == 1 and x.shape[0] > 1:
        t_arr = np.full(x.shape[0], int(t_arr[0]))
    if t_arr.shape[0] != x.shape[0]:
        raise ValidationError("t must be scalar or one per sample")

    site = f"level{cfg.attn_level}"
    ref_tokens = ref.tokens(site)
    expected_hw = (x.shape[1] // (1 << cfg.attn_level),
                   x.shape[2] // (1 << cfg.attn_level))
    got = ref.sites[site].shape[1:3]
    if got != expected_hw:
        raise ValidationError(
            f"reference features at {got} do not match attention site {expected_hw}"
        )
    if ref_tokens.shape[0] != x.shape[0]:
        raise ValidationError("reference batch size mismatch")

    pred, _ = _forward(params, x, p, t_arr, ref_tokens)
    if not np.all(np.isfinite(pred)):
        raise NumericalError("non-finite activations in denoiser output")
    return pred[0] if squeeze else pred


@dataclass
class TrainBatch:
    """One optimization batch; arrays share a leading batch axis.

    Garments ride along (rather than precomputed features) so the loss
    differentiates through the reference encoder too.
    """

    x_in: np.ndarray
    person: np.ndarray
    t: np.ndarray
    garment: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.x_in.ndim != 4 or self.x_in.shape[0] < 1:
            raise ValidationError("batch must be non-empty and 4-D")
        B = self.x_in.shape[0]
        for name in ("person", "garment", "target"):
            if getattr(self, name).shape[0] != B:
                raise ValidationError(f"{name} batch size mismatch")
        if self.target.shape != self.x_in.shape:
            raise ValidationError("target must match the latent shape")
        if np.asarray(self.t).shape != (B,):
            raise ValidationError("t must have shape (B,)")


def loss_and_grad(batch: TrainBatch, params: DenoiserParams):
    """Batch-mean MSE against the training target and its full gradient."""
    cfg = params.cfg
    ref_feats, ref_caches = _reference_forward(params, batch.garment)
    B, hh, ww, C = ref_feats.shape
    pred, tape = _forward(params, batch.x_in, batch.person, batch.t,
                          ref_feats.reshape(B, hh * ww, C))
    diff = pred - batch.target
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NumericalError("non-finite training loss")
    grads = _Grads(params)
    dpred = (2.0 / diff.size) * diff
    dref_tokens = _backward(params, tape, dpred, grads)
    if dref_tokens is not None:
        _reference_backward(dref_tokens.reshape(B, hh, ww, C), ref_caches, grads)
    return loss, grads.vec
