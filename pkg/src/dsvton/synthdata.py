"""Procedural try-on corpus: bodies, garments, and composed ground truth.

Every sample pairs one body with two garments: the target shows the body
wearing garment A, the person image shows the same body wearing garment B.
The two renders differ only inside the torso region, which is what lets the
paired evaluation measure garment change against body/background preservation.

Masks produced here are evaluation-only artifacts; no training or inference
path consumes them (the mask-free contract, enforced by a static test).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .pipeline import derive_seed, downsample

# shared canvas background; metrics binarize foreground against this color
BACKGROUND = np.array([0.82, 0.85, 0.88])

# flat-lay garments always carry their texture in this fixed fractional
# window so the torso warp can locate it from the image alone
TEXTURE_WINDOW = (0.30, 0.86, 0.32, 0.68)  # y0, y1, x0, x1

COMPLEXITIES = ("plain", "striped", "patterned")

MIN_DIM = 16


@dataclass(frozen=True)
class Body:
    image: np.ndarray
    body_mask: np.ndarray
    torso_mask: np.ndarray


@dataclass
class TryonSample:
    """One training/eval tuple; lr_result present only for HR-stage training."""

    garment: np.ndarray
    person_other: np.ndarray
    target: np.ndarray
    body_mask: np.ndarray
    torso_mask: np.ndarray
    lr_result: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _grids(height, width):
    yy = (np.arange(height) + 0.5)[:, None] / height
    xx = (np.arange(width) + 0.5)[None, :] / width
    return yy, xx


def _ellipse(yy, xx, cy, cx, ry, rx, angle=0.0):
    dy, dx = yy - cy, xx - cx
    if angle:
        ca, sa = np.cos(angle), np.sin(angle)
        dy, dx = ca * dy + sa * dx, -sa * dy + ca * dx
    return (dy / ry) ** 2 + (dx / rx) ** 2 <= 1.0


def _check_dims(height, width):
    if height < MIN_DIM or width < MIN_DIM:
        raise ValidationError(f"dims must be >= {MIN_DIM}, got {height}x{width}")


def gen_body(seed: int, height: int, width: int) -> Body:
    """Procedural body: head, torso, arms, legs as ellipses with pose jitter."""
    _check_dims(height, width)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB0D]))
    yy, xx = _grids(height, width)

    cx = 0.5 + rng.uniform(-0.02, 0.02)
    torso_cy = 0.40 + rng.uniform(-0.02, 0.02)
    torso_ry = rng.uniform(0.17, 0.21)
    torso_rx = rng.uniform(0.13, 0.17)
    torso = _ellipse(yy, xx, torso_cy, cx, torso_ry, torso_rx)

    head_r = rng.uniform(0.07, 0.085)
    head = _ellipse(yy, xx, torso_cy - torso_ry - head_r + 0.02, cx, head_r, head_r)

    arms = np.zeros_like(torso)
    for side in (-1, 1):
        ang = side * rng.uniform(0.15, 0.55)
        alen = rng.uniform(0.15, 0.19)
        ax = cx + side * (torso_rx + 0.01)
        ay = torso_cy - torso_ry * 0.55
        arms |= _ellipse(yy, xx, ay + alen * 0.8, ax + side * alen * 0.35,
                         alen, rng.uniform(0.032, 0.042), angle=ang)

    legs = np.zeros_like(torso)
    leg_len = rng.uniform(0.13, 0.17)
    for side in (-1, 1):
        lx = cx + side * rng.uniform(0.05, 0.08)
        ly = torso_cy + torso_ry + leg_len - 0.02
        legs |= _ellipse(yy, xx, ly, lx, leg_len, rng.uniform(0.04, 0.055))

    skin = np.array([
        rng.uniform(0.25, 0.6),
        rng.uniform(-0.05, 0.25),
        rng.uniform(-0.35, -0.05),
    ])
    pants = rng.uniform(-0.7, -0.25, size=3)

    img = np.empty((height, width, 3))
    img[:] = BACKGROUND
    img[legs] = pants
    img[arms] = skin
    img[torso] = np.array([-0.1, -0.1, -0.1])
    img[head] = skin
    body_mask = torso | head | arms | legs
    return Body(image=img, body_mask=body_mask, torso_mask=torso)


def gen_garment(seed: int, height: int, width: int, complexity: str) -> np.ndarray:
    """Flat-laid garment with a procedural texture in the fixed window.

    Within-garment variance is ordered by construction:
    plain (zero) < striped (square wave, moderate contrast) < patterned
    (two-axis sinusoid, high contrast). Patterned wavelengths stay >= ~5 px
    after the torso warp so a 2x downsample preserves them and a 4x one
    degrades them.
    """
    _check_dims(height, width)
    if complexity not in COMPLEXITIES:
        raise ValidationError(f"complexity must be one of {COMPLEXITIES}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6A2]))
    yy, xx = _grids(height, width)
    y0, y1, x0, x1 = TEXTURE_WINDOW
    window = (yy >= y0) & (yy <= y1) & (xx >= x0) & (xx <= x1)
    sleeve_drop = rng.uniform(0.10, 0.16)
    sleeves = (yy >= y0) & (yy <= y0 + sleeve_drop) & (xx >= x0 - 0.14) & (xx <= x1 + 0.14)
    shape = window | sleeves

    ypix = yy * height
    xpix = xx * width
    if complexity == "plain":
        c1 = rng.uniform(-0.7, 0.7, size=3)
        tex = np.broadcast_to(c1, (height, width, 3)).copy()
    elif complexity == "striped":
        c1 = rng.uniform(-0.6, 0.6, size=3)
        delta = rng.uniform(0.25, 0.4) * np.where(c1 > 0, -1.0, 1.0)
        c2 = c1 + delta
        period = rng.uniform(10, 16) * (height / 64.0)
        axis = ypix if rng.random() < 0.5 else xpix
        phase = rng.uniform(0, period)
        on = np.broadcast_to(((axis + phase) % period) < (period / 2),
                             (height, width))
        tex = np.where(on[..., None], c1, c2)
    else:
        mid = rng.uniform(-0.2, 0.2, size=3)
        half = rng.uniform(0.6, 0.78)
        c1, c2 = mid - half, mid + half
        period = rng.uniform(9, 12) * (height / 64.0)
        phy, phx = rng.uniform(0, 2 * np.pi, size=2)
        m = 0.5 * (1 + np.sin(2 * np.pi * ypix / period + phy)
                   * np.sin(2 * np.pi * xpix / period + phx))
        tex = c1 + (c2 - c1) * m[..., None]

    img = np.empty((height, width, 3))
    img[:] = BACKGROUND
    img[shape] = tex[shape]
    return img


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at fractional pixel coords; lerp form keeps constants exact."""
    H, W, _ = img.shape
    ys = np.clip(ys, 0.0, H - 1.0)
    xs = np.clip(xs, 0.0, W - 1.0)
    yl = np.floor(ys).astype(int)
    xl = np.floor(xs).astype(int)
    yh = np.minimum(yl + 1, H - 1)
    xh = np.minimum(xl + 1, W - 1)
    fy = (ys - yl)[:, None]
    fx = (xs - xl)[:, None]
    top = img[yl, xl] + fx * (img[yl, xh] - img[yl, xl])
    bot = img[yh, xl] + fx * (img[yh, xh] - img[yh, xl])
    return top + fy * (bot - top)


def render_wearing(body_img: np.ndarray, torso_mask: np.ndarray,
                   garment: np.ndarray) -> np.ndarray:
    """Compose the try-on ground truth: warp the garment texture over the torso.

    The warp maps the torso-mask bounding box onto the garment's fixed texture
    window with a gentle analytic horizontal sway; everything outside the
    torso keeps the body appearance untouched.
    """
    if body_img.shape[:2] != torso_mask.shape or body_img.shape != garment.shape:
        raise ValidationError("body, mask, and garment resolutions must match")
    out = body_img.copy()
    rows, cols = np.nonzero(torso_mask)
    if rows.size == 0:
        return out
    r0, r1 = rows.min(), rows.max()
    c0, c1 = cols.min(), cols.max()
    u = (rows - r0) / max(r1 - r0, 1)
    v = (cols - c0) / max(c1 - c0, 1)
    v = np.clip(v + 0.05 * np.sin(2 * np.pi * u), 0.0, 1.0)

    H, W, _ = garment.shape
    y0, y1, x0, x1 = TEXTURE_WINDOW
    gy = (y0 + u * (y1 - y0)) * H - 0.5
    gx = (x0 + v * (x1 - x0)) * W - 0.5
    gy = np.clip(gy, y0 * H, y1 * H - 1.0)
    gx = np.clip(gx, x0 * W, x1 * W - 1.0)
    out[rows, cols] = _bilinear_sample(garment, gy, gx)
    return out


def make_sample(corpus_seed: int, index: int, height: int, width: int,
                perturb_background: bool = False) -> TryonSample:
    """Deterministic base tuple for one corpus index (no lr guide)."""
    body_seed = derive_seed(corpus_seed, index, 0)
    g1_seed = derive_seed(corpus_seed, index, 1)
    g2_seed = derive_seed(corpus_seed, index, 2)
    complexity = COMPLEXITIES[index % len(COMPLEXITIES)]
    other_rng = np.random.default_rng(np.random.SeedSequence([corpus_seed, index, 3]))
    other_complexity = COMPLEXITIES[other_rng.integers(len(COMPLEXITIES))]

    body = gen_body(body_seed, height, width)
    g1 = gen_garment(g1_seed, height, width, complexity)
    g2 = gen_garment(g2_seed, height, width, other_complexity)
    target = render_wearing(body.image, body.torso_mask, g1)
    person_other = render_wearing(body.image, body.torso_mask, g2)
    if perturb_background:
        # opt-in stand-in for synthesized-person artifact leakage: tint the
        # person image outside the torso so the two renders no longer agree
        tint = other_rng.uniform(-0.05, 0.05, size=3)
        person_other = person_other + np.where(body.torso_mask[..., None], 0.0, tint)
    return TryonSample(
        garment=g1,
        person_other=person_other,
        target=target,
        body_mask=body.body_mask,
        torso_mask=body.torso_mask,
        meta={
            "body_seed": body_seed,
            "garment_seed": g1_seed,
            "other_seed": g2_seed,
            "complexity": complexity,
            "other_complexity": other_complexity,
            "guide_seed": derive_seed(corpus_seed, index, 4),
        },
    )


def make_dataset(n: int, stage: str, seed: int, dims: tuple[int, int],
                 lr_sampler=None, sigma: int = 2, guide_mode: str = "model",
                 perturb_background: bool = False,
                 guide_batch: int = 32) -> list[TryonSample]:
    """Build a corpus of n samples; HR stage attaches low-resolution guides.

    lr_sampler(person_batch, garment_batch, seeds) -> low-res result batch;
    required for the hr stage in "model" guide mode. Guides are stored at
    dims/sigma (pre-upsampling).
    """
    if n < 0:
        raise ValidationError("n must be >= 0")
    if stage not in ("lr", "hr"):
        raise ValidationError(f"stage must be lr or hr, got {stage!r}")
    if guide_mode not in ("model", "ground_truth"):
        raise ValidationError(f"unknown guide mode {guide_mode!r}")
    if stage == "hr" and guide_mode == "model" and lr_sampler is None:
        raise ValidationError("hr stage in model guide mode requires lr_sampler")
    height, width = dims
    samples = [make_sample(seed, i, height, width, perturb_background)
               for i in range(n)]
    if stage == "hr":
        if guide_mode == "ground_truth":
            for s in samples:
                s.lr_result = downsample(s.target, sigma)
        else:
            for lo in range(0, n, guide_batch):
                chunk = samples[lo:lo + guide_batch]
                persons = np.stack([downsample(s.person_other, sigma) for s in chunk])
                garments = np.stack([downsample(s.garment, sigma) for s in chunk])
                seeds = [s.meta["guide_seed"] for s in chunk]
                guides = lr_sampler(persons, garments, seeds)
                for s, g in zip(chunk, guides):
                    s.lr_result = g
    return samples
