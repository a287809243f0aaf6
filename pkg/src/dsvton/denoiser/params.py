"""Network configuration, flat parameter vector, and its layout table."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class NetworkConfig:
    """Encoder-decoder denoiser shape.

    in_channels = latent channels + person-image channels (mask-free channel
    concatenation); out_channels = latent channels. The reference encoder
    mirrors the encoder ladder on the garment image up to attn_level.
    """

    base_channels: int = 32
    depth: int = 3
    attn_level: int = 2
    time_embed_dim: int = 64
    in_channels: int = 6
    out_channels: int = 3

    def __post_init__(self):
        if self.base_channels < 1 or self.depth < 1:
            raise ValidationError("base_channels and depth must be positive")
        if not (0 <= self.attn_level < self.depth):
            raise ValidationError(
                f"attn_level {self.attn_level} must lie in [0, depth={self.depth})"
            )
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValidationError("time_embed_dim must be an even integer >= 2")
        if self.out_channels < 1 or self.in_channels <= self.out_channels:
            raise ValidationError(
                "need in_channels > out_channels >= 1 (latent plus person planes)"
            )

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * (1 << l) for l in range(self.depth)]

    @property
    def person_channels(self) -> int:
        return self.in_channels - self.out_channels

    @property
    def spatial_divisor(self) -> int:
        return 1 << (self.depth - 1)


def _layout_entries(cfg: NetworkConfig):
    ch = cfg.channels
    dt = cfg.time_embed_dim
    ca = ch[cfg.attn_level]
    entries: list[tuple[str, tuple[int, ...]]] = []

    def add(name, shape):
        entries.append((name, shape))

    add("stem_w", (3, 3, cfg.in_channels, ch[0]))
    add("stem_b", (ch[0],))
    for l in range(cfg.depth):
        add(f"enc{l}_w", (3, 3, ch[l], ch[l]))
        add(f"enc{l}_b", (ch[l],))
        add(f"time_enc{l}_w", (dt, ch[l]))
        add(f"time_enc{l}_b", (ch[l],))
        if l < cfg.depth - 1:
            add(f"down{l}_w", (3, 3, ch[l], ch[l + 1]))
            add(f"down{l}_b", (ch[l + 1],))
    for tag in ("q", "k", "v", "o"):
        add(f"attn_w{tag}", (ca, ca))
    add("mid_w", (3, 3, ch[-1], ch[-1]))
    add("mid_b", (ch[-1],))
    add("time_mid_w", (dt, ch[-1]))
    add("time_mid_b", (ch[-1],))
    for l in range(cfg.depth - 2, -1, -1):
        add(f"up{l}_w", (3, 3, ch[l + 1], ch[l]))
        add(f"up{l}_b", (ch[l],))
        add(f"dec{l}_w", (3, 3, 2 * ch[l], ch[l]))
        add(f"dec{l}_b", (ch[l],))
        add(f"time_dec{l}_w", (dt, ch[l]))
        add(f"time_dec{l}_b", (ch[l],))
    add("head_w", (3, 3, ch[0], cfg.out_channels))
    add("head_b", (cfg.out_channels,))

    add("ref_stem_w", (3, 3, cfg.person_channels, ch[0]))
    add("ref_stem_b", (ch[0],))
    for l in range(cfg.attn_level + 1):
        add(f"ref_enc{l}_w", (3, 3, ch[l], ch[l]))
        add(f"ref_enc{l}_b", (ch[l],))
        if l < cfg.attn_level:
            add(f"ref_down{l}_w", (3, 3, ch[l], ch[l + 1]))
            add(f"ref_down{l}_b", (ch[l + 1],))
    return entries


@dataclass
class DenoiserParams:
    """All learnable weights as one flat float64 vector plus a layout table.

    The layout maps each named tensor to a disjoint index range covering the
    vector exactly; `get` returns a writable view into the flat storage.
    """

    cfg: NetworkConfig
    vec: np.ndarray
    layout: tuple = field(repr=False)

    def __post_init__(self):
        self._index = {n: (off, shape) for n, off, shape in self.layout}

    @classmethod
    def zeros(cls, cfg: NetworkConfig) -> "DenoiserParams":
        entries = _layout_entries(cfg)
        layout = []
        off = 0
        for name, shape in entries:
            size = int(np.prod(shape))
            layout.append((name, off, shape))
            off += size
        return cls(cfg=cfg, vec=np.zeros(off), layout=tuple(layout))

    def get(self, name: str) -> np.ndarray:
        off, shape = self._index[name]
        size = int(np.prod(shape))
        return self.vec[off:off + size].reshape(shape)

    def names(self) -> list[str]:
        return [n for n, _, _ in self.layout]

    def groups(self) -> list[str]:
        """Logical layer groups: tensor names with their _w/_b suffix dropped."""
        seen: list[str] = []
        for n, _, _ in self.layout:
            g = n.rsplit("_", 1)[0]
            if g not in seen:
                seen.append(g)
        return seen

    def group_slices(self) -> dict[str, list[tuple[int, int]]]:
        out: dict[str, list[tuple[int, int]]] = {}
        for n, off, shape in self.layout:
            g = n.rsplit("_", 1)[0]
            out.setdefault(g, []).append((off, off + int(np.prod(shape))))
        return out

    @property
    def size(self) -> int:
        return self.vec.size

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(cfg=self.cfg, vec=self.vec.copy(), layout=self.layout)


def init_params(cfg: NetworkConfig, seed: int) -> DenoiserParams:
    """Fan-in-scaled random init; biases zero; deterministic per seed."""
    params = DenoiserParams.zeros(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    raw = rng.standard_normal(params.size)
    for name, off, shape in params.layout:
        size = int(np.prod(shape))
        chunk = raw[off:off + size]
        if name.endswith("_b"):
            params.vec[off:off + size] = 0.0
        elif len(shape) == 4:  # conv kernels
            fan_in = shape[0] * shape[1] * shape[2]
            params.vec[off:off + size] = chunk * np.sqrt(2.0 / fan_in)
        else:  # linear maps (attention projections, time projections)
            params.vec[off:off + size] = chunk / np.sqrt(shape[0])
    return params
