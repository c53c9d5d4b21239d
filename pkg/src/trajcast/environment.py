"""Map encoder and per-agent ROIAlign features.

The encoder is three stride-2 3x3 convolutions (with ReLU), so feature
cell ``(a, b)`` is centered on image pixel ``(8a, 8b)``. An agent's region
is the ``2*R_s`` meter square around it; it spans ``H*R_s/(4h)`` cells on
the feature map and is sampled on a ``K x K`` grid of bin centers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Linear, Module
from .maps import RasterConfig, SemanticImage, world_to_pixel
from .tensor import (DimensionError, Tensor, add, bilinear_gather, conv2d, linear, permute, relu,
                     reshape, scale, take_rows)

STRIDE = 8


class ConvEncoder(Module):
    def __init__(self, rng: np.random.Generator, in_channels: int = 1, widths=(8, 16, 32)):
        super().__init__()
        self.widths = tuple(widths)
        self.layers = []
        c_in = in_channels
        for k, c_out in enumerate(self.widths):
            conv = Module()
            bound = 1.0 / np.sqrt(c_in * 9)
            w = conv.add_param("weight", rng.uniform(-bound, bound, (c_out, c_in, 3, 3)))
            b = conv.add_param("bias", rng.uniform(-bound, bound, (c_out,)))
            self.add_child(f"conv{k}", conv)
            self.layers.append((w, b))
            c_in = c_out
        self.in_channels = in_channels

    @property
    def out_channels(self) -> int:
        return self.widths[-1]

    def __call__(self, x: Tensor) -> Tensor:
        for w, b in self.layers:
            x = relu(conv2d(x, w, b, stride=2, padding=1))
        return x


@dataclass
class FeatureMap:
    features: Tensor                    # [C, H/8, W/8] or [B, C, H/8, W/8]
    ego: tuple[float, float] | np.ndarray
    config: RasterConfig

    @property
    def meters_per_cell(self) -> tuple[float, float]:
        ry, rx = self.config.resolution
        return STRIDE * ry, STRIDE * rx


def encode_map(img: SemanticImage | list[SemanticImage], enc: ConvEncoder) -> FeatureMap:
    """Run the encoder on one image, or on a list of images sharing one raster config."""
    imgs = img if isinstance(img, list) else [img]
    cfg = imgs[0].config
    for im in imgs:
        _, h, w = im.data.shape
        if h % STRIDE or w % STRIDE:
            raise DimensionError(f"image {h}x{w} is not divisible by {STRIDE}")
    if isinstance(img, list):
        x = Tensor(np.stack([im.data for im in imgs]))
        ego = np.array([im.ego for im in imgs], dtype=np.float64)
    else:
        x = Tensor(img.data)
        ego = img.ego
    return FeatureMap(enc(x), ego, cfg)


def roi_geometry(config: RasterConfig, ego, positions, radius: float, bins: int,
                 sampling_ratio: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Feature-map ``(row, col)`` sample coordinates for each agent.

    Returns arrays shaped ``[P, bins*bins, sampling_ratio**2]``; bins are in
    row-major order.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    ego = np.asarray(ego, dtype=np.float64)
    center = world_to_pixel(config, pos - ego.reshape(-1, 2), ego=(0.0, 0.0)) / STRIDE
    off = _bin_offsets(config, radius, bins, sampling_ratio)
    return center[:, None, None, 0] + off[None, ..., 0], center[:, None, None, 1] + off[None, ..., 1]


def _bin_offsets(config: RasterConfig, radius: float, bins: int, sampling_ratio: int) -> np.ndarray:
    """``[bins*bins, s*s, 2]`` (row, col) offsets of sample points from the box center."""
    half_r = radius * (config.height / config.extent_y) / STRIDE
    half_c = radius * (config.width / config.extent_x) / STRIDE
    s = sampling_ratio
    grid = ((np.arange(bins * s) + 0.5) / (bins * s) * 2.0 - 1.0).reshape(bins, s)
    dr = np.broadcast_to(grid[:, None, :, None], (bins, bins, s, s)).reshape(bins * bins, s * s)
    dc = np.broadcast_to(grid[None, :, None, :], (bins, bins, s, s)).reshape(bins * bins, s * s)
    return np.stack([half_r * dr, half_c * dc], axis=-1)


def roi_features(fm: FeatureMap, positions, radius: float = 20.0, bins: int = 3,
                 sampling_ratio: int = 1, batch_index=None) -> Tensor:
    """ROIAlign every agent at once; returns ``[P, C*bins*bins]`` (channel-major flatten).

    ``positions`` may be a tensor, in which case gradients reach it through
    the bilinear weights. With a batched feature map, ``batch_index`` picks
    each agent's map and ego.
    """
    feats = fm.features
    c = feats.shape[-3]
    pos = positions if isinstance(positions, Tensor) else Tensor(np.reshape(positions, (-1, 2)))
    p = pos.shape[0]
    if feats.data.ndim == 4:
        bidx = np.asarray(batch_index, dtype=np.intp).reshape(-1)
        ego = np.asarray(fm.ego, dtype=np.float64)[bidx]
    else:
        bidx = None
        ego = np.broadcast_to(np.asarray(fm.ego, dtype=np.float64).reshape(1, 2), (p, 2))
    cfg = fm.config
    sy = cfg.height / cfg.extent_y / STRIDE
    sx = cfg.width / cfg.extent_x / STRIDE
    # (row, col) = (H/2 - (y - ey) H/h, W/2 + (x - ex) W/w) / 8
    to_rc = Tensor(np.array([[0.0, -sy], [sx, 0.0]]))
    base = np.stack([cfg.height / 2 / STRIDE + ego[:, 1] * sy, cfg.width / 2 / STRIDE - ego[:, 0] * sx], axis=1)
    center = add(linear(pos, to_rc), Tensor(base))
    offsets = _bin_offsets(cfg, radius, bins, sampling_ratio)
    kk, ss = offsets.shape[0], offsets.shape[1]
    rep = np.repeat(np.arange(p), kk)
    centers = take_rows(center, rep)
    sample_b = None if bidx is None else np.repeat(bidx, kk)
    acc = None
    for j in range(ss):
        pts = add(centers, Tensor(np.tile(offsets[:, j], (p, 1))))
        g = bilinear_gather(feats, pts, batch_index=sample_b)
        acc = g if acc is None else add(acc, g)
    if ss > 1:
        acc = scale(acc, 1.0 / ss)
    return reshape(permute(reshape(acc, (p, kk, c)), (0, 2, 1)), (p, c * kk))


def roi_align(fm: FeatureMap, agent_pos, radius: float = 20.0, bins: int = 3,
              sampling_ratio: int = 1) -> Tensor:
    """``[C, bins, bins]`` region feature for one agent."""
    g = roi_features(fm, np.reshape(agent_pos, (1, 2)), radius, bins, sampling_ratio)
    c = fm.features.shape[-3]
    return reshape(g, (c, bins, bins))


def embed_roi(G: Tensor, embed: Linear) -> Tensor:
    """Flatten ``[C, K, K]`` (or already-flat rows) and apply the embedding layer."""
    g = G if G.data.ndim == 2 else reshape(G, (1, G.size))
    if g.shape[1] != embed.n_in:
        raise DimensionError(f"roi feature of width {g.shape[1]} does not match embedding input {embed.n_in}")
    return embed(g)
