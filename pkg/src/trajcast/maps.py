"""HD-map centerlines and their ego-centered raster.

Pixel ``(r, c)`` has its center at continuous coordinate ``(r, c)``; world
``+x`` runs along columns and world ``+y`` runs up the image (decreasing
row). With the default 224 px / 100 m window the ego sits on pixel
``(112, 112)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class HdMap:
    centerlines: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        lines = []
        for k, line in enumerate(self.centerlines):
            arr = np.asarray(line, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
                raise ValueError(f"centerline {k}: need at least two (x, y) points, got shape {arr.shape}")
            if np.any(np.all(np.diff(arr, axis=0) == 0, axis=1)):
                raise ValueError(f"centerline {k}: consecutive duplicate points")
            arr.setflags(write=False)
            lines.append(arr)
        object.__setattr__(self, "centerlines", tuple(lines))

    def translated(self, offset) -> "HdMap":
        off = np.asarray(offset, dtype=np.float64).reshape(1, 2)
        return HdMap(tuple(line + off for line in self.centerlines))

    def segments(self) -> np.ndarray:
        """All segments as an ``[S, 4]`` array of ``(x0, y0, x1, y1)``."""
        if not self.centerlines:
            return np.zeros((0, 4))
        return np.concatenate([np.hstack([l[:-1], l[1:]]) for l in self.centerlines])

    def to_json(self) -> dict:
        return {"centerlines": [line.tolist() for line in self.centerlines]}

    @classmethod
    def from_json(cls, doc: dict) -> "HdMap":
        return cls(tuple(np.asarray(l, dtype=np.float64) for l in doc.get("centerlines", [])))


def load_map(path: str | Path) -> HdMap:
    with open(path) as fh:
        return HdMap.from_json(json.load(fh))


def save_map(path: str | Path, hd_map: HdMap) -> None:
    with open(path, "w") as fh:
        json.dump(hd_map.to_json(), fh)


@dataclass(frozen=True)
class RasterConfig:
    height: int = 224           # H, pixels
    width: int = 224            # W, pixels
    extent_y: float = 100.0     # h, meters
    extent_x: float = 100.0     # w, meters
    half_width: float = 1.75    # lane band half-width, meters
    channels: int = 1
    heading_align: bool = False

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.extent_x <= 0 or self.extent_y <= 0:
            raise ValueError("raster size and extent must be positive")
        if self.channels < 1:
            raise ValueError("need at least one channel")
        if self.heading_align:
            raise NotImplementedError("heading-aligned rasters are not supported; images stay world-aligned")

    @property
    def resolution(self) -> tuple[float, float]:
        """Meters per pixel along rows and columns, ``(h/H, w/W)``."""
        return self.extent_y / self.height, self.extent_x / self.width


@dataclass(frozen=True)
class SemanticImage:
    data: np.ndarray                     # [channels, H, W], values in [0, 1]
    ego: tuple[float, float]             # world position at the image center
    config: RasterConfig = field(default_factory=RasterConfig)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def world_to_pixel(img: SemanticImage | RasterConfig, points, ego=None) -> np.ndarray:
    """Continuous ``(row, col)`` for world points; out-of-window points are not clipped."""
    cfg = img.config if isinstance(img, SemanticImage) else img
    ex, ey = img.ego if ego is None else ego
    p = np.asarray(points, dtype=np.float64)
    col = cfg.width / 2 + (p[..., 0] - ex) * (cfg.width / cfg.extent_x)
    row = cfg.height / 2 - (p[..., 1] - ey) * (cfg.height / cfg.extent_y)
    return np.stack([row, col], axis=-1)


def pixel_to_world(img: SemanticImage | RasterConfig, rc, ego=None) -> np.ndarray:
    cfg = img.config if isinstance(img, SemanticImage) else img
    ex, ey = img.ego if ego is None else ego
    rc = np.asarray(rc, dtype=np.float64)
    x = ex + (rc[..., 1] - cfg.width / 2) * (cfg.extent_x / cfg.width)
    y = ey - (rc[..., 0] - cfg.height / 2) * (cfg.extent_y / cfg.height)
    return np.stack([x, y], axis=-1)


def _segment_distance(px: np.ndarray, py: np.ndarray, seg: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = seg
    dx, dy = x1 - x0, y1 - y0
    t = ((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def rasterize(hd_map: HdMap | None, ego, config: RasterConfig | None = None) -> SemanticImage:
    """Ego-centered binary centerline-band image.

    A pixel is 1 when its center lies within ``half_width`` meters of any
    centerline segment. Geometry is evaluated in ego-relative meters so the
    result depends only on map positions relative to the ego.
    """
    cfg = config or RasterConfig()
    ex, ey = float(ego[0]), float(ego[1])
    img = np.zeros((cfg.channels, cfg.height, cfg.width))
    if hd_map is not None and hd_map.centerlines:
        segs = hd_map.segments() - np.array([ex, ey, ex, ey])
        ry, rx = cfg.resolution
        # pixel-center coordinates relative to the ego, meters
        xs = (np.arange(cfg.width) - cfg.width / 2) * rx
        ys = -(np.arange(cfg.height) - cfg.height / 2) * ry
        band = np.zeros((cfg.height, cfg.width), dtype=bool)
        hw = cfg.half_width
        for seg in segs:
            # restrict to the segment's bounding box grown by the half-width
            lo_x, hi_x = min(seg[0], seg[2]) - hw, max(seg[0], seg[2]) + hw
            lo_y, hi_y = min(seg[1], seg[3]) - hw, max(seg[1], seg[3]) + hw
            cols = np.nonzero((xs >= lo_x - rx) & (xs <= hi_x + rx))[0]
            rows = np.nonzero((ys >= lo_y - ry) & (ys <= hi_y + ry))[0]
            if cols.size == 0 or rows.size == 0:
                continue
            px, py = np.meshgrid(xs[cols], ys[rows])
            hit = _segment_distance(px, py, seg) <= hw
            band[np.ix_(rows, cols)] |= hit
        img[0] = band
    return SemanticImage(img, (ex, ey), cfg)


def write_pgm(path: str | Path, img: SemanticImage, channel: int = 0) -> None:
    """Binary (P5) 8-bit portable graymap of one channel."""
    plane = np.clip(img.data[channel], 0.0, 1.0)
    raw = np.round(plane * 255).astype(np.uint8)
    h, w = raw.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raw.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)
    return data.astype(np.float64) / maxval
