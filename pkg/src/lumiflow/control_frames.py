"""Pseudo-frame conditioning inputs: movement map, object crop, color/intensity frames.

All control frames are built at the reference-image resolution so the
tokenizer treats every frame uniformly.  Boxes live in normalized [0, 1]
coordinates; rasterization uses the pixel-center rule (a pixel belongs to a
box iff its center falls inside the half-open box interval).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .radiometry import EV_MAX, EV_MIN


class DegenerateBoxError(ValueError):
    """A box rasterized or cropped to zero pixels."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized image coordinates, x0 < x1, y0 < y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise ValueError(
                f"box must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1, got {self.as_tuple()}"
            )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))


def rasterize_box(box: BoundingBox, width: int, height: int) -> np.ndarray:
    """Binary (H, W) mask of pixels whose centers lie in the box.

    Half-open on the far edges, so adjacent boxes sharing an edge never claim
    the same pixel center.
    """
    cx = (np.arange(width) + 0.5) / width
    cy = (np.arange(height) + 0.5) / height
    in_x = (box.x0 <= cx) & (cx < box.x1)
    in_y = (box.y0 <= cy) & (cy < box.y1)
    return in_y[:, None] & in_x[None, :]


def encode_movement_map(src: BoundingBox, tgt: BoundingBox, resolution: tuple[int, int]) -> np.ndarray:
    """Three-channel movement map: R = source region, G = B = target region.

    Values are exactly 0 or 1.  The two masks are rasterized independently and
    may overlap.
    """
    w, h = resolution
    r = rasterize_box(src, w, h)
    if not r.any():
        raise DegenerateBoxError(f"source box {src.as_tuple()} rasterizes to zero pixels at {w}x{h}")
    g = rasterize_box(tgt, w, h)
    if not g.any():
        raise DegenerateBoxError(f"target box {tgt.as_tuple()} rasterizes to zero pixels at {w}x{h}")
    out = np.zeros((h, w, 3), dtype=np.float64)
    out[..., 0] = r
    out[..., 1] = g
    out[..., 2] = g
    return out


def encode_color_frame(tint, resolution: tuple[int, int]) -> np.ndarray:
    """Constant frame filled with the desired linear-RGB tint."""
    t = np.asarray(tint, dtype=np.float64).reshape(3)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"tint components must be in [0, 1], got {tint}")
    w, h = resolution
    return np.broadcast_to(t, (h, w, 3)).copy()


def encode_intensity_frame(stops: float, resolution: tuple[int, int]) -> np.ndarray:
    """Constant gray frame encoding exposure stops, affine on [EV_MIN, EV_MAX].

    0 EV maps to mid-gray 0.5; values outside the range clamp to 0 or 1.
    """
    s = float(stops)
    if not np.isfinite(s):
        raise ValueError(f"stops must be finite, got {stops!r}")
    v = float(np.clip((s - EV_MIN) / (EV_MAX - EV_MIN), 0.0, 1.0))
    w, h = resolution
    return np.full((h, w, 3), v, dtype=np.float64)


def decode_intensity_value(gray: float) -> float:
    """Inverse of the intensity encoding (exact on the unclamped range)."""
    return EV_MIN + float(gray) * (EV_MAX - EV_MIN)


def bilinear_resize(img: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling and edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    out_w, out_h = resolution
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(sy).astype(int), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def crop_object_frame(reference: np.ndarray, box: BoundingBox, resolution: tuple[int, int]) -> np.ndarray:
    """Crop the box region from a tone-mapped reference and resize to frame size.

    The crop snaps to the nearest pixel boundaries (at least one pixel per
    axis), then a bilinear resize brings it to the common frame resolution.
    """
    reference = np.asarray(reference, dtype=np.float64)
    h, w = reference.shape[:2]
    j0 = int(round(box.x0 * w))
    j1 = int(round(box.x1 * w))
    i0 = int(round(box.y0 * h))
    i1 = int(round(box.y1 * h))
    j0, i0 = max(0, min(j0, w - 1)), max(0, min(i0, h - 1))
    j1, i1 = max(j0 + 1, min(j1, w)), max(i0 + 1, min(i1, h))
    crop = reference[i0:i1, j0:j1]
    if crop.size == 0:
        raise DegenerateBoxError(f"box {box.as_tuple()} crops to zero pixels at {w}x{h}")
    return bilinear_resize(crop, resolution)


def augment_box(
    box: BoundingBox,
    seed: int,
    scale_range: tuple[float, float] = (0.8, 1.2),
) -> BoundingBox:
    """Jitter a box by scaling width/height independently about its center.

    The center is preserved exactly before clamping; the result is clamped to
    the unit square.
    """
    lo, hi = scale_range
    if not (0.0 < lo <= hi):
        raise ValueError(f"invalid scale range {scale_range}")
    rng = np.random.default_rng(seed)
    sx, sy = rng.uniform(lo, hi, size=2)
    cx, cy = box.center
    if sx == 1.0:  # keep the identity draw bit-exact
        x0, x1 = box.x0, box.x1
    else:
        hw = 0.5 * (box.x1 - box.x0) * sx
        x0, x1 = cx - hw, cx + hw
    if sy == 1.0:
        y0, y1 = box.y0, box.y1
    else:
        hh = 0.5 * (box.y1 - box.y0) * sy
        y0, y1 = cy - hh, cy + hh
    return BoundingBox(
        x0=max(0.0, x0),
        y0=max(0.0, y0),
        x1=min(1.0, x1),
        y1=min(1.0, y1),
    )
