"""Image file I/O: PFM for linear radiance maps, PNG for tone-mapped output.

PFM files use the little-endian convention (negative scale header) and store
rows bottom-to-top, as produced by most HDR tools.  Data is float32 on disk.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


def write_pfm(path, img) -> None:
    """Write a (H, W, 3) linear image as a little-endian color PFM."""
    a = np.asarray(img, dtype=np.float32)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(a[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a color PFM back into a float32 (H, W, 3) array."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"PF":
            raise ValueError(f"{path}: not a color PFM (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 3 * 4), dtype=dtype)
    if data.size != w * h * 3:
        raise ValueError(f"{path}: truncated PFM payload")
    return data.reshape(h, w, 3)[::-1].astype(np.float32)


def write_png(path, img) -> None:
    """Write a [0, 1] tone-mapped image as 8-bit PNG (value = round(255 * x))."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {a.shape}")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("PNG output expects values in [0, 1]")
    Image.fromarray(np.round(255.0 * a).astype(np.uint8), mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    """Read an 8-bit PNG into a float64 [0, 1] array."""
    with Image.open(path) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float64)
    return a / 255.0


def require_files(*paths) -> None:
    """Raise FileNotFoundError listing every missing path."""
    missing = [str(p) for p in paths if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError("missing input file(s): " + ", ".join(missing))
