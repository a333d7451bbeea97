"""Linear-RGB radiometric math: exposure gain, compositing, relighting, tone mapping.

Images are ``(H, W, 3)`` arrays of non-negative linear-radiance values.  All
math here runs in float64; file I/O (see :mod:`lumiflow.imgio`) stores float32.
"""

from __future__ import annotations

import numpy as np

# Rec.709 luma weights, used wherever scalar "luminance" is needed.
REC709_LUMA = np.array([0.2126, 0.7152, 0.0722])

# Default operating range for exposure adjustments, in EV stops.
EV_MIN = -3.0
EV_MAX = 3.0

GAMMA_EXPONENT = 1.0 / 2.2


def _as_image(arr, name: str = "image") -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"{name} is empty: shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")


def illumination_gain(stops: float) -> float:
    """Multiplicative radiometric gain for an exposure change of ``stops`` EV.

    +1 EV doubles the light, -1 EV halves it: gain = 2**stops.
    """
    s = float(stops)
    if not np.isfinite(s):
        raise ValueError(f"exposure stops must be finite, got {stops!r}")
    return float(np.exp2(s))


def composite_linear(amb, light) -> np.ndarray:
    """Composite an ambient base image with a direct-light image (pixelwise sum)."""
    amb = _as_image(amb, "amb")
    light = _as_image(light, "light")
    _check_same_shape(amb, light)
    return amb + light


def relight(amb, light, alpha: float = 1.0, gain: float = 1.0, tint=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Parametric recombination ``alpha * amb + gain * (light * tint)``.

    ``tint`` multiplies the direct term channel-wise; the direct pass is
    rendered with white, unit-intensity emission, so the tint is exact.

    Args:
        amb: ambient base image, linear RGB.
        light: direct-light image, linear RGB, white unit emitter.
        alpha: ambient scaling factor in [0, 1].
        gain: dimensionless light-intensity gain (> 0 under normal use,
            0 extinguishes the light).
        tint: linear-space RGB tint, each channel in [0, 1].
    """
    amb = _as_image(amb, "amb")
    light = _as_image(light, "light")
    _check_same_shape(amb, light)
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    gain = float(gain)
    if not np.isfinite(gain) or gain < 0.0:
        raise ValueError(f"gain must be finite and >= 0, got {gain}")
    t = np.asarray(tint, dtype=np.float64).reshape(3)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"tint components must be in [0, 1], got {tint}")
    return alpha * amb + gain * (light * t)


def luminance(img) -> np.ndarray:
    """Rec.709 luminance map, shape (H, W)."""
    return _as_image(img) @ REC709_LUMA


def luminance_percentile(
    img,
    percentile: float = 99.95,
    n_samples: int = 1024,
    seed: int = 0,
) -> float:
    """Nearest-rank luminance percentile over randomly sampled pixels.

    Samples ``n_samples`` pixel positions uniformly with replacement
    (deterministic for a fixed ``seed``).  When ``n_samples`` covers the whole
    image, every pixel is used exactly once instead, which makes the result
    the exact percentile of the full image.
    """
    img = _as_image(img)
    if not 0.0 < percentile <= 100.0:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    lum = (img @ REC709_LUMA).ravel()
    if n_samples >= lum.size:
        sample = lum
    else:
        rng = np.random.default_rng(seed)
        sample = lum[rng.integers(0, lum.size, size=n_samples)]
    sample = np.sort(sample)
    rank = int(np.ceil(percentile / 100.0 * sample.size))  # nearest-rank, 1-based
    return float(sample[rank - 1])


def tone_map(img, e_max: float) -> np.ndarray:
    """Percentile-normalized sRGB-style tone mapping.

    Divides by ``e_max``, clips to [0, 1], then applies the 1/2.2 gamma
    approximation of the sRGB curve.  Values at or above ``e_max`` map to 1.
    """
    img = _as_image(img)
    e_max = float(e_max)
    if not np.isfinite(e_max) or e_max <= 0.0:
        raise ValueError(f"e_max must be finite and > 0, got {e_max}")
    return np.clip(img / e_max, 0.0, 1.0) ** GAMMA_EXPONENT
