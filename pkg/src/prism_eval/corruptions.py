"""Deterministic image degradations for metric-sensitivity studies.

Images are float arrays with values in [0, 1]; every operation clamps its
output back into that range.  Four corruption kinds are provided, each with
a fixed three-step severity ladder:

  - ``blur``: Gaussian blur, sigma in pixels {1.0, 1.5, 5.0};
  - ``hue``: HSV hue rotation by a fraction of the circle {-0.1, -0.3, -0.5};
  - ``gaussian_noise``: blend t*img + (1-t)*noise with t {0.8, 0.6, 0.4};
  - ``salt_pepper``: per-pixel flips to black/white at rates
    {0.005, 0.02, 0.05}.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .core_io import ContractError, DataError

BLUR_SIGMAS = (1.0, 1.5, 5.0)
HUE_SHIFTS = (-0.1, -0.3, -0.5)
NOISE_BLEND_WEIGHTS = (0.8, 0.6, 0.4)
SALT_PEPPER_RATES = (0.005, 0.02, 0.05)

CORRUPTION_KINDS = ("blur", "hue", "gaussian_noise", "salt_pepper")
SEVERITY_LEVELS = 3

_LADDERS = {
    "blur": BLUR_SIGMAS,
    "hue": HUE_SHIFTS,
    "gaussian_noise": NOISE_BLEND_WEIGHTS,
    "salt_pepper": SALT_PEPPER_RATES,
}


@dataclass(frozen=True)
class CorruptionSpec:
    """One point on the corruption grid."""

    kind: str
    severity_index: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in CORRUPTION_KINDS:
            raise DataError(f"unknown corruption kind {self.kind!r}")
        if not 0 <= self.severity_index < SEVERITY_LEVELS:
            raise DataError(f"severity_index must be in [0, {SEVERITY_LEVELS})")

    @property
    def parameter(self) -> float:
        return _LADDERS[self.kind][self.severity_index]


def ensure_rgb(img: np.ndarray) -> np.ndarray:
    """Validate an (H, W, 3) float image in [0, 1]; returns float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("image contains non-finite values")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise ContractError("image values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-center alignment."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    src_y = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    src_x = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0)[:, None]
    fx = (src_x - x0)[None, :]
    if arr.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    top = arr[y0][:, x0] * (1.0 - fx) + arr[y0][:, x1] * fx
    bottom = arr[y1][:, x0] * (1.0 - fx) + arr[y1][:, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def composite_and_resize(img: np.ndarray, size: int = 256) -> np.ndarray:
    """Alpha-composite onto white and bilinearly resize to size x size."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ContractError(f"expected (H, W, 3|4) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("image contains non-finite values")
    arr = np.clip(arr, 0.0, 1.0)
    if arr.shape[2] == 4:
        alpha = arr[:, :, 3:4]
        rgb = arr[:, :, :3] * alpha + (1.0 - alpha)
    else:
        rgb = arr
    return np.clip(bilinear_resize(rgb, size, size), 0.0, 1.0)


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
    maxc = rgb.max(axis=2)
    minc = rgb.min(axis=2)
    delta = maxc - minc
    sat = np.where(maxc > 0.0, delta / np.where(maxc > 0.0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0.0, delta, 1.0)
    hue = np.zeros_like(maxc)
    is_r = (maxc == r) & (delta > 0.0)
    is_g = (maxc == g) & (delta > 0.0) & ~is_r
    is_b = (delta > 0.0) & ~is_r & ~is_g
    hue = np.where(is_r, ((g - b) / safe) % 6.0, hue)
    hue = np.where(is_g, (b - r) / safe + 2.0, hue)
    hue = np.where(is_b, (r - g) / safe + 4.0, hue)
    return np.stack([hue / 6.0, sat, maxc], axis=2)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[:, :, 0] % 1.0, hsv[:, :, 1], hsv[:, :, 2]
    k = h * 6.0
    i = np.floor(k).astype(np.int64) % 6
    f = k - np.floor(k)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=2)


def corrupt(img: np.ndarray, spec: CorruptionSpec, noise_model: str = "uniform") -> np.ndarray:
    """Apply one corruption; deterministic for a fixed spec.

    ``noise_model`` selects the gaussian_noise blend target: per-pixel
    uniform noise in [0, 1] (default) or a clipped Gaussian(0.5, 0.25).
    """
    arr = ensure_rgb(img)
    param = spec.parameter
    if spec.kind == "blur":
        out = np.empty_like(arr)
        for ch in range(3):
            out[:, :, ch] = ndimage.gaussian_filter(
                arr[:, :, ch], sigma=param, truncate=3.0, mode="nearest"
            )
    elif spec.kind == "hue":
        hsv = _rgb_to_hsv(arr)
        hsv[:, :, 0] = (hsv[:, :, 0] + param) % 1.0
        out = _hsv_to_rgb(hsv)
    elif spec.kind == "gaussian_noise":
        rng = np.random.default_rng(spec.seed)
        if noise_model == "uniform":
            noise = rng.random(arr.shape)
        elif noise_model == "gaussian":
            noise = np.clip(rng.normal(0.5, 0.25, size=arr.shape), 0.0, 1.0)
        else:
            raise ContractError(f"unknown noise model {noise_model!r}")
        out = param * arr + (1.0 - param) * noise
    else:  # salt_pepper
        rng = np.random.default_rng(spec.seed)
        flip = rng.random(arr.shape[:2]) < param
        salt = rng.random(arr.shape[:2]) < 0.5
        out = arr.copy()
        out[flip & salt] = 1.0
        out[flip & ~salt] = 0.0
    return np.clip(out, 0.0, 1.0)


def load_png(path: str | Path) -> np.ndarray:
    """Read a PNG as float RGB or RGBA in [0, 1]."""
    with Image.open(path) as im:
        mode = "RGBA" if "A" in im.getbands() else "RGB"
        arr = np.asarray(im.convert(mode), dtype=np.float64) / 255.0
    return arr


def save_png(path: str | Path, img: np.ndarray) -> None:
    """Write a float [0, 1] RGB(A) image as 8-bit PNG."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ContractError(f"expected (H, W, 3|4) image, got shape {arr.shape}")
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)
