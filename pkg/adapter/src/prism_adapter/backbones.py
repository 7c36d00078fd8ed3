"""Backbone wrappers behind a small uniform interface.

Two kinds of model are wrapped: conditional denoisers that expose per-block
activations for one denoising step, and plain image encoders used for
baseline embedding exports.  Heavyweight pretrained models are loaded
lazily and only when their weights are available locally; the ``toy``
variants are tiny seeded-numpy stand-ins that exercise the exact same file
contracts and are what the test suite runs against.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule

TOY_WEIGHT_SEED = 1234567


class BackboneLoadError(RuntimeError):
    """The requested backbone (or its weights) is not available."""


def _area_downsample(img: np.ndarray, size: int) -> np.ndarray:
    """Mean-pool an (H, W, C) image onto a size x size grid."""
    h, w, c = img.shape
    ys = (np.arange(size + 1) * h // size).astype(int)
    xs = (np.arange(size + 1) * w // size).astype(int)
    out = np.empty((size, size, c))
    for i in range(size):
        for j in range(size):
            patch = img[ys[i] : max(ys[i + 1], ys[i] + 1), xs[j] : max(xs[j + 1], xs[j] + 1)]
            out[i, j] = patch.mean(axis=(0, 1))
    return out


def _weights_hash(arrays: list[np.ndarray]) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return digest.hexdigest()[:12]


@dataclass(frozen=True)
class PoseVector:
    """Relative camera motion as fed to the conditioning pathway."""

    d_azimuth_deg: float
    d_elevation_deg: float
    d_radius: float

    def features(self) -> np.ndarray:
        az = np.radians(self.d_azimuth_deg)
        el = np.radians(self.d_elevation_deg)
        return np.array(
            [np.sin(az), np.cos(az), np.sin(el), np.cos(el), self.d_radius, 1.0]
        )


class ToyUNetBackbone:
    """Deterministic stand-in for a conditional denoising U-Net.

    Nine blocks in encoder, bottleneck, decoder order with a funnel of
    resolutions and channel widths.  All weights derive from one fixed seed,
    so the version hash is stable; outputs are a pure function of
    (target latent, timestep, source image, pose).
    """

    name = "toy-unet"
    latent_size = 16
    latent_channels = 4
    # (resolution, channels) per block, encoder -> bottleneck -> decoder
    block_specs = (
        (16, 8), (8, 16), (4, 32), (2, 64),
        (2, 64),
        (4, 32), (8, 16), (16, 8), (16, 8),
    )

    def __init__(self) -> None:
        rng = np.random.default_rng(TOY_WEIGHT_SEED)
        self.schedule = NoiseSchedule()
        self._encode_mix = rng.standard_normal((3, self.latent_channels)) * 0.5
        self._block_weights = []
        in_ch = self.latent_channels
        for _, out_ch in self.block_specs:
            self._block_weights.append(rng.standard_normal((in_ch, out_ch)) / np.sqrt(in_ch))
            in_ch = out_ch
        pose_dim = 6
        self._pose_proj = [
            rng.standard_normal((pose_dim, ch)) * 0.3 for _, ch in self.block_specs
        ]
        self._source_proj = [
            rng.standard_normal((3, ch)) * 0.3 for _, ch in self.block_specs
        ]
        self.version_hash = _weights_hash(
            [self._encode_mix, *self._block_weights, *self._pose_proj, *self._source_proj]
        )

    def encode(self, target_rgb: np.ndarray) -> np.ndarray:
        """Target image to a latent (deterministic)."""
        grid = _area_downsample(target_rgb, self.latent_size)
        return np.tanh((grid - 0.5) @ self._encode_mix * 4.0)

    def denoise_blocks(
        self,
        z_t: np.ndarray,
        t: int,
        source_rgb: np.ndarray,
        pose: PoseVector,
    ) -> list[np.ndarray]:
        """One conditioned denoising pass; returns all nine block outputs."""
        self.schedule.validate_timestep(t)
        pose_feat = pose.features()
        source_feat = _area_downsample(source_rgb, 1)[0, 0]
        t_scale = 1.0 + t / self.schedule.num_steps
        blocks: list[np.ndarray] = []
        current = z_t
        for spec_index, (res, _) in enumerate(self.block_specs):
            if current.shape[0] > res:  # downsample by mean pooling
                current = _area_downsample(current, res)
            elif current.shape[0] < res:  # upsample by nearest repeat
                factor = res // current.shape[0]
                current = np.repeat(np.repeat(current, factor, axis=0), factor, axis=1)
            mixed = current @ self._block_weights[spec_index]
            bias = pose_feat @ self._pose_proj[spec_index]
            bias = bias + source_feat @ self._source_proj[spec_index]
            current = np.tanh(mixed * t_scale + bias)
            blocks.append(current.astype(np.float32))
        return blocks


class ToyImageEmbedder:
    """Deterministic random-projection image encoder for baseline exports."""

    def __init__(self, name: str, dim: int, seed: int) -> None:
        self.name = name
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._grid = 8
        self._proj = rng.standard_normal((self._grid * self._grid * 3, dim))
        self._proj /= np.sqrt(self._proj.shape[0])
        self.version_hash = _weights_hash([self._proj])

    def embed(self, images: list[np.ndarray]) -> np.ndarray:
        rows = np.zeros((len(images), self.dim), dtype=np.float32)
        for i, img in enumerate(images):
            flat = _area_downsample(img, self._grid).reshape(-1)
            rows[i] = (flat @ self._proj).astype(np.float32)
        return rows


def _unavailable(name: str, hint: str):
    def load():
        raise BackboneLoadError(
            f"backbone {name!r} needs local pretrained weights ({hint}); "
            f"use a toy backbone for weight-free runs"
        )

    return load


_DENOISERS = {
    "toy-unet": ToyUNetBackbone,
    "zero123": _unavailable("zero123", "view-conditioned latent diffusion checkpoint"),
    "zero123-xl": _unavailable("zero123-xl", "view-conditioned latent diffusion checkpoint"),
}

_EMBEDDERS = {
    "toy-clip": lambda: ToyImageEmbedder("toy-clip", 64, seed=11),
    "toy-dino": lambda: ToyImageEmbedder("toy-dino", 96, seed=22),
    "clip": _unavailable("clip", "ViT-L/14@336px checkpoint"),
    "dino": _unavailable("dino", "DINOv2 ViT-L/14 checkpoint"),
}


def load_denoiser(name: str):
    if name not in _DENOISERS:
        raise BackboneLoadError(f"unknown denoising backbone {name!r}; have {sorted(_DENOISERS)}")
    return _DENOISERS[name]()


def load_embedder(name: str):
    if name not in _EMBEDDERS:
        raise BackboneLoadError(f"unknown embedding backbone {name!r}; have {sorted(_EMBEDDERS)}")
    return _EMBEDDERS[name]()
