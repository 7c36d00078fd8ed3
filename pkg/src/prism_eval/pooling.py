"""Spatial pooling of activation stacks into raw feature vectors.

Each block is reduced to one C-dimensional vector: every pixel's channel
vector is scaled to unit length, the unit directions are averaged over the
H*W grid, and per-block results are concatenated in block order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_io import ActivationStack, DataError, FeatureVector


@dataclass(frozen=True)
class PoolingConfig:
    """Numerical guard for pixels with (near-)zero channel vectors."""

    zero_pixel_epsilon: float = 1e-12

    def __post_init__(self) -> None:
        if not self.zero_pixel_epsilon > 0:
            raise DataError("zero_pixel_epsilon must be positive")


DEFAULT_POOLING = PoolingConfig()


def pool_block(block: np.ndarray, cfg: PoolingConfig = DEFAULT_POOLING) -> FeatureVector:
    """Average the per-pixel unit directions of one (H, W, C) block.

    Pixels whose channel vector has norm below ``cfg.zero_pixel_epsilon``
    contribute a zero vector; the denominator stays H*W so the operator is
    linear in pixel count.  Accumulation is in float64, output is float32.
    """
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise DataError(f"block must be (H, W, C) with positive dims, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("block contains non-finite values")
    h, w, _ = arr.shape
    norms = np.linalg.norm(arr, axis=2)
    degenerate = norms < cfg.zero_pixel_epsilon
    safe = np.where(degenerate, 1.0, norms)
    unit = arr / safe[:, :, None]
    if degenerate.any():
        unit[degenerate] = 0.0
    pooled = unit.sum(axis=(0, 1)) / float(h * w)
    return FeatureVector(pooled.astype(np.float32))


def build_raw_feature(
    stack: ActivationStack, cfg: PoolingConfig = DEFAULT_POOLING
) -> FeatureVector:
    """Pool every block of a stack and concatenate in block order."""
    parts = [pool_block(blk, cfg).values for blk in stack.blocks]
    return FeatureVector(np.concatenate(parts))
