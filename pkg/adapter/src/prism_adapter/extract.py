"""Feature extraction jobs: backbone activations to PRSA, baseline
embeddings to PRSF.

Files are written through the evaluation toolkit's own writers so the byte
layout is exactly the published contract.  Every output gets a ``.meta``
sidecar line recording the backbone name and version hash, which makes
mixed-backbone sets detectable downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from prism_eval.core_io import (
    ActivationStack,
    EmbeddingSet,
    RelativePose,
    write_activation_file,
    write_embedding_file,
)

from .backbones import PoseVector


@dataclass(frozen=True)
class ExtractionJob:
    """One activation-extraction request."""

    source_path: str
    target_path: str
    pose: RelativePose
    timestep: int
    backbone: str
    noise_seed: int = 0

    def __post_init__(self) -> None:
        for path in (self.source_path, self.target_path):
            if not Path(path).is_file():
                raise FileNotFoundError(f"image not found: {path}")


def load_image_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _write_sidecar(path: str | Path, fields: dict) -> None:
    line = " ".join(f"{k}={v}" for k, v in fields.items())
    Path(str(path) + ".meta").write_text(line + "\n", encoding="utf-8")


def extract_activations(job: ExtractionJob, backbone, out_path: str | Path) -> None:
    """Noise the target latent at the job's timestep, run one conditioned
    denoising pass, and dump all block outputs to a PRSA file.

    Deterministic: the noise draw comes from the job seed, the backbone is
    a fixed function of its weights.
    """
    t = backbone.schedule.validate_timestep(job.timestep)
    source = load_image_rgb(job.source_path)
    target = load_image_rgb(job.target_path)
    z0 = backbone.encode(target)
    rng = np.random.default_rng(job.noise_seed)
    z_t = backbone.schedule.noise_latent(z0, t, rng)
    pose = PoseVector(
        job.pose.d_azimuth_deg, job.pose.d_elevation_deg, job.pose.d_radius
    )
    blocks = backbone.denoise_blocks(z_t, t, source, pose)
    write_activation_file(ActivationStack(tuple(blocks)), out_path)
    _write_sidecar(
        out_path,
        {
            "backbone": backbone.name,
            "version": backbone.version_hash,
            "timestep": t,
            "noise_seed": job.noise_seed,
            "daz": f"{job.pose.d_azimuth_deg:g}",
            "del": f"{job.pose.d_elevation_deg:g}",
            "drad": f"{job.pose.d_radius:g}",
        },
    )


def export_baseline_embeddings(
    image_paths: list[str | Path], embedder, out_path: str | Path, role: str = "generated"
) -> None:
    """One embedding row per image, input order preserved."""
    images = [load_image_rgb(p) for p in image_paths]
    if images:
        rows = embedder.embed(images)
    else:
        rows = np.zeros((0, embedder.dim), dtype=np.float32)
    write_embedding_file(EmbeddingSet(rows, role=role), out_path)
    _write_sidecar(
        out_path,
        {"backbone": embedder.name, "version": embedder.version_hash, "count": len(images)},
    )
