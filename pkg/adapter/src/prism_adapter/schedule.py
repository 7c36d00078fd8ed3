"""Forward diffusion noise schedule used when preparing latents.

Standard 1000-step linear-beta schedule; the noised latent at step t is
sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps with unit Gaussian eps.
At t = 0 the latent is nearly unchanged (alpha_bar_0 = 1 - beta_0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_NUM_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


class TimestepError(ValueError):
    """Timestep outside the schedule."""


@dataclass(frozen=True)
class NoiseSchedule:
    num_steps: int = DEFAULT_NUM_STEPS
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ValueError("schedule needs at least one step")
        betas = np.linspace(self.beta_start, self.beta_end, self.num_steps)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - betas))

    @property
    def max_timestep(self) -> int:
        return self.num_steps - 1

    def validate_timestep(self, t: int) -> int:
        t = int(t)
        if not 0 <= t <= self.max_timestep:
            raise TimestepError(
                f"timestep {t} outside schedule [0, {self.max_timestep}]"
            )
        return t

    def noise_latent(self, z0: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        """Noised latent z_t; deterministic given the caller's generator."""
        t = self.validate_timestep(t)
        a = float(self.alpha_bar[t])
        eps = rng.standard_normal(z0.shape)
        return np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eps
