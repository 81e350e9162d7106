"""Image perturbation: Gaussian noise plus Bernoulli pixel masking.

A perturbed image is (I + alpha * N) * M where N is standard Gaussian per
element and M is a per-pixel Bernoulli(1 - alpha) mask shared across all
channels. The result is deliberately not clamped to [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .prng import SplitMix64

DEFAULT_N = 8
DEFAULT_ALPHA = 0.4


@dataclass(frozen=True)
class PerturbationConfig:
    n: int = DEFAULT_N
    alpha: float = DEFAULT_ALPHA
    seed: int = 42

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")


@dataclass
class PerturbationSet:
    original: np.ndarray
    perturbed: list                      # n images, same shape as original
    config: PerturbationConfig
    # filled downstream once the perturbed images have been run through the model
    traces: list = field(default_factory=list)
    weights: list = field(default_factory=list)


def perturb_image(image: np.ndarray, alpha: float, rng: SplitMix64) -> np.ndarray:
    """One perturbation draw from a shared Prng stream.

    All C*H*W noise values are drawn first (row-major over channels, then
    rows, then columns), then one mask value per spatial position.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    noise = np.array([rng.gaussian() for _ in range(c * h * w)]).reshape(c, h, w)
    mask = np.array([rng.bernoulli(1.0 - alpha) for _ in range(h * w)],
                    dtype=np.float64).reshape(h, w)
    return (image + alpha * noise) * mask[None, :, :]


def generate_set(image: np.ndarray, config: PerturbationConfig) -> PerturbationSet:
    """n perturbations from a single stream seeded by config.seed."""
    rng = SplitMix64(config.seed)
    perturbed = [perturb_image(image, config.alpha, rng) for _ in range(config.n)]
    return PerturbationSet(np.asarray(image, dtype=np.float64), perturbed, config)
