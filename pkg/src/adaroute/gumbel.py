"""Differentiable discrete candidate selection.

Gumbel-perturbed argmax gives the hard choice; the softmax relaxation at
temperature tau carries the gradient. The straight-through combination
forwards the exact one-hot vector while backpropagating through the
relaxation.
"""

from dataclasses import dataclass

import numpy as np

from . import numeric
from .numeric import Tensor


@dataclass
class GumbelSample:
    hard: np.ndarray   # exact one-hot over candidates
    soft: Tensor       # relaxed distribution, on the tape
    tau: float
    noise: np.ndarray
    index: int


@dataclass(frozen=True)
class TemperatureSchedule:
    tau_init: float = 5.0
    tau_min: float = 0.5
    decay: float = 0.9

    def tau(self, epoch):
        return max(self.tau_min, self.tau_init * self.decay ** epoch)


def gumbel_from_uniform(u):
    """Standard Gumbel variate from a (0,1) uniform: -log(-log u)."""
    return -np.log(-np.log(u))


def sample_gumbel_noise(n, rng):
    if n < 1:
        raise ValueError("need at least one candidate")
    u = rng.random(n)
    # rng.random is in [0, 1); shift away from 0 to keep the double log finite
    return gumbel_from_uniform(np.clip(u, 1e-12, 1.0 - 1e-12))


def gumbel_softmax(z, g, tau):
    """Perturb logits with Gumbel noise; return hard argmax + relaxation.

    The relaxation divides the perturbed logits by tau before a log-space
    softmax, so temperature rescales but never reorders the perturbed
    scores: argmax(soft) == argmax(hard) for every tau > 0.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = numeric.as_tensor(z)
    g = np.asarray(g, dtype=np.float64)
    if z.data.shape != g.shape:
        raise numeric.ShapeError(f"logits {z.data.shape} vs noise {g.shape}")
    perturbed = (z + Tensor(g)) * (1.0 / tau)
    soft = numeric.softmax(perturbed, axis=-1)
    index = int(np.argmax(z.data + g))
    hard = np.zeros_like(g)
    hard[index] = 1.0
    return GumbelSample(hard=hard, soft=soft, tau=tau, noise=g, index=index)


def straight_through(sample):
    """Routing weights: forward exactly one-hot, backward via the relaxation."""
    return numeric.replace_forward(sample.hard, sample.soft)
