"""Reduce a set of sampled enhancements to one deterministic output."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import torch

from probenhance.network import PriorSampler, ProbabilisticEnhancer

DEFAULT_SAMPLES = 20


@dataclass
class SampleSet:
    predictions: list
    log_densities: list
    source: str = ""
    latents: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.predictions) != len(self.log_densities):
            raise ValueError("predictions and log_densities differ in length")
        shapes = {tuple(p.shape) for p in self.predictions}
        if len(shapes) > 1:
            raise ValueError(f"predictions have differing shapes: {sorted(shapes)}")
        self.log_densities = [float(v) for v in self.log_densities]
        if not all(math.isfinite(v) for v in self.log_densities):
            raise ValueError("log densities must be finite")

    def __len__(self):
        return len(self.predictions)

    def _require_nonempty(self):
        if not self.predictions:
            raise ValueError("empty sample set")


def draw_samples(model: ProbabilisticEnhancer, x: torch.Tensor, n: int,
                 generator: torch.Generator | None = None, source: str = "") -> SampleSet:
    """``n`` prior draws for a single image ``x`` of shape (1, 3, H, W).

    The feature extractor runs once; each draw re-evaluates only the latent
    projection, PAdaIN and the output block.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if x.dim() != 4 or x.shape[0] != 1:
        raise ValueError("draw_samples takes one image at a time, shape (1, 3, H, W)")
    sampler = PriorSampler(model, x)
    preds, logps, zs = [], [], []
    for _ in range(n):
        pred, z = sampler.draw_random(generator)
        preds.append(pred[0])
        logps.append(float(z.log_density[0]))
        zs.append(z)
    return SampleSet(preds, logps, source, zs)


def mc_estimate(s: SampleSet) -> torch.Tensor:
    """Pixelwise mean of the samples (accumulated in float64), clamped to [0, 1]."""
    s._require_nonempty()
    stacked = torch.stack([p.to(torch.float64) for p in s.predictions])
    mean = stacked.mean(dim=0).clamp(0.0, 1.0)
    return mean.to(s.predictions[0].dtype)


def _first_argmax(values) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def mp_estimate(s: SampleSet) -> torch.Tensor:
    """The sample with the highest prior log-density; ties go to the lowest index."""
    s._require_nonempty()
    return s.predictions[_first_argmax(s.log_densities)]


def mp_mode(x: torch.Tensor, model: ProbabilisticEnhancer):
    """Decode at the prior means, the exact density maximizer.

    Returns ``(prediction, latent)`` for a batch ``x``.
    """
    return PriorSampler(model, x).mode()


def quality_select(s: SampleSet, q: Callable[[torch.Tensor], float]) -> torch.Tensor:
    """The sample maximizing the quality score ``q``; ties go to the lowest index."""
    s._require_nonempty()
    scores = []
    for i, p in enumerate(s.predictions):
        v = float(q(p))
        if not math.isfinite(v):
            raise ValueError(f"quality function returned {v} for sample {i}")
        scores.append(v)
    return s.predictions[_first_argmax(scores)]
