"""Diagonal Gaussian latents: reparameterized sampling, log-density and KL."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Gaussian with independent coordinates over the last tensor axis.

    ``mean`` and ``scale`` may carry leading batch dimensions; the latent
    dimension N is always the last axis.
    """

    mean: torch.Tensor
    scale: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.scale.shape:
            raise ValueError(
                f"mean shape {tuple(self.mean.shape)} != scale shape {tuple(self.scale.shape)}"
            )
        if self.mean.dim() == 0 or self.mean.shape[-1] < 1:
            raise ValueError("latent dimension must be at least 1")
        if not bool(torch.all(self.scale > 0)):
            raise ValueError("scale must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @classmethod
    def from_values(cls, mean, scale, dtype=torch.float64) -> "DiagonalGaussian":
        return cls(torch.as_tensor(mean, dtype=dtype), torch.as_tensor(scale, dtype=dtype))


@dataclass(frozen=True)
class LatentSample:
    """A draw ``z = (a, b)``: ``a`` from the mean-statistic Gaussian, ``b`` from the std one."""

    a: torch.Tensor
    b: torch.Tensor
    log_density: torch.Tensor

    def __post_init__(self):
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must share a shape")
        if not bool(torch.all(torch.isfinite(self.log_density))):
            raise ValueError("log_density must be finite")


def _check_dims(dist: DiagonalGaussian, other: torch.Tensor, what: str):
    if other.shape[-1] != dist.dim:
        raise ValueError(f"{what} has dimension {other.shape[-1]}, distribution has {dist.dim}")


def sample(dist: DiagonalGaussian, noise) -> torch.Tensor:
    """Reparameterized draw ``mean + scale * noise``."""
    noise = torch.as_tensor(noise, dtype=dist.mean.dtype, device=dist.mean.device)
    _check_dims(dist, noise, "noise")
    return dist.mean + dist.scale * noise


def log_density(dist: DiagonalGaussian, point) -> torch.Tensor:
    point = torch.as_tensor(point, dtype=dist.mean.dtype, device=dist.mean.device)
    _check_dims(dist, point, "point")
    z = (point - dist.mean) / dist.scale
    return torch.sum(-0.5 * LOG_2PI - torch.log(dist.scale) - 0.5 * z * z, dim=-1)


def kl_divergence(p: DiagonalGaussian, q: DiagonalGaussian) -> torch.Tensor:
    """KL(p || q) summed over the latent axis, in closed form."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    var_ratio_term = (p.scale**2 + (p.mean - q.mean) ** 2) / (2.0 * q.scale**2)
    kl = torch.log(q.scale) - torch.log(p.scale) + var_ratio_term - 0.5
    return torch.sum(kl, dim=-1)
