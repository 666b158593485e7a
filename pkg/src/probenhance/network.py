"""Two-branch conditional VAE enhancer.

A U-Net feature extractor (SE-ResNet block per stage) runs on the raw image
(prior branch) and on raw+reference (posterior branch). Each branch ends in a
distribution head that turns channel statistics into two diagonal Gaussians:
one over the mean statistic and one over the std statistic. A latent draw
``(a, b)`` is projected to the feature width and applied with PAdaIN to the
prior-branch features, then an output block produces the image.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from probenhance.distributions import DiagonalGaussian, LatentSample, log_density, sample
from probenhance.padain import channel_stats, padain

SCALE_FLOOR = 1e-6
LEAK = 0.2


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 64
    latent_dim: int = 20
    depth: int = 4
    se_reduction: int = 16
    output_range: str = "clamp01"  # or "sigmoid"

    def __post_init__(self):
        for name in ("base_channels", "latent_dim", "depth", "se_reduction"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.output_range not in ("clamp01", "sigmoid"):
            raise ValueError(f"unknown output_range {self.output_range!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def size_multiple(self) -> int:
        return 2**self.depth


class EnhancementDistribution(NamedTuple):
    mean_stat: DiagonalGaussian
    std_stat: DiagonalGaussian


class SEBlock(nn.Module):
    def __init__(self, channels, reduction=16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        w = x.mean(dim=(2, 3), keepdim=True)
        w = torch.sigmoid(self.fc2(F.leaky_relu(self.fc1(w), LEAK)))
        return x * w


class SEResBlock(nn.Module):
    """Two 3x3 convolutions, squeeze-and-excitation gate, identity shortcut."""

    def __init__(self, channels, reduction=16):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.se = SEBlock(channels, reduction)

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), LEAK)
        h = self.se(self.conv2(h))
        return F.leaky_relu(x + h, LEAK)


def stage_channels(base: int, level: int) -> int:
    return base * min(2**level, 8)


class UNetExtractor(nn.Module):
    """U-Net encoder/decoder returning ``base_channels`` features at input resolution."""

    def __init__(self, in_channels: int, cfg: NetworkConfig):
        super().__init__()
        self.in_channels = in_channels
        self.depth = cfg.depth
        base, red = cfg.base_channels, cfg.se_reduction
        self.stem = nn.Conv2d(in_channels, base, 3, padding=1)
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        for level in range(cfg.depth):
            ch = stage_channels(base, level)
            self.enc.append(SEResBlock(ch, red))
            self.down.append(nn.Conv2d(ch, stage_channels(base, level + 1), 3, stride=2, padding=1))
        self.bottleneck = SEResBlock(stage_channels(base, cfg.depth), red)
        self.up = nn.ModuleList()
        self.fuse = nn.ModuleList()
        self.dec = nn.ModuleList()
        for level in reversed(range(cfg.depth)):
            ch = stage_channels(base, level)
            self.up.append(nn.Conv2d(stage_channels(base, level + 1), ch, 1))
            self.fuse.append(nn.Conv2d(2 * ch, ch, 3, padding=1))
            self.dec.append(SEResBlock(ch, red))

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"extractor expects {self.in_channels} channels, got {x.shape[1]}")
        m = 2**self.depth
        if x.shape[2] % m or x.shape[3] % m:
            raise ValueError(
                f"spatial size {tuple(x.shape[2:])} not divisible by {m}; pad the input first"
            )
        h = F.leaky_relu(self.stem(x), LEAK)
        skips = []
        for enc, down in zip(self.enc, self.down):
            h = enc(h)
            skips.append(h)
            h = F.leaky_relu(down(h), LEAK)
        h = self.bottleneck(h)
        for up, fuse, dec, skip in zip(self.up, self.fuse, self.dec, reversed(skips)):
            h = up(F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False))
            h = F.leaky_relu(fuse(torch.cat([h, skip], dim=1)), LEAK)
            h = dec(h)
        return h


class DistributionHead(nn.Module):
    """Pr/Po block: channel mean/std vectors -> two N-dim diagonal Gaussians."""

    def __init__(self, channels: int, latent_dim: int):
        super().__init__()
        self.mu = nn.Conv2d(channels, latent_dim, 1)
        self.sigma = nn.Conv2d(channels, latent_dim, 1)
        self.m = nn.Conv2d(channels, latent_dim, 1)
        self.v = nn.Conv2d(channels, latent_dim, 1)

    def forward(self, f) -> EnhancementDistribution:
        mean, std = channel_stats(f)
        mean = mean[:, :, None, None]
        std = std[:, :, None, None]
        mean_stat = DiagonalGaussian(
            self.mu(mean).flatten(1), F.softplus(self.sigma(mean)).flatten(1) + SCALE_FLOOR
        )
        std_stat = DiagonalGaussian(
            self.m(std).flatten(1), F.softplus(self.v(std)).flatten(1) + SCALE_FLOOR
        )
        return EnhancementDistribution(mean_stat, std_stat)


class OutputBlock(nn.Module):
    def __init__(self, channels: int, output_range: str):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.proj = nn.Conv2d(channels, 3, 1)
        self.output_range = output_range

    def forward(self, h):
        h = F.leaky_relu(self.conv1(h), LEAK)
        h = F.leaky_relu(self.conv2(h), LEAK)
        out = self.proj(h)
        if self.output_range == "sigmoid":
            return torch.sigmoid(out)
        return out.clamp(0.0, 1.0)


class PriorContext(NamedTuple):
    """Prior-branch features and distribution for one input; reused across draws."""

    features: torch.Tensor
    prior: EnhancementDistribution
    pad: tuple  # (top, bottom, left, right) reflection padding to undo


def pad_to_multiple(x: torch.Tensor, multiple: int):
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    pad = (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
    if ph == 0 and pw == 0:
        return x, pad
    if ph >= h or pw >= w:
        # reflection needs pad < size; fall back to replicate for tiny inputs
        return F.pad(x, (pad[2], pad[3], pad[0], pad[1]), mode="replicate"), pad
    return F.pad(x, (pad[2], pad[3], pad[0], pad[1]), mode="reflect"), pad


def crop_padding(x: torch.Tensor, pad) -> torch.Tensor:
    top, bottom, left, right = pad
    h, w = x.shape[-2:]
    return x[..., top : h - bottom, left : w - right]


class ProbabilisticEnhancer(nn.Module):
    def __init__(self, cfg: NetworkConfig | None = None):
        super().__init__()
        self.cfg = cfg or NetworkConfig()
        c, n = self.cfg.base_channels, self.cfg.latent_dim
        self.prior_net = UNetExtractor(3, self.cfg)
        self.posterior_net = UNetExtractor(6, self.cfg)
        self.prior_head = DistributionHead(c, n)
        self.posterior_head = DistributionHead(c, n)
        self.broadcast_a = nn.Conv2d(n, c, 1)
        self.broadcast_b = nn.Conv2d(n, c, 1)
        self.output_block = OutputBlock(c, self.cfg.output_range)

    def extract_features(self, x_in: torch.Tensor, branch: str) -> torch.Tensor:
        if branch == "prior":
            return self.prior_net(x_in)
        if branch == "posterior":
            return self.posterior_net(x_in)
        raise ValueError(f"unknown branch {branch!r}")

    def distribution_head(self, f: torch.Tensor, head: str) -> EnhancementDistribution:
        if head == "Pr":
            return self.prior_head(f)
        if head == "Po":
            return self.posterior_head(f)
        raise ValueError(f"unknown head {head!r}")

    def decode(self, f_prior: torch.Tensor, z: LatentSample) -> torch.Tensor:
        n = self.cfg.latent_dim
        if z.a.shape[-1] != n or z.b.shape[-1] != n:
            raise ValueError(f"latent sample has dimension {z.a.shape[-1]}, model expects {n}")
        a = z.a.reshape(-1, n, 1, 1).to(f_prior.dtype)
        b = z.b.reshape(-1, n, 1, 1).to(f_prior.dtype)
        a_c = self.broadcast_a(a).flatten(1)
        b_c = self.broadcast_b(b).flatten(1)
        return self.output_block(padain(f_prior, a_c, b_c))

    def forward_train(self, x, y, noise_a, noise_b):
        """Posterior-driven prediction used during training.

        Returns ``(prediction, prior, posterior)``.
        """
        if x.shape != y.shape:
            raise ValueError(f"x shape {tuple(x.shape)} != y shape {tuple(y.shape)}")
        f_prior = self.extract_features(x, "prior")
        prior = self.distribution_head(f_prior, "Pr")
        f_post = self.extract_features(torch.cat([x, y], dim=1), "posterior")
        posterior = self.distribution_head(f_post, "Po")
        z = draw_latent(posterior, noise_a, noise_b)
        return self.decode(f_prior, z), prior, posterior

    def prior_context(self, x: torch.Tensor) -> PriorContext:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        xp, pad = pad_to_multiple(x, self.cfg.size_multiple)
        f = self.extract_features(xp, "prior")
        return PriorContext(f, self.distribution_head(f, "Pr"), pad)

    def forward_sample(self, x, noise_a, noise_b, context: PriorContext | None = None):
        """Draw from the prior and decode. Pass ``context`` to skip the extractor.

        Returns ``(prediction, z, context)``.
        """
        if context is None:
            context = self.prior_context(x)
        z = draw_latent(context.prior, noise_a, noise_b)
        pred = crop_padding(self.decode(context.features, z), context.pad)
        return pred, z, context

    def sampler(self, x) -> "PriorSampler":
        return PriorSampler(self, x)


def draw_latent(dist: EnhancementDistribution, noise_a, noise_b) -> LatentSample:
    a = sample(dist.mean_stat, noise_a)
    b = sample(dist.std_stat, noise_b)
    logp = log_density(dist.mean_stat, a) + log_density(dist.std_stat, b)
    return LatentSample(a, b, logp)


class PriorSampler:
    """Repeated prior draws for one input with the extractor evaluated once."""

    def __init__(self, model: ProbabilisticEnhancer, x: torch.Tensor):
        self.model = model
        with torch.no_grad():
            self.context = model.prior_context(x)
        self.batch = x.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.model.cfg.latent_dim

    def draw(self, noise_a, noise_b):
        with torch.no_grad():
            pred, z, _ = self.model.forward_sample(None, noise_a, noise_b, context=self.context)
        return pred, z

    def draw_random(self, generator: torch.Generator):
        na, nb = standard_noise(self.batch, self.latent_dim, generator)
        return self.draw(na, nb)

    def mode(self):
        zeros = torch.zeros(self.batch, self.latent_dim)
        return self.draw(zeros, zeros)


def standard_noise(batch: int, latent_dim: int, generator: torch.Generator | None = None,
                   dtype=torch.float32):
    na = torch.randn(batch, latent_dim, generator=generator, dtype=dtype)
    nb = torch.randn(batch, latent_dim, generator=generator, dtype=dtype)
    return na, nb


def build_model(cfg: NetworkConfig | None = None, seed: int = 0) -> ProbabilisticEnhancer:
    """Construct a model with a seeded, fan-in scaled uniform initialization."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ProbabilisticEnhancer(cfg)
    return model
