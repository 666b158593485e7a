"""Desk-scale experiments: toy training run and the sampling-times study."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from probenhance.consensus import SampleSet, mc_estimate
from probenhance.datagen import synth_pairs
from probenhance.metrics import psnr, ssim
from probenhance.network import NetworkConfig, PriorSampler
from probenhance.trainer import PairedDataset, TrainConfig, train

TOY_NET = NetworkConfig(base_channels=16, latent_dim=8)
TOY_TRAIN = TrainConfig(learning_rate=1e-4, batch_size=4, patch_size=64, iterations=200, seed=0)


def toy_data(count: int = 64, size: int = 64, seed: int = 0):
    """Synthetic (degraded, clean) pairs; ``seed`` separates train and test sets."""
    return synth_pairs(count, size, seed=seed)


def toy_dataset(count: int = 64, size: int = 64, seed: int = 0) -> PairedDataset:
    return PairedDataset([(raw, [clean]) for raw, clean in toy_data(count, size, seed)])


def train_toy(net_cfg: NetworkConfig = TOY_NET, cfg: TrainConfig = TOY_TRAIN, data_seed: int = 0):
    return train(toy_dataset(seed=data_seed), net_cfg, cfg)


def mean_pairwise_rmse(images) -> float:
    flat = torch.stack([i.flatten().double() for i in images])
    d = []
    for i in range(len(flat)):
        for j in range(i + 1, len(flat)):
            d.append(torch.sqrt(torch.mean((flat[i] - flat[j]) ** 2)).item())
    return float(np.mean(d))


@dataclass
class SamplingTimesResult:
    sample_counts: tuple
    std_psnr: dict  # S -> mean over images of std over repetitions
    std_ssim: dict
    pixel_var: dict  # S -> mean per-pixel variance of the MC image across repetitions


def sampling_times_study(model, pairs, sample_counts=(1, 2, 4, 8, 16, 20), repetitions: int = 10,
                         seed: int = 0) -> SamplingTimesResult:
    """Repeat the MC consensus ``repetitions`` times per image for each sample count.

    For each image and S, the spread of PSNR/SSIM (against the clean image)
    across repetitions is recorded, as is the per-pixel variance of the MC
    output itself.
    """
    std_psnr = {s: [] for s in sample_counts}
    std_ssim = {s: [] for s in sample_counts}
    pix_var = {s: [] for s in sample_counts}
    gen = torch.Generator().manual_seed(seed)
    for raw, clean in pairs:
        x = torch.as_tensor(np.asarray(raw), dtype=torch.float32)[None]
        sampler = PriorSampler(model, x)
        for s in sample_counts:
            outs = []
            for _ in range(repetitions):
                preds, logps = [], []
                for _ in range(s):
                    pred, z = sampler.draw_random(gen)
                    preds.append(pred[0])
                    logps.append(float(z.log_density[0]))
                outs.append(mc_estimate(SampleSet(preds, logps)))
            p = [psnr(o, clean) for o in outs]
            q = [ssim(o, clean) for o in outs]
            std_psnr[s].append(np.std(p))
            std_ssim[s].append(np.std(q))
            stack = torch.stack(outs).double()
            pix_var[s].append(stack.var(dim=0, unbiased=True).mean().item())
    return SamplingTimesResult(
        tuple(sample_counts),
        {s: float(np.mean(v)) for s, v in std_psnr.items()},
        {s: float(np.mean(v)) for s, v in std_ssim.items()},
        {s: float(np.mean(v)) for s, v in pix_var.items()},
    )


TEST_SEED = 1


def toy_test_pairs(count: int = 4, size: int = 64):
    """Held-out synthetic pairs, disjoint from the training seed."""
    return toy_data(count, size, seed=TEST_SEED)
