"""Probabilistic image enhancement: learn a distribution over enhanced images
with a conditional VAE injected through PAdaIN, then reduce samples by consensus."""

from probenhance.consensus import SampleSet, draw_samples, mc_estimate, mp_estimate, mp_mode, quality_select
from probenhance.distributions import DiagonalGaussian, LatentSample, kl_divergence, log_density, sample
from probenhance.losses import LossWeights, total_loss
from probenhance.network import NetworkConfig, ProbabilisticEnhancer, build_model
from probenhance.padain import channel_stats, padain
from probenhance.trainer import PairedDataset, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
