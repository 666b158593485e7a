"""Training loop, paired datasets and checkpoints."""

from __future__ import annotations

import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from probenhance.losses import LossError, LossWeights, RandomConvFeatures, total_loss
from probenhance.network import NetworkConfig, ProbabilisticEnhancer, build_model, standard_noise

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "probenhance-ckpt/1"


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    patch_size: int = 256
    iterations: int = 1000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rotate90s: bool = True
    hflip: bool = True
    vflip: bool = True
    reference_policy: str = "uniform_random"  # or original_only
    perceptual_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.reference_policy not in ("uniform_random", "original_only"):
            raise ValueError(f"unknown reference_policy {self.reference_policy!r}")

    def validate_for(self, net_cfg: NetworkConfig):
        if self.patch_size % net_cfg.size_multiple:
            raise ValueError(
                f"patch_size {self.patch_size} not divisible by {net_cfg.size_multiple}"
            )


class PairedDataset:
    """In-memory raw images, each with k >= 1 reference images of the same size.

    Items are ``(raw, [ref_1, ..., ref_k])`` as float32 arrays of shape (3, H, W).
    """

    def __init__(self, items: Sequence[tuple[np.ndarray, Sequence[np.ndarray]]], ids=None):
        self.items = []
        for raw, refs in items:
            raw = np.asarray(raw, dtype=np.float32)
            refs = [np.asarray(r, dtype=np.float32) for r in refs]
            if not refs:
                raise ValueError("every raw image needs at least one reference")
            for r in refs:
                if r.shape != raw.shape:
                    raise ValueError(f"reference shape {r.shape} != raw shape {raw.shape}")
            self.items.append((raw, refs))
        self.ids = list(ids) if ids is not None else [str(i) for i in range(len(self.items))]

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def reference(self, i: int, k: int) -> np.ndarray:
        return self.items[i][1][k]

    def num_references(self, i: int) -> int:
        return len(self.items[i][1])


@dataclass
class TrainingRecord:
    seed: int
    steps: list = field(default_factory=list)
    wall_clock: float = 0.0

    def losses(self, key: str = "L") -> np.ndarray:
        return np.array([s[key] for s in self.steps])

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for s in self.steps:
                fh.write(json.dumps(s) + "\n")

    @staticmethod
    def read_jsonl(path) -> list:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]


def augment(raw: np.ndarray, ref: np.ndarray, rng: np.random.Generator, cfg: TrainConfig):
    """Apply one random geometric transform identically to raw and reference."""
    if cfg.rotate90s:
        k = int(rng.integers(4))
        raw = np.rot90(raw, k, axes=(1, 2))
        ref = np.rot90(ref, k, axes=(1, 2))
    if cfg.hflip and rng.random() < 0.5:
        raw = raw[:, :, ::-1]
        ref = ref[:, :, ::-1]
    if cfg.vflip and rng.random() < 0.5:
        raw = raw[:, ::-1, :]
        ref = ref[:, ::-1, :]
    return np.ascontiguousarray(raw), np.ascontiguousarray(ref)


def random_crop(raw, ref, size, rng):
    _, h, w = raw.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than patch size {size}")
    top = int(rng.integers(h - size + 1))
    left = int(rng.integers(w - size + 1))
    sl = (slice(None), slice(top, top + size), slice(left, left + size))
    return raw[sl], ref[sl]


def choose_reference(dataset: PairedDataset, i: int, rng, policy: str) -> int:
    if policy == "original_only":
        return 0
    return int(rng.integers(dataset.num_references(i)))


def make_batch(dataset: PairedDataset, rng: np.random.Generator, cfg: TrainConfig):
    idx = rng.integers(len(dataset), size=cfg.batch_size)
    raws, refs = [], []
    for i in idx:
        i = int(i)
        k = choose_reference(dataset, i, rng, cfg.reference_policy)
        raw, ref = random_crop(dataset[i][0], dataset.reference(i, k), cfg.patch_size, rng)
        raw, ref = augment(raw, ref, rng, cfg)
        raws.append(raw)
        refs.append(ref)
    return torch.from_numpy(np.stack(raws)), torch.from_numpy(np.stack(refs))


def train(dataset: PairedDataset, net_cfg: NetworkConfig = NetworkConfig(),
          cfg: TrainConfig = TrainConfig(), weights: LossWeights = LossWeights(),
          extractor=None, model: ProbabilisticEnhancer | None = None, log_every: int = 0):
    """Minimize the variational objective. Returns ``(model, record)``.

    Everything random (batches, crops, augmentation, reference choice, latent
    noise, initialization) derives from ``cfg.seed``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    cfg.validate_for(net_cfg)
    if model is None:
        model = build_model(net_cfg, seed=cfg.seed)
    if extractor is None and weights.perceptual > 0:
        extractor = RandomConvFeatures(seed=cfg.perceptual_seed)
    rng = np.random.default_rng(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps,
    )
    record = TrainingRecord(seed=cfg.seed)
    start = time.perf_counter()
    model.train()
    for step in range(1, cfg.iterations + 1):
        x, y = make_batch(dataset, rng, cfg)
        na, nb = standard_noise(x.shape[0], net_cfg.latent_dim, noise_gen)
        try:
            pred, prior, posterior = model.forward_train(x, y, na, nb)
        except ValueError as err:
            # NaN/inf features surface as invalid distribution scales
            raise TrainingError(f"step {step}: forward pass failed: {err}") from err
        try:
            loss, parts = total_loss(pred, y, prior, posterior, weights, extractor)
        except LossError as err:
            raise TrainingError(f"step {step}: {err}") from err
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        record.steps.append({"step": step, **{k: parts[k] for k in ("L", "L_e", "L_m", "L_s")}})
        if log_every and step % log_every == 0:
            log.info("step %d L=%.5f L_e=%.5f L_m=%.5f L_s=%.5f", step,
                     parts["L"], parts["L_e"], parts["L_m"], parts["L_s"])
    record.wall_clock = time.perf_counter() - start
    model.eval()
    return model, record


def save_checkpoint(model: ProbabilisticEnhancer, path):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": json.dumps(model.cfg.to_dict(), sort_keys=True),
        "state": model.state_dict(),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expect_config: NetworkConfig | None = None) -> ProbabilisticEnhancer:
    """Restore a model. Raises ``CheckpointError`` on any inconsistency."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(io.BytesIO(path.read_bytes()), map_location="cpu", weights_only=True)
    except Exception as err:
        raise CheckpointError(f"unreadable checkpoint {path}: {err}") from err
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        found = payload.get("version") if isinstance(payload, dict) else None
        raise CheckpointError(f"checkpoint version {found!r}, expected {CHECKPOINT_VERSION!r}")
    try:
        cfg = NetworkConfig(**json.loads(payload["config"]))
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"bad embedded config: {err}") from err
    if expect_config is not None and expect_config != cfg:
        raise CheckpointError(f"checkpoint config {cfg} conflicts with requested {expect_config}")
    model = ProbabilisticEnhancer(cfg)
    try:
        model.load_state_dict(payload["state"], strict=True)
    except (KeyError, RuntimeError) as err:
        raise CheckpointError(f"parameter mismatch: {err}") from err
    model.eval()
    return model


def finite_record(record: TrainingRecord) -> bool:
    return all(math.isfinite(s[k]) for s in record.steps for k in ("L", "L_e", "L_m", "L_s"))
