"""Ambiguous reference generation and synthetic underwater degradation.

Images are float arrays in [0, 1] with the channel axis at -3, i.e. (3, H, W)
or (B, 3, H, W).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AdjustmentSpec:
    method: str  # contrast | saturation | gamma
    alpha_over: float
    alpha_under: float

    def __post_init__(self):
        if self.method in ("contrast", "saturation"):
            if not self.alpha_under <= 0.0 <= self.alpha_over:
                raise ValueError(
                    f"{self.method}: need alpha_under <= 0 <= alpha_over, "
                    f"got {self.alpha_under}, {self.alpha_over}"
                )
        elif self.method == "gamma":
            if not 0.0 < self.alpha_over <= 1.0 <= self.alpha_under:
                raise ValueError(
                    f"gamma: need 0 < gamma_over <= 1 <= gamma_under, "
                    f"got {self.alpha_over}, {self.alpha_under}"
                )
        else:
            raise ValueError(f"unknown adjustment method {self.method!r}")

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_SPECS = (
    AdjustmentSpec("contrast", 0.25, -0.25),
    AdjustmentSpec("saturation", 0.3, -0.3),
    AdjustmentSpec("gamma", 0.7, 1.3),
)


def contrast_adjust(x, alpha: float, clip: bool = True) -> np.ndarray:
    """``y = (x - m) * alpha + x`` with ``m`` the spatial mean of each channel."""
    x = np.asarray(x, dtype=np.float64)
    m = x.mean(axis=(-2, -1), keepdims=True)
    y = (x - m) * alpha + x
    return np.clip(y, 0.0, 1.0) if clip else y


def saturation_adjust(x, alpha_scale: float, clip: bool = True) -> np.ndarray:
    """Scale each pixel's deviation from its own channel mean (its gray level)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 3 or x.shape[-3] != 3:
        raise ValueError(f"saturation adjustment needs 3 channels, got shape {x.shape}")
    m = x.mean(axis=-3, keepdims=True)
    # (v + v + v) / 3 need not equal v in floating point; gray pixels stay exact
    gray = np.ptp(x, axis=-3, keepdims=True) == 0
    dev = np.where(gray, 0.0, x - m)
    y = dev * alpha_scale + x
    return np.clip(y, 0.0, 1.0) if clip else y


def gamma_correct(x, gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    x = np.asarray(x, dtype=np.float64)
    return np.power(x, gamma)


ADJUSTERS = {
    "contrast": contrast_adjust,
    "saturation": saturation_adjust,
    "gamma": gamma_correct,
}


def luminance(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.tensordot(LUMA, np.moveaxis(x, -3, 0), axes=1)


def default_selection_score(candidate, original_ref=None, raw=None) -> float:
    """Luminance contrast minus ten times the fraction of clipped values."""
    candidate = np.asarray(candidate, dtype=np.float64)
    clipped = np.mean((candidate <= 0.0) | (candidate >= 1.0))
    return float(luminance(candidate).std() - 10.0 * clipped)


SelectionScore = Callable[[np.ndarray, np.ndarray, np.ndarray], float]


def build_reference_set(raw, original_ref, specs=DEFAULT_SPECS,
                        score: SelectionScore = default_selection_score,
                        return_choices: bool = False):
    """Original reference plus the better of over/under variants per method.

    The first element is ``original_ref`` itself. With ``return_choices`` a
    list of dicts describing each selected variant is returned as well.
    """
    original_ref = np.asarray(original_ref)
    methods = [s.method for s in specs]
    missing = {"contrast", "saturation", "gamma"} - set(methods)
    if missing:
        raise ValueError(f"adjustment specs missing methods: {sorted(missing)}")
    refs = [original_ref]
    choices = []
    for spec in specs:
        adjust = ADJUSTERS[spec.method]
        over = adjust(original_ref, spec.alpha_over)
        under = adjust(original_ref, spec.alpha_under)
        s_over = score(over, original_ref, raw)
        s_under = score(under, original_ref, raw)
        # ties go to the over variant
        if s_under > s_over:
            refs.append(under)
            choices.append({**spec.to_dict(), "chosen": "under", "alpha": spec.alpha_under})
        else:
            refs.append(over)
            choices.append({**spec.to_dict(), "chosen": "over", "alpha": spec.alpha_over})
    if return_choices:
        return refs, choices
    return refs


def synth_degrade(clean, seed) -> np.ndarray:
    """Apply a seeded blue-green cast, contrast loss and darkening to a clean image."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {clean.shape}")
    rng = np.random.default_rng(seed)
    gains = np.array([rng.uniform(0.35, 0.6), rng.uniform(0.8, 0.95), rng.uniform(0.85, 1.0)])
    contrast = rng.uniform(0.55, 0.8)
    brightness = rng.uniform(0.75, 0.9)
    veil = np.array([0.0, rng.uniform(0.05, 0.12), rng.uniform(0.1, 0.18)])

    y = clean * gains[:, None, None]
    m = y.mean(axis=(1, 2), keepdims=True)
    y = (m + (y - m) * contrast) * brightness + veil[:, None, None]
    # the cast must leave red darker than blue on average
    gap = y[0].mean() - y[2].mean()
    if gap >= 0:
        y[2] += gap + 0.02
    y = np.clip(y, 0.0, 1.0)

    lum_in = luminance(clean).std()
    lum_out = luminance(y).std()
    if lum_in > 0 and lum_out >= lum_in:
        m = y.mean(axis=(1, 2), keepdims=True)
        y = m + (y - m) * (0.9 * lum_in / lum_out)
    return y


def synth_clean(height: int, width: int, seed) -> np.ndarray:
    """Seeded smooth colorful pattern: gradients, sinusoids and soft blobs."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    img = np.empty((3, height, width))
    for c in range(3):
        g = rng.uniform(-0.4, 0.4) * xx + rng.uniform(-0.4, 0.4) * yy
        fx, fy = rng.uniform(1, 5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        g += rng.uniform(0.1, 0.3) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        for _ in range(3):
            cx, cy = rng.uniform(0, 1, size=2)
            r = rng.uniform(0.08, 0.25)
            g += rng.uniform(-0.4, 0.4) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
        img[c] = g
    img -= img.min(axis=(1, 2), keepdims=True)
    img /= img.max(axis=(1, 2), keepdims=True) + 1e-12
    lo = rng.uniform(0.0, 0.2, size=(3, 1, 1))
    hi = rng.uniform(0.75, 1.0, size=(3, 1, 1))
    return lo + (hi - lo) * img


def synth_pairs(count: int, size: int, seed: int = 0):
    """``count`` (degraded, clean) pairs of shape (3, size, size)."""
    ss = np.random.SeedSequence(seed)
    pairs = []
    for child in ss.spawn(count):
        clean_seed, degrade_seed = child.spawn(2)
        clean = synth_clean(size, size, clean_seed)
        pairs.append((synth_degrade(clean, degrade_seed), clean))
    return pairs
