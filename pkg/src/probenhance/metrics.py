"""Full-reference quality metrics: PSNR, SSIM (luminance) and CIEDE2000.

Inputs are float arrays (or tensors) in [0, 1] with the channel axis at -3.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])

# sRGB (D65) -> XYZ
_RGB_TO_XYZ = np.array([
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
])
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])


def _array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _array(a), _array(b)
    _same_shape(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * math.log10(peak**2 / mse), PSNR_CAP))


def gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = (size - 1) / 2
    t = np.arange(size) - r
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    n = len(k)
    h, w = img.shape[-2:]
    rows = sum(k[i] * img[..., i : h - n + 1 + i, :] for i in range(n))
    return sum(k[i] * rows[..., :, i : w - n + 1 + i] for i in range(n))


def _to_luma(x: np.ndarray) -> np.ndarray:
    if x.ndim >= 3 and x.shape[-3] == 3:
        return np.tensordot(LUMA, np.moveaxis(x, -3, 0), axes=1)
    if x.ndim >= 3 and x.shape[-3] == 1:
        return x[..., 0, :, :]
    return x


def ssim(a, b, peak: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM on ITU-R 601 luminance, averaged over valid window positions."""
    a, b = _array(a), _array(b)
    _same_shape(a, b)
    ya, yb = _to_luma(a), _to_luma(b)
    if min(ya.shape[-2:]) < win_size:
        raise ValueError(f"image {ya.shape[-2:]} smaller than the {win_size}x{win_size} window")
    k = gaussian_kernel(win_size, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = _filter_valid(ya, k)
    mu_b = _filter_valid(yb, k)
    var_a = _filter_valid(ya * ya, k) - mu_a**2
    var_b = _filter_valid(yb * yb, k) - mu_b**2
    cov = _filter_valid(ya * yb, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def srgb_to_lab(x) -> np.ndarray:
    """sRGB in [0, 1] (channel axis -3) to CIE L*a*b* under D65."""
    x = _array(x)
    rgb = np.moveaxis(x, -3, -1)
    lin = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE_D65
    eps = (6 / 29) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6 / 29) ** 2) + 4 / 29)
    lab = np.stack([
        116 * f[..., 1] - 16,
        500 * (f[..., 0] - f[..., 1]),
        200 * (f[..., 1] - f[..., 2]),
    ], axis=-1)
    return np.moveaxis(lab, -1, -3)


def ciede2000(lab1, lab2) -> np.ndarray:
    """Per-color CIEDE2000 difference for Lab arrays with the channel axis last."""
    lab1, lab2 = _array(lab1), _array(lab2)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c_bar = (np.hypot(a1, b1) + np.hypot(a2, b2)) / 2
    c7 = c_bar**7
    g = 0.5 * (1 - np.sqrt(c7 / (c7 + 25.0**7)))
    a1p = (1 + g) * a1
    a2p = (1 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360

    dL = L2 - L1
    dC = c2p - c1p
    chroma_zero = (c1p * c2p) == 0
    dh = h2p - h1p
    dh = np.where(dh > 180, dh - 360, dh)
    dh = np.where(dh < -180, dh + 360, dh)
    dh = np.where(chroma_zero, 0.0, dh)
    dH = 2 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2)

    L_bar = (L1 + L2) / 2
    c_bar_p = (c1p + c2p) / 2
    h_sum = h1p + h2p
    h_bar = np.where(np.abs(h1p - h2p) > 180,
                     np.where(h_sum < 360, (h_sum + 360) / 2, (h_sum - 360) / 2),
                     h_sum / 2)
    h_bar = np.where(chroma_zero, h_sum, h_bar)

    t = (1 - 0.17 * np.cos(np.radians(h_bar - 30))
         + 0.24 * np.cos(np.radians(2 * h_bar))
         + 0.32 * np.cos(np.radians(3 * h_bar + 6))
         - 0.20 * np.cos(np.radians(4 * h_bar - 63)))
    d_theta = 30 * np.exp(-(((h_bar - 275) / 25) ** 2))
    c7p = c_bar_p**7
    r_c = 2 * np.sqrt(c7p / (c7p + 25.0**7))
    l50 = (L_bar - 50) ** 2
    s_l = 1 + 0.015 * l50 / np.sqrt(20 + l50)
    s_c = 1 + 0.045 * c_bar_p
    s_h = 1 + 0.015 * c_bar_p * t
    r_t = -np.sin(np.radians(2 * d_theta)) * r_c

    tl = dL / s_l
    tc = dC / s_c
    th = dH / s_h
    return np.sqrt(tl**2 + tc**2 + th**2 + r_t * tc * th)


def delta_e_2000(a, b) -> float:
    """Mean per-pixel CIEDE2000 between two sRGB images."""
    a, b = _array(a), _array(b)
    _same_shape(a, b)
    lab_a = np.moveaxis(srgb_to_lab(a), -3, -1)
    lab_b = np.moveaxis(srgb_to_lab(b), -3, -1)
    return float(np.mean(ciede2000(lab_a, lab_b)))


REPORT_COLUMNS = ("id", "psnr", "ssim", "delta_e")
REPORT_NOTES = (
    "ssim: single-scale, 11x11 gaussian window sigma 1.5, ITU-R 601 luminance",
    "psnr: peak 1.0 over all RGB values, capped at 100 dB",
    "delta_e: CIEDE2000 on sRGB(D65)->Lab, mean over pixels",
    "niqe: unavailable (requires a pretrained natural-scene-statistics model)",
)


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, image_id: str, pred, ref):
        self.rows.append({
            "id": image_id,
            "psnr": psnr(pred, ref),
            "ssim": ssim(pred, ref),
            "delta_e": delta_e_2000(pred, ref),
        })

    def means(self) -> dict:
        if not self.rows:
            return {k: float("nan") for k in REPORT_COLUMNS[1:]}
        return {k: float(np.mean([r[k] for r in self.rows])) for k in REPORT_COLUMNS[1:]}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            for note in REPORT_NOTES:
                fh.write(f"# {note}\n")
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in self.rows:
                writer.writerow([r["id"]] + [repr(r[k]) for k in REPORT_COLUMNS[1:]])
            m = self.means()
            writer.writerow(["mean"] + [repr(m[k]) for k in REPORT_COLUMNS[1:]])

    @staticmethod
    def read_csv(path) -> tuple[list, dict]:
        with open(path, newline="") as fh:
            lines = [line for line in fh if not line.startswith("#")]
        reader = csv.DictReader(lines)
        rows, mean = [], None
        for r in reader:
            vals = {k: float(r[k]) for k in REPORT_COLUMNS[1:]}
            if r["id"] == "mean":
                mean = vals
            else:
                rows.append({"id": r["id"], **vals})
        return rows, mean
