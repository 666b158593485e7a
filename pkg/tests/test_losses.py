import numpy as np
import pytest
import torch

from probenhance.distributions import DiagonalGaussian
from probenhance.losses import (
    ExtractorUnavailable,
    LossError,
    LossWeights,
    RandomConvFeatures,
    combine,
    mse_loss,
    perceptual_loss,
    total_loss,
    vgg16_extractor,
)
from probenhance.network import EnhancementDistribution


def dist(mean, scale):
    return DiagonalGaussian(torch.as_tensor(mean, dtype=torch.float64),
                            torch.as_tensor(scale, dtype=torch.float64))


def enh(seed, batch=2, n=3):
    rng = np.random.default_rng(seed)
    return EnhancementDistribution(
        dist(rng.normal(size=(batch, n)), rng.uniform(0.3, 2, size=(batch, n))),
        dist(rng.normal(size=(batch, n)), rng.uniform(0.3, 2, size=(batch, n))),
    )


def identity(x):
    return [x]


def test_mse_examples():
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    assert mse_loss(x, x).item() == 0
    assert mse_loss(x + 0.1, x).item() == pytest.approx(0.01, abs=1e-12)
    a = np.random.default_rng(0).random((2, 3, 5, 4))
    b = np.random.default_rng(1).random((2, 3, 5, 4))
    oracle = sum((u - v) ** 2 for u, v in zip(a.ravel(), b.ravel())) / a.size
    assert mse_loss(torch.from_numpy(a), torch.from_numpy(b)).item() == pytest.approx(oracle, abs=1e-7)
    with pytest.raises(ValueError):
        mse_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


def test_perceptual_examples():
    phi = RandomConvFeatures(seed=0)
    x = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(0))
    y = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(1))
    assert perceptual_loss(x, x, phi).item() == 0
    assert perceptual_loss(x, y, identity).item() == pytest.approx(mse_loss(x, y).item(), rel=1e-6)
    again = perceptual_loss(x, y, RandomConvFeatures(seed=0)).item()
    assert perceptual_loss(x, y, phi).item() == again
    assert again > 0


def test_perceptual_extractor_is_frozen():
    phi = RandomConvFeatures(seed=0)
    assert not any(p.requires_grad for p in phi.parameters())
    assert len(phi(torch.rand(1, 3, 16, 16))) == 3
    assert [f.shape[1] for f in phi(torch.rand(1, 3, 16, 16))] == [16, 32, 64]


def test_missing_extractor_errors():
    with pytest.raises(ExtractorUnavailable, match="RandomConvFeatures"):
        perceptual_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4), None)
    with pytest.raises(ExtractorUnavailable, match="random"):
        vgg16_extractor("/nonexistent/vgg16.pth")


def test_total_loss_vanishes():
    d = enh(0)
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    loss, parts = total_loss(x, x, d, d, LossWeights(), RandomConvFeatures(seed=0).double())
    assert loss.item() == 0
    assert parts["L_e"] == parts["L_m"] == parts["L_s"] == 0


def test_total_loss_beta_zero_is_enhancement_loss():
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    y = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    loss, parts = total_loss(x, y, enh(0), enh(1), LossWeights(1.0, 0.0), identity)
    assert loss.item() == parts["L_e"]
    assert parts["L_m"] > 0


def test_weighted_sum_arithmetic():
    total, l_e = combine(0.04, 0.01, 0.2, 0.3, LossWeights(1.0, 1.0))
    assert total == pytest.approx(0.55, abs=1e-15)
    assert l_e == pytest.approx(0.05)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(1.0, float("nan"))


def test_nan_part_is_named():
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    y = x.clone()
    y[0, 0, 0, 0] = float("nan")
    with pytest.raises(LossError, match="L_mse"):
        total_loss(x, y, enh(0, 1), enh(1, 1), LossWeights(0.0, 1.0))


def test_parts_nonnegative_and_sum_exact():
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    y = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    w = LossWeights(0.5, 2.0)
    loss, parts = total_loss(x, y, enh(2), enh(3), w, RandomConvFeatures(seed=0).double())
    assert all(v >= 0 for v in parts.values())
    assert parts["L_e"] == pytest.approx(parts["L_mse"] + 0.5 * parts["L_perc"], rel=1e-15)
    assert loss.item() == pytest.approx(parts["L_e"] + 2.0 * (parts["L_m"] + parts["L_s"]), rel=1e-15)


def test_batch_permutation_invariance():
    x = torch.rand(3, 3, 16, 16, dtype=torch.float64)
    y = torch.rand(3, 3, 16, 16, dtype=torch.float64)
    p, q = enh(4, 3), enh(5, 3)
    perm = torch.tensor([2, 0, 1])

    def permute(d):
        return EnhancementDistribution(*(DiagonalGaussian(g.mean[perm], g.scale[perm]) for g in d))

    phi = RandomConvFeatures(seed=0).double()
    a, _ = total_loss(x, y, p, q, LossWeights(), phi)
    b, _ = total_loss(x[perm], y[perm], permute(p), permute(q), LossWeights(), phi)
    assert a.item() == pytest.approx(b.item(), rel=1e-12)


def test_total_loss_gradients_match_finite_differences():
    g = torch.Generator().manual_seed(0)
    x = torch.rand(2, 3, 8, 8, generator=g, dtype=torch.float64, requires_grad=True)
    y = torch.rand(2, 3, 8, 8, generator=g, dtype=torch.float64)
    raw = [torch.randn(2, 3, generator=g, dtype=torch.float64, requires_grad=True) for _ in range(8)]
    phi = RandomConvFeatures(seed=0).double()

    def f(x, *r):
        sp = torch.nn.functional.softplus
        prior = EnhancementDistribution(DiagonalGaussian(r[0], sp(r[1])), DiagonalGaussian(r[2], sp(r[3])))
        post = EnhancementDistribution(DiagonalGaussian(r[4], sp(r[5])), DiagonalGaussian(r[6], sp(r[7])))
        return total_loss(x, y, prior, post, LossWeights(), phi)[0]

    f(x, *raw).backward()
    eps = 1e-6
    tensors = [x] + raw
    rng = np.random.default_rng(0)
    for _ in range(30):
        k = int(rng.integers(len(tensors)))
        t = tensors[k]
        idx = tuple(int(rng.integers(s)) for s in t.shape)
        vals = [v.detach().clone() for v in tensors]
        vals[k][idx] += eps
        up = f(*vals).item()
        vals[k][idx] -= 2 * eps
        down = f(*vals).item()
        fd = (up - down) / (2 * eps)
        an = t.grad[idx].item()
        assert abs(an - fd) / max(abs(an), abs(fd), 1e-6) < 1e-4
