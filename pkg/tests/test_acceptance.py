"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy import integrate, stats
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from probenhance.cli import main
from probenhance.consensus import SampleSet, mc_estimate, mp_estimate
from probenhance.datagen import contrast_adjust, gamma_correct, luminance, saturation_adjust
from probenhance.distributions import DiagonalGaussian, kl_divergence, log_density
from probenhance.experiments import mean_pairwise_rmse, sampling_times_study, toy_test_pairs
from probenhance.gradcheck import reduced_model_check
from probenhance.imageio import list_images, load_image
from probenhance.metrics import ciede2000, delta_e_2000, psnr, ssim
from probenhance.network import PriorSampler, standard_noise
from probenhance.padain import channel_stats, padain
from probenhance.trainer import finite_record, load_checkpoint, save_checkpoint

from sharma_vectors import SHARMA_PAIRS


def quad_kl(mp, sp, mq, sq):
    p, q = stats.norm(mp, sp), stats.norm(mq, sq)
    f = lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x))  # noqa: E731
    lo, hi = mp - 30 * sp, mp + 30 * sp
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=500, points=[mp])
    return val


def test_c01_math_kernels(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    kl_err = 0.0
    for _ in range(20):
        mp, mq = rng.uniform(-2, 2, 2)
        sp, sq = rng.uniform(0.3, 3.0, 2)
        ours = kl_divergence(DiagonalGaussian.from_values([mp], [sp]),
                             DiagonalGaussian.from_values([mq], [sq])).item()
        kl_err = max(kl_err, abs(ours - quad_kl(mp, sp, mq, sq)))
    ld_err = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 9))
        mean, scale = rng.normal(size=n), rng.uniform(0.2, 3.0, n)
        point = mean + scale * rng.normal(size=n) * 2
        ours = log_density(DiagonalGaussian.from_values(mean, scale), torch.tensor(point)).item()
        oracle = float(np.sum(np.log(stats.norm.pdf(point, mean, scale))))
        ld_err = max(ld_err, abs(ours - oracle))
    elapsed = time.perf_counter() - start
    ok = kl_err < 1e-6 and ld_err < 1e-9 and elapsed < 60
    acceptance(1, ok, f"kl max err {kl_err:.2e}, log_density max err {ld_err:.2e}, {elapsed:.1f}s")


def test_c02_padain_identity(acceptance):
    start = time.perf_counter()
    g = torch.Generator().manual_seed(202)
    id_err, stat_err = 0.0, 0.0
    for _ in range(100):
        b, c = (int(v) for v in torch.randint(1, 5, (2,), generator=g))
        h, w = (int(v) for v in torch.randint(4, 33, (2,), generator=g))
        loc = torch.randn(b, c, 1, 1, generator=g) * 3
        spread = torch.rand(b, c, 1, 1, generator=g) * 4 + 0.1
        x = loc + spread * torch.randn(b, c, h, w, generator=g)
        mu, sigma = channel_stats(x)
        id_err = max(id_err, (padain(x, mu, sigma) - x).abs().max().item())

        a = torch.randn(b, c, generator=g) * 2
        s = torch.rand(b, c, generator=g) * 3 + 0.1
        out_mu, out_sigma = channel_stats(padain(x, a, s), eps=0.0)
        stat_err = max(stat_err, (out_mu - a).abs().max().item(), (out_sigma - s).abs().max().item())
    elapsed = time.perf_counter() - start
    ok = id_err < 1e-5 and stat_err < 1e-3 and elapsed < 60
    acceptance(2, ok, f"identity max err {id_err:.2e}, statistics max err {stat_err:.2e}, {elapsed:.1f}s")


def test_c03_gradient_check(acceptance):
    start = time.perf_counter()
    entries = reduced_model_check(count=20, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(e.rel_error for e in entries)
    groups = {e.name.split(".")[0] for e in entries}
    covered = {"posterior_head", "prior_head", "broadcast_a", "broadcast_b"} <= groups
    ok = len(entries) == 20 and worst < 1e-3 and covered and elapsed < 300
    acceptance(3, ok, f"20 entries, max relative error {worst:.2e}, heads covered {covered}, {elapsed:.1f}s")


@pytest.mark.slow
def test_c04_toy_convergence(toy_run, acceptance):
    _, record, elapsed = toy_run
    total = record.losses("L")
    first, last = total[:10].mean(), total[-10:].mean()
    finite = finite_record(record) and np.isfinite(record.losses("L_m")).all() \
        and np.isfinite(record.losses("L_s")).all()
    ok = len(total) == 200 and last < 0.5 * first and finite and elapsed < 600
    acceptance(4, ok, f"loss {first:.4f} -> {last:.4f} (ratio {last / first:.3f}), "
                      f"finite {finite}, {elapsed:.1f}s")


@pytest.mark.slow
def test_c05_diversity(toy_run, acceptance):
    model, _, _ = toy_run
    gen = torch.Generator().manual_seed(505)
    rmses, mode_is_max = [], True
    for raw, _ in toy_test_pairs():
        sampler = PriorSampler(model, torch.as_tensor(raw, dtype=torch.float32)[None])
        draws = [sampler.draw_random(gen) for _ in range(8)]
        rmses.append(mean_pairwise_rmse([p[0] for p, _ in draws]))
        _, z_mode = sampler.mode()
        best_draw = max(float(z.log_density[0]) for _, z in draws)
        mode_is_max &= float(z_mode.log_density[0]) >= best_draw
    ok = min(rmses) > 1e-4 and mode_is_max
    acceptance(5, ok, f"min per-image mean pairwise RMSE {min(rmses):.4f}, mode density is max {mode_is_max}")


@pytest.mark.slow
def test_c06_sampling_times(toy_run, acceptance):
    model, _, _ = toy_run
    start = time.perf_counter()
    res = sampling_times_study(model, toy_test_pairs(), (1, 4, 16, 20), repetitions=10, seed=606)
    elapsed = time.perf_counter() - start
    sp = res.std_psnr
    ratio = res.pixel_var[1] / res.pixel_var[16]
    ok = sp[20] < sp[1] and sp[20] <= sp[4] <= sp[1] and 8 <= ratio <= 32 and elapsed < 600
    acceptance(6, ok, f"std PSNR S=1 {sp[1]:.3f}, S=4 {sp[4]:.3f}, S=20 {sp[20]:.3f}; "
                      f"variance ratio S1/S16 {ratio:.1f}; {elapsed:.1f}s")


def test_c07_metrics(acceptance):
    lab1 = np.array([p[0] for p in SHARMA_PAIRS])
    lab2 = np.array([p[1] for p in SHARMA_PAIRS])
    want = np.array([p[2] for p in SHARMA_PAIRS])
    sharma_err = float(np.abs(ciede2000(lab1, lab2) - want).max())

    rng = np.random.default_rng(707)
    ssim_err = psnr_err = 0.0
    identities = True
    for _ in range(10):
        a = rng.random((3, 40, 48))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.2), a.shape), 0, 1)
        oracle = structural_similarity(luminance(a), luminance(b), gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False, data_range=1.0)
        ssim_err = max(ssim_err, abs(ssim(a, b) - oracle))
        psnr_err = max(psnr_err, abs(psnr(a, b) - peak_signal_noise_ratio(a, b, data_range=1.0)))
        identities &= ssim(a, a) == 1.0 and delta_e_2000(a, a) == 0.0
    ok = len(SHARMA_PAIRS) == 34 and sharma_err < 1e-4 and ssim_err < 1e-4 and psnr_err < 1e-6 and identities
    acceptance(7, ok, f"Sharma max err {sharma_err:.1e} over {len(SHARMA_PAIRS)} pairs, "
                      f"SSIM err {ssim_err:.1e}, PSNR err {psnr_err:.1e}, identities {identities}")


def test_c08_consensus(acceptance):
    g = torch.Generator().manual_seed(808)
    rng = np.random.default_rng(808)
    mc_exact = mp_member = mp_perm = tie_rule = True
    mc_perm_err = 0.0
    for _ in range(50):
        s = int(rng.integers(1, 9))
        k = torch.rand(3, 8, 8, generator=g)
        mc_exact &= torch.equal(mc_estimate(SampleSet([k.clone() for _ in range(s)], [0.0] * s)), k)

        preds = [torch.rand(3, 8, 8, generator=g) for _ in range(s)]
        dens = list(rng.normal(size=s))
        out = mp_estimate(SampleSet(preds, dens))
        mp_member &= any(out is p for p in preds)
        perm = rng.permutation(s)
        shuffled = SampleSet([preds[i] for i in perm], [dens[i] for i in perm])
        mp_perm &= torch.equal(mp_estimate(shuffled), out)
        mc_perm_err = max(mc_perm_err, (mc_estimate(shuffled) - mc_estimate(SampleSet(preds, dens)))
                          .abs().max().item())

        if s > 1:
            tied = [max(dens)] * s
            tie_rule &= mp_estimate(SampleSet(preds, tied)) is preds[0]
    ok = mc_exact and mp_member and mp_perm and tie_rule and mc_perm_err <= 1e-7
    acceptance(8, ok, f"mc identical exact {mc_exact}, mp member {mp_member}, mp permutation {mp_perm}, "
                      f"tie rule {tie_rule}, mc permutation err {mc_perm_err:.1e}")


PIPE_TRAIN = ["--set", "base_channels=8", "--set", "latent_dim=4", "--set", "depth=2",
              "--set", "patch_size=32", "--set", "log_every=0", "--iterations", "20", "--seed", "9"]


def run_pipeline(root: Path):
    codes = [
        main(["make-synthetic", str(root / "pairs"), "--count", "10", "--size", "32", "--seed", "9"]),
        main(["make-dataset", str(root / "pairs"), str(root / "ds")]),
        main(["train", str(root / "ds"), str(root / "run"), *PIPE_TRAIN]),
    ]
    ckpt, raw = str(root / "run" / "model.ckpt"), str(root / "pairs" / "raw")
    codes.append(main(["enhance", ckpt, raw, str(root / "out" / "samples"), "--mode", "samples", "--n", "5"]))
    for mode in ("mc", "mp", "mode"):
        codes.append(main(["enhance", ckpt, raw, str(root / "out" / mode), "--mode", mode, "--n", "5"]))
        codes.append(main(["evaluate", str(root / "out" / mode), str(root / "pairs" / "ref"),
                           "--out", str(root / f"report_{mode}.csv")]))
    return codes


def tree_bytes(root: Path):
    # effective_config.txt echoes absolute paths, so it is compared separately
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "effective_config.txt"}


def test_c09_pipeline(tmp_path, acceptance):
    codes_a = run_pipeline(tmp_path / "a")
    codes_b = run_pipeline(tmp_path / "b")
    a, b = tmp_path / "a", tmp_path / "b"

    refs = list_images(a / "ds" / "ref")
    originals = list_images(a / "pairs" / "ref")
    first_is_original = len(originals) == 10 and all(
        np.array_equal(load_image(a / "ds" / "ref" / f"{p.stem}_1.png"), load_image(p)) for p in originals)
    n_samples = len(list((a / "out" / "samples").glob("*_s*_logp*.png")))
    deterministic = tree_bytes(a) == tree_bytes(b)

    model = load_checkpoint(a / "run" / "model.ckpt")
    save_checkpoint(model, tmp_path / "again.ckpt")
    reloaded = load_checkpoint(tmp_path / "again.ckpt")
    params_equal = all(torch.equal(p, q) for p, q in
                       itertools.zip_longest(model.state_dict().values(), reloaded.state_dict().values()))
    x = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(0))
    na, nb = standard_noise(1, model.cfg.latent_dim, torch.Generator().manual_seed(1))
    with torch.no_grad():
        forward_equal = torch.equal(model.forward_sample(x, na, nb)[0], reloaded.forward_sample(x, na, nb)[0])

    ok = (all(c == 0 for c in codes_a + codes_b) and len(refs) == 40 and first_is_original
          and n_samples == 50 and deterministic and params_equal and forward_equal)
    acceptance(9, ok, f"exit codes ok {all(c == 0 for c in codes_a + codes_b)}, {len(refs)} references, "
                      f"ref_1 original {first_is_original}, {n_samples} samples, reruns identical "
                      f"{deterministic}, checkpoint round-trip {params_equal and forward_equal}")


def test_c10_datagen(acceptance):
    rng = np.random.default_rng(1010)
    mean_err = 0.0
    gray_exact = gamma_fixed = True
    for _ in range(50):
        x = rng.random((3, 24, 20))
        alpha = rng.uniform(-1.0, 1.0)
        y = contrast_adjust(x, alpha, clip=False)
        mean_err = max(mean_err, float(np.abs(y.mean(axis=(1, 2)) - x.mean(axis=(1, 2))).max()))

        gray = np.repeat(rng.random((1, 24, 20)), 3, axis=0)
        gray_exact &= np.array_equal(saturation_adjust(gray, rng.uniform(-1.0, 2.0)), gray)

        gamma = rng.uniform(0.1, 5.0)
        ends = gamma_correct(np.array([0.0, 1.0]), gamma)
        gamma_fixed &= ends[0] == 0.0 and ends[1] == 1.0
    ok = mean_err < 1e-6 and gray_exact and gamma_fixed
    acceptance(10, ok, f"contrast mean err {mean_err:.1e}, gray saturation bitwise {gray_exact}, "
                       f"gamma fixes 0 and 1 {gamma_fixed}")

