"""Command-line entry point: dataset building, training, enhancement, evaluation."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import torch

from probenhance import config as cfgmod
from probenhance.config import ConfigError
from probenhance.consensus import DEFAULT_SAMPLES, SampleSet, draw_samples, mc_estimate, mp_estimate, quality_select
from probenhance.datagen import AdjustmentSpec, build_reference_set, default_selection_score, synth_pairs
from probenhance.imageio import list_images, load_image, save_image, tile_grid
from probenhance.losses import ExtractorUnavailable, LossWeights, RandomConvFeatures, vgg16_extractor
from probenhance.metrics import MetricReport
from probenhance.network import NetworkConfig, PriorSampler
from probenhance.trainer import CheckpointError, PairedDataset, TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train

log = logging.getLogger("probenhance")

MANIFEST = "manifest.json"


class DataError(RuntimeError):
    pass


EXIT_CODES = {
    ConfigError: (2, "config"),
    DataError: (3, "data"),
    CheckpointError: (4, "checkpoint"),
    ExtractorUnavailable: (5, "training"),
    TrainingError: (5, "training"),
}


# -- make-dataset ---------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    contrast_over: float = 0.25
    contrast_under: float = -0.25
    saturation_over: float = 0.3
    saturation_under: float = -0.3
    gamma_over: float = 0.7
    gamma_under: float = 1.3

    def specs(self):
        return (
            AdjustmentSpec("contrast", self.contrast_over, self.contrast_under),
            AdjustmentSpec("saturation", self.saturation_over, self.saturation_under),
            AdjustmentSpec("gamma", self.gamma_over, self.gamma_under),
        )


@dataclass(frozen=True)
class TrainCliConfig:
    perceptual_weight: float = 1.0
    kl_weight: float = 1.0
    perceptual_extractor: str = "random"  # random | vgg16
    vgg16_weights: str = ""
    log_every: int = 50


@dataclass(frozen=True)
class EnhanceConfig:
    n: int = DEFAULT_SAMPLES
    mode: str = "samples"
    seed: int = 0
    grid: bool = True


def load_config(args, classes) -> dict:
    schema = {}
    for cls in classes:
        schema.update(cfgmod.defaults_of(cls))
    values = cfgmod.read_file(args.config) if args.config else {}
    values.update(cfgmod.parse_overrides(args.set))
    for key, value in getattr(args, "flag_overrides", {}).items():
        if value is not None:
            values[key] = str(value)
    resolved = cfgmod.resolve(values, schema)
    return resolved


def echo_config(resolved: dict, command: str, out_dir: Path | None = None):
    text = cfgmod.format_config(resolved)
    print(f"# effective config ({command})")
    print(text, end="")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "effective_config.txt").write_text(text)


def cmd_make_synthetic(args):
    out = Path(args.out_dir)
    for i, (raw, clean) in enumerate(synth_pairs(args.count, args.size, seed=args.seed)):
        name = f"img{i:04d}.png"
        save_image(out / "raw" / name, raw)
        save_image(out / "ref" / name, clean)
    print(f"wrote {args.count} pairs to {out}")
    return 0


def cmd_make_dataset(args):
    resolved = load_config(args, [DatasetConfig])
    dcfg = cfgmod.build(DatasetConfig, resolved)
    specs = dcfg.specs()
    in_dir, out = Path(args.in_dir), Path(args.out_dir)
    raw_dir, ref_dir = in_dir / "raw", in_dir / "ref"
    if not raw_dir.is_dir() or not ref_dir.is_dir():
        raise DataError(f"{in_dir} must contain raw/ and ref/ subdirectories")
    raws = list_images(raw_dir)
    if not raws:
        raise DataError(f"no input images in {raw_dir}")
    echo_config(resolved, "make-dataset", out)
    entries, skipped = [], []
    for raw_path in raws:
        ref_path = ref_dir / raw_path.name
        try:
            raw = load_image(raw_path)
            ref = load_image(ref_path)
            if raw.shape != ref.shape:
                raise ValueError(f"raw {raw.shape} and reference {ref.shape} differ in size")
        except (OSError, ValueError) as err:
            log.warning("skipping %s: %s", raw_path.name, err)
            skipped.append({"file": raw_path.name, "reason": str(err)})
            continue
        image_id = raw_path.stem
        # write the original reference from the decoded array so ref_1 is bitwise the label
        refs, choices = build_reference_set(raw, ref, specs, return_choices=True)
        save_image(out / "raw" / f"{image_id}.png", raw)
        files = []
        for k, r in enumerate(refs, 1):
            fname = f"ref/{image_id}_{k}.png"
            save_image(out / fname, r)
            files.append(fname)
        records = [{"file": files[0], "method": "original"}]
        records += [{"file": f, **c} for f, c in zip(files[1:], choices)]
        entries.append({"id": image_id, "raw": f"raw/{image_id}.png", "references": records})
    if not entries:
        raise DataError("no readable image pairs")
    manifest = {
        "ids": [e["id"] for e in entries],
        "specs": [s.to_dict() for s in specs],
        "entries": entries,
        "skipped": skipped,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(entries)} images x 4 references to {out} ({len(skipped)} skipped)")
    return 0


def load_dataset_dir(path) -> PairedDataset:
    path = Path(path)
    mf = path / MANIFEST
    if not mf.is_file():
        raise DataError(f"no {MANIFEST} in {path}")
    manifest = json.loads(mf.read_text())
    items, ids = [], []
    for e in manifest["entries"]:
        try:
            raw = load_image(path / e["raw"])
            refs = [load_image(path / r["file"]) for r in e["references"]]
        except OSError as err:
            raise DataError(f"cannot read dataset image for {e['id']}: {err}") from err
        items.append((raw, refs))
        ids.append(e["id"])
    if not items:
        raise DataError(f"dataset {path} is empty")
    return PairedDataset(items, ids)


# -- train ----------------------------------------------------------------

def make_extractor(tcfg: TrainCliConfig, seed: int):
    if tcfg.perceptual_extractor == "random":
        return RandomConvFeatures(seed=seed)
    if tcfg.perceptual_extractor == "vgg16":
        return vgg16_extractor(tcfg.vgg16_weights or None)
    raise ConfigError(f"unknown perceptual_extractor {tcfg.perceptual_extractor!r}")


def cmd_train(args):
    args.flag_overrides = {
        "iterations": args.iterations,
        "seed": args.seed,
        "reference_policy": args.reference_policy,
    }
    resolved = load_config(args, [NetworkConfig, TrainConfig, TrainCliConfig])
    net_cfg = cfgmod.build(NetworkConfig, resolved)
    train_cfg = cfgmod.build(TrainConfig, resolved)
    tcfg = cfgmod.build(TrainCliConfig, resolved)
    try:
        train_cfg.validate_for(net_cfg)
        weights = LossWeights(tcfg.perceptual_weight, tcfg.kl_weight)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    out = Path(args.out_dir)
    echo_config(resolved, "train", out)
    dataset = load_dataset_dir(args.dataset_dir)
    extractor = make_extractor(tcfg, train_cfg.perceptual_seed) if weights.perceptual > 0 else None
    torch.manual_seed(train_cfg.seed)
    try:
        model, record = train(dataset, net_cfg, train_cfg, weights, extractor,
                              log_every=tcfg.log_every)
    except ValueError as err:
        raise DataError(str(err)) from err
    save_checkpoint(model, out / "model.ckpt")
    record.to_jsonl(out / "train_record.jsonl")
    last = record.steps[-1] if record.steps else {}
    print(f"trained {len(record.steps)} steps in {record.wall_clock:.1f}s; final {last}")
    return 0


# -- enhance --------------------------------------------------------------

def enhance_inputs(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        files = list_images(path)
        if not files:
            raise DataError(f"no images in {path}")
        return files
    if not path.is_file():
        raise DataError(f"input not found: {path}")
    return [path]


def cmd_enhance(args):
    args.flag_overrides = {"n": args.n, "mode": args.mode, "seed": args.seed}
    resolved = load_config(args, [EnhanceConfig])
    ecfg = cfgmod.build(EnhanceConfig, resolved)
    if ecfg.n < 1:
        raise ConfigError("n must be >= 1")
    if ecfg.mode not in ("samples", "mc", "mp", "mode", "quality"):
        raise ConfigError(f"unknown mode {ecfg.mode!r}")
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out_dir)
    echo_config(resolved, "enhance", out)
    for path in enhance_inputs(args.input):
        x = torch.from_numpy(load_image(path))[None]
        stem = path.stem
        if ecfg.mode == "mode":
            pred, _ = PriorSampler(model, x).mode()
            save_image(out / f"{stem}.png", pred)
            continue
        gen = torch.Generator().manual_seed(ecfg.seed)
        samples = draw_samples(model, x, ecfg.n, gen, source=str(path))
        if ecfg.mode == "samples":
            write_samples(samples, out, stem, ecfg.grid)
        elif ecfg.mode == "mc":
            save_image(out / f"{stem}.png", mc_estimate(samples))
        elif ecfg.mode == "mp":
            save_image(out / f"{stem}.png", mp_estimate(samples))
        else:
            pick = quality_select(samples, lambda p: default_selection_score(p.numpy()))
            save_image(out / f"{stem}.png", pick)
    print(f"wrote {ecfg.mode} outputs to {out}")
    return 0


def write_samples(samples: SampleSet, out: Path, stem: str, grid: bool):
    names = []
    for i, (pred, logp) in enumerate(zip(samples.predictions, samples.log_densities)):
        name = f"{stem}_s{i:02d}_logp{logp:+.4f}.png"
        save_image(out / name, pred)
        names.append(name)
    if grid:
        save_image(out / f"{stem}_grid.png", tile_grid(samples.predictions))
        (out / f"{stem}_grid.json").write_text(json.dumps(
            {"tiles": names, "log_densities": samples.log_densities}, indent=2) + "\n")


# -- evaluate -------------------------------------------------------------

def cmd_evaluate(args):
    pred_dir, ref_dir = Path(args.pred_dir), Path(args.ref_dir)
    preds = {p.name: p for p in list_images(pred_dir)}
    refs = {p.name: p for p in list_images(ref_dir)}
    common = sorted(set(preds) & set(refs))
    unmatched = sorted(set(preds) ^ set(refs))
    for name in unmatched:
        log.warning("unmatched file excluded: %s", name)
    if not common:
        raise DataError("no matching filenames between prediction and reference dirs")
    report = MetricReport()
    for name in common:
        report.add(Path(name).stem, load_image(preds[name]), load_image(refs[name]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    m = report.means()
    print(f"{len(common)} images: psnr {m['psnr']:.4f} ssim {m['ssim']:.4f} "
          f"delta_e {m['delta_e']:.4f}; {len(unmatched)} unmatched")
    return 0


# -- parser ---------------------------------------------------------------

def _config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probenhance", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="write synthetic degraded/clean pairs")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("make-dataset", help="build the 4-reference dataset layout")
    p.add_argument("in_dir", help="directory with raw/ and ref/ (matching filenames)")
    p.add_argument("out_dir")
    _config_args(p)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train a model on a built dataset")
    p.add_argument("dataset_dir")
    p.add_argument("out_dir")
    _config_args(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reference-policy", choices=["uniform_random", "original_only"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="sample enhancements or a consensus output")
    p.add_argument("checkpoint")
    p.add_argument("input", help="image file or directory")
    p.add_argument("out_dir")
    _config_args(p)
    p.add_argument("--n", type=int)
    p.add_argument("--mode", choices=["samples", "mc", "mp", "mode", "quality"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="PSNR/SSIM/CIEDE2000 report")
    p.add_argument("pred_dir")
    p.add_argument("ref_dir")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except tuple(EXIT_CODES) as err:
        code, category = next(v for k, v in EXIT_CODES.items() if isinstance(err, k))
        print(f"error[{category}]: {err}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
