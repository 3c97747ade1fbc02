"""End-to-end runs: synthetic data, translation training, change detection and robustness."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import plotting
from .acd import DEFAULT_SHRINKAGE, AnomalyMap, fit_gaussian, lcra_map, threshold_map
from .evalkit import DEFAULT_PERCENTILES, export_curve, robustness_curve, save_difference_mask
from .raster import (
    ImagePair,
    MultibandImage,
    NormalizationSpec,
    TileDataset,
    index_directory,
    save_image,
)
from .seeding import stream
from .synthetic import change_pair, make_domains
from .translation import TrainConfig, TranslatorParams, train_datasets, translate

log = logging.getLogger(__name__)

#: Desk-scale training used by the synthetic demo.
DEMO_TRAIN = dict(epochs=200, decay_start_epoch=100, batch_size=8, lr=2e-4)
DEMO_TILES = 200
DEMO_TILE_SIZE = 32
DEMO_SCENE_SIZE = 64
DEMO_PATCH = 3


def load_domain(path, domain: str) -> TileDataset:
    """A manifest ``.json`` file or a directory of tiles, as a dataset."""
    p = Path(path)
    if p.is_dir():
        return index_directory(p, domain)
    ds = TileDataset.load(p)
    if ds.domain != domain:
        log.warning("%s holds domain %s, used as %s", p, ds.domain, domain)
    return ds


def write_synthetic_dataset(out_dir, seed: int = 0, n: int = DEMO_TILES,
                            size: int = DEMO_TILE_SIZE) -> tuple[Path, Path]:
    """Write the two synthetic domains as ``X/tile_NNNN`` and ``Y/tile_NNNN``."""
    out = Path(out_dir)
    xs, ys = make_domains(stream(seed, "synthetic"), n, size)
    for name, tiles in (("X", xs), ("Y", ys)):
        for i, im in enumerate(tiles):
            save_image(im, out / name / f"tile_{i:04d}.bsq")
    return out / "X", out / "Y"


def band_means(images: Sequence[MultibandImage]) -> np.ndarray:
    return np.mean([im.data.reshape(im.bands, -1).mean(axis=1) for im in images], axis=0)


def domain_shift(gen: TranslatorParams, norm: NormalizationSpec,
                 source: Sequence[MultibandImage], target: Sequence[MultibandImage]) -> dict:
    """How far translation moves per-band means from the source toward the target domain.

    ``fraction[b]`` is ``(mean G(x) - mean x) / (mean y - mean x)`` for band b;
    1 means the translated tiles land on the target mean.
    """
    translated = [translate(im, gen, norm) for im in source]
    src, out, tgt = band_means(source), band_means(translated), band_means(target)
    gap = tgt - src
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(gap != 0, (out - src) / gap, np.nan)
    return {"source_mean": src.tolist(), "translated_mean": out.tolist(),
            "target_mean": tgt.tolist(), "fraction": frac.tolist()}


def lcra_pair(before: MultibandImage, after: MultibandImage, radius: int, sample_stride: int,
              shrinkage: float, threads: Optional[int] = None) -> AnomalyMap:
    pair = ImagePair(before, after)
    return lcra_map(pair, fit_gaussian(pair, sample_stride, shrinkage), radius, threads)


def robustness_experiment(before: MultibandImage, after: MultibandImage,
                          transform: Callable[[MultibandImage], MultibandImage], out_dir,
                          radius: int = 1, sample_stride: int = 1,
                          shrinkage: float = DEFAULT_SHRINKAGE,
                          percentiles: Sequence[float] = DEFAULT_PERCENTILES, mode: str = "own",
                          label: str = "transformed", mark_pct: float = 50.0) -> dict:
    """Detections on (before, after) against (before, transform(after)).

    Writes both anomaly maps (``.bsq``/``.json`` and ``.pgm``), the curve CSV,
    a difference mask at ``mark_pct`` and figures into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    moved = transform(after)
    m_orig = lcra_pair(before, after, radius, sample_stride, shrinkage)
    m_tran = lcra_pair(before, moved, radius, sample_stride, shrinkage)
    for name, m in (("map_original", m_orig), (f"map_{label}", m_tran)):
        m.save(out / f"{name}.bsq")
        m.save_pgm(out / f"{name}.pgm")
    curve = robustness_curve(m_orig, m_tran, percentiles, mode, ("original", label))
    export_curve(curve, out / f"curve_{label}.csv")
    xs, ys = threshold_map(m_orig, mark_pct), threshold_map(m_tran, mark_pct)
    save_difference_mask(xs, ys, out / f"difference_{label}.pgm")
    plotting.plot_robustness_curve(curve, out / f"curve_{label}.png",
                                   title=f"original vs {label}")
    plotting.plot_anomaly_map(m_orig.values, out / "map_original.png", "original", xs.mask)
    plotting.plot_anomaly_map(m_tran.values, out / f"map_{label}.png", label, ys.mask)
    return {"curve": curve, "map_original": m_orig, "map_transformed": m_tran,
            "transformed_image": moved}


def run_demo(out_dir, seed: int = 0, train_overrides: Optional[dict] = None,
             n_tiles: int = DEMO_TILES, progress=None) -> dict:
    """Synthetic end-to-end run; returns the summary also written to ``summary.json``.

    1. Write both synthetic domains and index them into manifests.
    2. Train the translators on the training split.
    3. Measure the band-mean shift of translated held-out X tiles.
    4. Build a before/after scene with a 3x3 anomalous patch, detect on the
       original pair and on (before, G(after)), and sweep the robust ratio.
    5. Repeat step 4 with the identity transform as a control.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dir_x, dir_y = write_synthetic_dataset(out / "data", seed, n_tiles)
    ds_x, ds_y = index_directory(dir_x, "X"), index_directory(dir_y, "Y")
    ds_x.save(out / "manifest_X.json")
    ds_y.save(out / "manifest_Y.json")

    cfg = TrainConfig(**{**DEMO_TRAIN, **(train_overrides or {}), "seed": seed})
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    result = train_datasets(ds_x, ds_y, cfg, out / "train", progress=progress)
    gen, norm = result.nets.G, result.normalization
    plotting.plot_loss_history(result.history, out / "figures" / "loss_history.png",
                               result.validation)

    shift = domain_shift(gen, norm, ds_x.load_validation(), ds_y.load_validation())
    plotting.plot_band_means(shift["source_mean"], shift["translated_mean"],
                             shift["target_mean"], out / "figures" / "band_means.png")

    before, after, patch_at = change_pair(stream(seed, "eval"), DEMO_SCENE_SIZE, patch=DEMO_PATCH)
    save_image(before, out / "scene" / "before.bsq")
    save_image(after, out / "scene" / "after.bsq")
    exp = robustness_experiment(before, after, lambda im: translate(im, gen, norm),
                                out / "detect", label="translated")
    save_image(exp["transformed_image"], out / "scene" / "after_translated.bsq")
    ctrl = robustness_experiment(before, after, lambda im: im, out / "detect_identity",
                                 label="identity")
    curve, ctrl_curve = exp["curve"], ctrl["curve"]
    export_curve(curve, out / "curve.csv")
    plotting.plot_curves([curve, ctrl_curve], ["G(after)", "identity"],
                         out / "figures" / "robustness.png")

    val = result.validation
    patch_mask = np.zeros(before.data.shape[1:], dtype=bool)
    patch_mask[patch_at[0]:patch_at[0] + DEMO_PATCH, patch_at[1]:patch_at[1] + DEMO_PATCH] = True
    top = threshold_map(exp["map_original"], 99.0).mask
    summary = {
        "seed": seed,
        "train_config": cfg.to_dict(),
        "heldout_cycle_epoch1": val[0]["heldout_cyc"],
        "heldout_cycle_final": val[-1]["heldout_cyc"],
        "heldout_cycle_drop": 1.0 - val[-1]["heldout_cyc"] / val[0]["heldout_cyc"],
        "train_cycle_epoch1_mean": val[0]["train_cyc_mean"],
        "train_cycle_final_mean": val[-1]["train_cyc_mean"],
        "band_shift": shift,
        "patch_at": list(patch_at),
        "patch_in_top_percent": int((top & patch_mask).sum()),
        "ratio_p50": curve.ratio_at(50.0),
        "identity_ratio_p50": ctrl_curve.ratio_at(50.0),
        "identity_all_one": all(r == 1.0 for r in ctrl_curve.ratios),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
