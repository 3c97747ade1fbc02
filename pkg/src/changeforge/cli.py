"""Command-line interface.

Subcommands: ``ingest``, ``train``, ``translate``, ``detect``, ``evaluate`` and
``demo-synthetic``. Exit codes: 0 success, 1 usage or configuration error,
2 data error, 3 numerical failure. Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import DetectorConfig, EvaluationConfig, PipelineConfig
from .translation.training import ConfigError, TrainConfig

log = logging.getLogger("changeforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; this one uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_section_flags(p: argparse.ArgumentParser, kind, section: str, skip=()) -> None:
    group = p.add_argument_group(f"{section} overrides")
    for f in fields(kind):
        if f.name in skip:
            continue
        if f.name == "percentiles":
            group.add_argument(_flag(f.name), dest=f"{section}.{f.name}", type=float, nargs="+",
                               default=None, metavar="P")
            continue
        typ = f.type if isinstance(f.type, type) else {"int": int, "float": float,
                                                       "str": str}.get(str(f.type), str)
        group.add_argument(_flag(f.name), dest=f"{section}.{f.name}", type=typ, default=None)


def _build_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    for key, value in vars(args).items():
        if value is None or "." not in key:
            continue
        section, name = key.split(".", 1)
        cfg.override(None if section == "top" else section, name, value)
    return cfg


def _seed_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", dest="top.seed", type=int, default=None,
                   help="master seed for every random stream (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="changeforge",
                     description="Anomalous change detection and translation robustness.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="index .bsq tiles into a dataset manifest")
    p.add_argument("directory")
    p.add_argument("--domain", choices=("X", "Y"), required=True)
    p.add_argument("--manifest", required=True, help="output manifest .json")
    p.add_argument("--validation-count", type=int, default=None,
                   help="held-out tiles (default: 200 or 10%%, whichever is smaller)")
    _seed_flag(p)

    p = sub.add_parser("train", help="train the two translators")
    p.add_argument("--config", help="pipeline config .json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data-x", dest="top.data_x", default=None)
    p.add_argument("--data-y", dest="top.data_y", default=None)
    _seed_flag(p)
    _add_section_flags(p, TrainConfig, "train", skip=("seed",))

    p = sub.add_parser("translate", help="apply a trained generator to one image")
    p.add_argument("--gen", required=True, help="checkpoint directory or checkpoint file")
    p.add_argument("--in", dest="inp", required=True, help="input .bsq image")
    p.add_argument("--out", required=True, help="output .bsq image")
    p.add_argument("--reverse", action="store_true", help="apply F (Y to X) instead of G")
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--overlap", type=int, default=None)
    _seed_flag(p)

    p = sub.add_parser("detect", help="anomalous change map for a before/after pair")
    p.add_argument("--config", help="pipeline config .json (detector section is used)")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--out", required=True, help="output map path (.bsq/.json/.pgm written)")
    p.add_argument("--stride", dest="detector.sample_stride", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    _seed_flag(p)
    _add_section_flags(p, DetectorConfig, "detector", skip=("sample_stride",))

    p = sub.add_parser("evaluate", help="robust detection ratio curve for two maps")
    p.add_argument("--config", help="pipeline config .json (evaluation section is used)")
    p.add_argument("--map1", required=True, help="map from the original pair")
    p.add_argument("--map2", required=True, help="map from the transformed pair")
    p.add_argument("--out", required=True, help="curve .csv; a .png figure is written alongside")
    p.add_argument("--mask-percentile", type=float, default=None,
                   help="also write a difference mask .pgm at this percentile")
    _seed_flag(p)
    _add_section_flags(p, EvaluationConfig, "evaluation")

    p = sub.add_parser("demo-synthetic", help="run the synthetic end-to-end experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--tiles", type=int, default=None, help="tiles per domain (default 200)")
    _seed_flag(p)
    _add_section_flags(p, TrainConfig, "train", skip=("seed",))
    return parser


# Command implementations ----------------------------------------------------


def cmd_ingest(args) -> int:
    from .raster import index_directory

    if args.validation_count is not None and args.validation_count < 0:
        raise UsageError("--validation-count must be non-negative")
    if not Path(args.directory).is_dir():
        raise FileNotFoundError(f"no such directory: {args.directory}")
    ds = index_directory(args.directory, args.domain, args.validation_count)
    ds.save(args.manifest)
    log.info("indexed %d tiles (%d held out) into %s",
             len(ds.paths), ds.validation_count, args.manifest)
    return EXIT_OK


def _dataset(path, domain):
    from .pipeline import load_domain

    return load_domain(path, domain)


def cmd_train(args) -> int:
    from .plotting import plot_loss_history
    from .translation import train_datasets

    cfg = _build_config(args)
    cfg.out_dir = args.out
    cfg.validate(require_data=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    ds_x, ds_y = _dataset(cfg.data_x, "X"), _dataset(cfg.data_y, "Y")
    if ds_x.bands != ds_y.bands:
        raise ValueError(f"domains disagree on band count: {ds_x.bands} vs {ds_y.bands}")
    result = train_datasets(ds_x, ds_y, cfg.train, out)
    plot_loss_history(result.history, out / "loss_history.png", result.validation)
    last = result.validation[-1]
    print(f"trained {cfg.train.epochs} epochs; held-out cycle loss {last['heldout_cyc']:.6g}")
    return EXIT_OK


def _generator_path(gen: str, reverse: bool) -> Path:
    p = Path(gen)
    role = "F" if reverse else "G"
    if p.is_dir():
        return p / role
    p = p.with_suffix("")
    if reverse and p.name == "G":
        return p.with_name("F")
    return p


def cmd_translate(args) -> int:
    from .raster import load_image, save_image
    from .translation import load_generator, translate
    from .translation.inference import DEFAULT_OVERLAP, DEFAULT_TILE

    tile = DEFAULT_TILE if args.tile is None else args.tile
    overlap = DEFAULT_OVERLAP if args.overlap is None else args.overlap
    if tile < 4 or not 0 <= overlap < tile:
        raise UsageError("need --tile >= 4 and 0 <= --overlap < --tile")
    gen, norm = load_generator(_generator_path(args.gen, args.reverse))
    save_image(translate(load_image(args.inp), gen, norm, tile, overlap), args.out)
    return EXIT_OK


def cmd_detect(args) -> int:
    from .acd import detect, threshold_map
    from .raster import ImagePair, load_image

    cfg = _build_config(args)
    cfg.validate()
    det = cfg.detector
    pair = ImagePair(load_image(args.before), load_image(args.after))
    amap = detect(pair, det.radius, det.sample_stride, det.shrinkage, args.threads)
    out = Path(args.out).with_suffix("")
    amap.save(out.with_suffix(".bsq"))
    amap.save_pgm(out.with_suffix(".pgm"))
    hits = threshold_map(amap, det.percentile)
    hits.save_csv(out.with_name(out.name + "_detections.csv"), amap.values)
    print(f"{len(hits)} detections above percentile {det.percentile} "
          f"(threshold {hits.threshold:.6g})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .acd import AnomalyMap, threshold_map
    from .evalkit import export_curve, robustness_curve, save_difference_mask
    from .plotting import plot_robustness_curve
    from .raster import load_image

    cfg = _build_config(args)
    cfg.validate()
    ev = cfg.evaluation
    m1 = AnomalyMap.from_image(load_image(args.map1))
    m2 = AnomalyMap.from_image(load_image(args.map2))
    curve = robustness_curve(m1, m2, ev.percentiles, ev.mode,
                             (Path(args.map1).stem, Path(args.map2).stem))
    out = Path(args.out)
    export_curve(curve, out)
    plot_robustness_curve(curve, out.with_suffix(".png"),
                          title=f"{Path(args.map1).stem} vs {Path(args.map2).stem}")
    if args.mask_percentile is not None:
        if not 0 <= args.mask_percentile < 100:
            raise UsageError("--mask-percentile must lie in [0, 100)")
        save_difference_mask(threshold_map(m1, args.mask_percentile),
                             threshold_map(m2, args.mask_percentile),
                             out.with_name(out.stem + "_difference.pgm"))
    for s in curve.samples:
        ratio = "undefined" if s.ratio is None else f"{s.ratio:.4f}"
        print(f"p{s.percentile:g}\t{ratio}")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .pipeline import DEMO_TILES, DEMO_TRAIN, run_demo

    flags = {k.split(".", 1)[1]: v for k, v in vars(args).items()
             if k.startswith("train.") and v is not None}
    seed = getattr(args, "top.seed")
    cfg = PipelineConfig(seed=0 if seed is None else seed,
                         train=TrainConfig(**{**DEMO_TRAIN, **flags}))
    cfg.validate()
    tiles = DEMO_TILES if args.tiles is None else args.tiles
    if tiles < 10:
        raise UsageError("--tiles must be at least 10")

    def progress(epoch, row):
        log.info("epoch %d held-out cycle %.4f", epoch, row["heldout_cyc"])

    train_opts = {k: v for k, v in cfg.train.to_dict().items() if k != "seed"}
    summary = run_demo(args.out, cfg.seed, train_opts, tiles, progress)
    print(json.dumps({k: summary[k] for k in (
        "heldout_cycle_epoch1", "heldout_cycle_final", "ratio_p50", "identity_ratio_p50")}))
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "translate": cmd_translate,
            "detect": cmd_detect, "evaluate": cmd_evaluate, "demo-synthetic": cmd_demo}


def _exit_code(exc: BaseException) -> int:
    from .raster import RasterError

    if isinstance(exc, (ConfigError, UsageError)):
        return EXIT_USAGE
    if isinstance(exc, (FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, (RasterError, OSError, ValueError, KeyError, TypeError)):
        return EXIT_DATA
    raise exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # mapped to an exit code below; anything else propagates
        code = _exit_code(exc)
        print(f"changeforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
