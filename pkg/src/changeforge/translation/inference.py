"""Apply a trained generator to whole images, tiling large ones."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, load_checkpoint, no_grad
from ..raster import MultibandImage, NormalizationSpec, RasterError, denormalize, normalize
from .networks import TranslatorParams

DEFAULT_TILE = 128
DEFAULT_OVERLAP = 16


def load_generator(path) -> tuple[TranslatorParams, NormalizationSpec]:
    params, meta = load_checkpoint(path)
    gen = TranslatorParams(meta["role"], meta["arch"], params)
    if not gen.is_generator:
        raise ValueError(f"{path} holds a {meta['role']} discriminator, not a generator")
    return gen, NormalizationSpec.from_dict(meta["normalization"])


def _run(gen: TranslatorParams, block: np.ndarray) -> np.ndarray:
    """Generator forward on one (C, h, w) block, padding to the downsampling multiple."""
    f = gen.downsample_factor
    _, h, w = block.shape
    ph, pw = (-h) % f, (-w) % f
    if ph or pw:
        block = np.pad(block, ((0, 0), (0, ph), (0, pw)), mode="symmetric")
    with no_grad():
        out = gen(Tensor(block[None].astype(gen.params.dtype))).data[0]
    return out[:, :h, :w]


def _starts(extent: int, tile: int, step: int) -> list[int]:
    if extent <= tile:
        return [0]
    starts = list(range(0, extent - tile, step))
    starts.append(extent - tile)
    return starts


def _ramp(length: int, overlap: int, lead: bool, trail: bool) -> np.ndarray:
    w = np.ones(length)
    ramp = np.arange(1, overlap + 1) / (overlap + 1)
    if lead:
        w[:overlap] = np.minimum(w[:overlap], ramp)
    if trail:
        w[length - overlap:] = np.minimum(w[length - overlap:], ramp[::-1])
    return w


def run_tiled(gen: TranslatorParams, data: np.ndarray, tile: int = DEFAULT_TILE,
              overlap: int = DEFAULT_OVERLAP) -> np.ndarray:
    """Generator output for a normalized (C, H, W) array.

    Images that fit in one tile are processed whole. Otherwise tiles overlap
    by ``overlap`` pixels and are blended with linear ramps.
    """
    _, h, w = data.shape
    if h <= tile and w <= tile:
        return _run(gen, data)
    if not 0 <= overlap < tile:
        raise ValueError("overlap must be smaller than the tile size")
    step = tile - overlap
    acc = np.zeros(data.shape, dtype=np.float64)
    weight = np.zeros((h, w), dtype=np.float64)
    rows, cols = _starts(h, tile, step), _starts(w, tile, step)
    for r in rows:
        th = min(tile, h)
        wr = _ramp(th, overlap, r > 0, r + th < h)
        for c in cols:
            tw = min(tile, w)
            wc = _ramp(tw, overlap, c > 0, c + tw < w)
            out = _run(gen, data[:, r:r + th, c:c + tw])
            wgt = np.outer(wr, wc)
            acc[:, r:r + th, c:c + tw] += out * wgt
            weight[r:r + th, c:c + tw] += wgt
    return acc / weight


def translate(img: MultibandImage, gen: TranslatorParams, norm: NormalizationSpec,
              tile: int = DEFAULT_TILE, overlap: int = DEFAULT_OVERLAP) -> MultibandImage:
    """Normalize, run the generator, and map back to image units; shape is preserved."""
    if img.bands != gen.channels:
        raise RasterError(f"generator expects {gen.channels} bands, image has {img.bands}")
    x = normalize(img, norm).data
    y = run_tiled(gen, x, tile, overlap)
    return denormalize(MultibandImage(y, img.band_names), norm)
