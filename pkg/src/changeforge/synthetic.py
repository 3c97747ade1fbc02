"""Built-in two-domain dataset: smooth 3-band textures and their "snowy" version.

Domain X tiles are smooth random textures with reflectance-like values.
Domain Y tiles come from the same texture family, then get band offsets
(+0.6 on band 0, +0.3 on band 2) and bright salt speckle on 20% of pixels.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .raster import MultibandImage

BANDS = 3
BASE_LEVEL = (0.20, 0.30, 0.25)
TEXTURE_AMPLITUDE = 0.08
SNOW_OFFSETS = (0.6, 0.0, 0.3)
SALT_FRACTION = 0.2
SALT_VALUE = 1.0
BAND_NAMES = ("b0", "b1", "b2")


def _smooth_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    field = gaussian_filter(rng.normal(size=(size, size)), sigma, mode="wrap")
    return field / field.std()


def texture_tile(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """(3, size, size) float array from the shared texture family."""
    shared = _smooth_noise(rng, size, rng.uniform(1.5, 3.0))
    out = np.empty((BANDS, size, size))
    for b in range(BANDS):
        own = _smooth_noise(rng, size, rng.uniform(1.0, 2.0))
        out[b] = BASE_LEVEL[b] + TEXTURE_AMPLITUDE * (0.8 * shared + 0.6 * own)
    return out


def snow(data: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Band offsets followed by salt speckle on a random 20% of pixels."""
    out = data + np.asarray(SNOW_OFFSETS)[:, None, None]
    salt = rng.random(data.shape[1:]) < SALT_FRACTION
    out[:, salt] = SALT_VALUE
    return out


def make_domains(rng: np.random.Generator, n: int = 200, size: int = 32):
    """``n`` X tiles and ``n`` independently drawn Y tiles."""
    xs = [MultibandImage(texture_tile(rng, size), BAND_NAMES) for _ in range(n)]
    ys = [MultibandImage(snow(texture_tile(rng, size), rng), BAND_NAMES) for _ in range(n)]
    return xs, ys


def change_pair(rng: np.random.Generator, size: int = 64, noise: float = 0.01,
                patch: int = 3, patch_at=None):
    """A before/after X-domain scene pair with one square anomalous patch.

    The after image repeats the before texture with small sensor noise; inside
    the patch band 0 turns bright and band 1 dark, a spectral change the rest
    of the scene does not share. Returns ``(before, after, (row, col))``.
    """
    before = texture_tile(rng, size)
    after = before + rng.normal(0.0, noise, size=before.shape)
    if patch_at is None:
        r = int(rng.integers(patch, size - 2 * patch))
        c = int(rng.integers(patch, size - 2 * patch))
    else:
        r, c = patch_at
    block = after[:, r:r + patch, c:c + patch]
    block[0] = BASE_LEVEL[0] + 4 * TEXTURE_AMPLITUDE
    block[1] = BASE_LEVEL[1] - 3 * TEXTURE_AMPLITUDE
    return (MultibandImage(before, BAND_NAMES), MultibandImage(after, BAND_NAMES), (r, c))
