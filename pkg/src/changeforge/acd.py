"""Hyperbolic anomalous change detection (HACD) with local co-registration adjustment.

For a before pixel ``x`` and after pixel ``y`` with stacked ``z = [x; y]``::

    A(x, y) = zeta_z(z) - zeta_x(x) - zeta_y(y),   zeta_k(v) = (v - mu_k)' K_k^-1 (v - mu_k)

Equivalently ``A = w' Q w`` with ``w = z - mu_z`` and
``Q = K_z^-1 - blockdiag(K_x^-1, K_y^-1)``, which is how it is evaluated here:
each inverse comes from one Cholesky factorization, and the per-pixel
quadratic forms are accumulated band by band so any row partition of the
image gives bitwise-identical results.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from .raster import ImagePair, MultibandImage, RasterError, percentile, save_image, write_pgm

DEFAULT_SHRINKAGE = 1e-6
THREADS_ENV = "CHANGEFORGE_THREADS"


class CovarianceError(np.linalg.LinAlgError):
    """Covariance is not positive definite even after shrinkage."""


def worker_count(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


@dataclass(frozen=True)
class GaussianChangeModel:
    """Means and shrunk covariances of the before, after and stacked pixels.

    ``eps_*`` is the ridge that was added to each covariance diagonal.
    ``k_z_ml`` keeps the unshrunk maximum-likelihood joint covariance, whose
    diagonal blocks are the before and after estimates.
    """

    mu_x: np.ndarray
    mu_y: np.ndarray
    k_x: np.ndarray
    k_y: np.ndarray
    k_z: np.ndarray
    eps_x: float
    eps_y: float
    eps_z: float
    shrinkage: float
    n_samples: int
    k_z_ml: np.ndarray

    @property
    def bands(self) -> int:
        return self.mu_x.shape[0]

    @property
    def mu_z(self) -> np.ndarray:
        return np.concatenate([self.mu_x, self.mu_y])

    def raw(self, which: str) -> np.ndarray:
        """Maximum-likelihood covariance before shrinkage: ``"x"``, ``"y"`` or ``"z"``."""
        d = self.bands
        blocks = {"x": (slice(0, d), slice(0, d)), "y": (slice(d, None), slice(d, None)),
                  "z": (slice(None), slice(None))}
        return self.k_z_ml[blocks[which]].copy()

    def block_diagonal(self) -> "GaussianChangeModel":
        """Same model with the before/after cross-covariance forced to zero."""
        d = self.bands
        kz = np.zeros((2 * d, 2 * d))
        kz[:d, :d] = self.k_x
        kz[d:, d:] = self.k_y
        ml = np.zeros_like(kz)
        ml[:d, :d] = self.raw("x")
        ml[d:, d:] = self.raw("y")
        return replace(self, k_z=kz, eps_z=0.0, k_z_ml=ml)


def _shrink(k: np.ndarray, shrinkage: float) -> tuple[np.ndarray, float]:
    eps = shrinkage * float(np.trace(k)) / k.shape[0]
    return k + eps * np.eye(k.shape[0]), eps


def _cholesky(k: np.ndarray, label: str):
    try:
        return scipy.linalg.cho_factor(k, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise CovarianceError(f"{label} covariance is not positive definite: {exc}") from exc


def _pixels(img: MultibandImage, stride: int = 1) -> np.ndarray:
    return img.data[:, ::stride, ::stride].reshape(img.bands, -1).T.astype(np.float64)


def fit_gaussian(pair: ImagePair, sample_stride: int = 1,
                 shrinkage: float = DEFAULT_SHRINKAGE) -> GaussianChangeModel:
    """Maximum-likelihood (divide-by-N) Gaussian fit over pixels on the stride grid."""
    if sample_stride < 1:
        raise ValueError("sample_stride must be a positive integer")
    if shrinkage < 0:
        raise ValueError("shrinkage must be non-negative")
    x = _pixels(pair.before, sample_stride)
    y = _pixels(pair.after, sample_stride)
    n, d = x.shape
    if n <= 2 * d:
        raise RasterError(f"{n} sampled pixels; need more than {2 * d} for {d} bands")
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    zc = np.hstack([x - mu_x, y - mu_y])
    kz = zc.T @ zc / n
    kz = 0.5 * (kz + kz.T)
    kx, ky = kz[:d, :d].copy(), kz[d:, d:].copy()
    kx_s, ex = _shrink(kx, shrinkage)
    ky_s, ey = _shrink(ky, shrinkage)
    kz_s, ez = _shrink(kz, shrinkage)
    for k, label in ((kx_s, "before"), (ky_s, "after"), (kz_s, "joint")):
        _cholesky(k, label)
    return GaussianChangeModel(mu_x, mu_y, kx_s, ky_s, kz_s, ex, ey, ez, shrinkage, n, kz)


def _inverse(k: np.ndarray, label: str) -> np.ndarray:
    factor = _cholesky(k, label)
    inv = scipy.linalg.cho_solve(factor, np.eye(k.shape[0]))
    return 0.5 * (inv + inv.T)


def hyperbolic_form(model: GaussianChangeModel) -> np.ndarray:
    """Q = K_z^-1 - blockdiag(K_x^-1, K_y^-1), the matrix of the HACD quadratic form."""
    d = model.bands
    q = _inverse(model.k_z, "joint")
    q[:d, :d] -= _inverse(model.k_x, "before")
    q[d:, d:] -= _inverse(model.k_y, "after")
    return q


@dataclass(frozen=True)
class AnomalyMap:
    values: np.ndarray
    method: str = "hacd"
    radius: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("anomaly map must be 2-D")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("anomaly map contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_image(self) -> MultibandImage:
        return MultibandImage(self.values[None], (f"{self.method}_r{self.radius}",))

    def save(self, path) -> None:
        save_image(self.to_image(), path)

    def save_pgm(self, path) -> None:
        write_pgm(self.values, path)

    @classmethod
    def from_image(cls, img: MultibandImage) -> "AnomalyMap":
        if img.bands != 1:
            raise RasterError(f"anomaly map files hold one band, got {img.bands}")
        method, radius = "hacd", 0
        if img.band_names:
            name = img.band_names[0]
            if "_r" in name:
                method, _, r = name.rpartition("_r")
                radius = int(r) if r.isdigit() else 0
        return cls(img.data[0].astype(np.float64), method, radius)


class _Scorer:
    """Per-pixel pieces of A = u'Qxx u + 2 u'Qxy v + v'Qyy v for one image pair."""

    def __init__(self, pair: ImagePair, model: GaussianChangeModel):
        d = model.bands
        if pair.before.bands != d:
            raise RasterError(f"model has {d} bands, images have {pair.before.bands}")
        q = hyperbolic_form(model)
        self.qxx, self.qxy, self.qyy = q[:d, :d], q[:d, d:], q[d:, d:]
        self.u = pair.before.data.astype(np.float64) - model.mu_x[:, None, None]
        self.v = pair.after.data.astype(np.float64) - model.mu_y[:, None, None]
        self.d = d
        h, w = pair.shape[1:]
        self.a = np.empty((h, w))
        self.b = np.empty((h, w))
        self.p = np.empty((d, h, w))

    @staticmethod
    def _quad(q: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = np.zeros(u.shape[1:])
        for k in range(q.shape[0]):
            t = q[k, 0] * u[0]
            for j in range(1, q.shape[1]):
                t += q[k, j] * u[j]
            out += u[k] * t
        return out

    def prepare(self, r0: int, r1: int) -> None:
        u, v = self.u[:, r0:r1], self.v[:, r0:r1]
        self.a[r0:r1] = self._quad(self.qxx, u)
        self.b[r0:r1] = self._quad(self.qyy, v)
        for j in range(self.d):
            t = self.qxy[0, j] * u[0]
            for k in range(1, self.d):
                t += self.qxy[k, j] * u[k]
            self.p[j, r0:r1] = t

    def score(self, rows: slice, cols: slice, drow: int, dcol: int) -> np.ndarray:
        """A(x[rows, cols], y[rows + drow, cols + dcol])."""
        rs = slice(rows.start + drow, rows.stop + drow)
        cs = slice(cols.start + dcol, cols.stop + dcol)
        p, v = self.p[:, rows, cols], self.v[:, rs, cs]
        cross = p[0] * v[0]
        for k in range(1, self.d):
            cross += p[k] * v[k]
        return (self.a[rows, cols] + self.b[rs, cs]) + 2.0 * cross


def _row_blocks(h: int, workers: int) -> list[tuple[int, int]]:
    n = min(h, max(1, workers * 4)) if workers > 1 else 1
    edges = np.linspace(0, h, n + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_blocks(fn, blocks, workers: int) -> None:
    if workers == 1 or len(blocks) == 1:
        for blk in blocks:
            fn(*blk)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda blk: fn(*blk), blocks))


def offsets(radius: int) -> list[tuple[int, int]]:
    """Square window of shifts, zero shift first."""
    r = range(-radius, radius + 1)
    return sorted(((a, b) for a in r for b in r), key=lambda t: (t != (0, 0), t))


def lcra_map(pair: ImagePair, model: GaussianChangeModel, radius: int = 1,
             threads: Optional[int] = None) -> AnomalyMap:
    """Per pixel, the smallest A over after-image shifts within ``radius`` (in bounds only)."""
    radius = int(radius)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    scorer = _Scorer(pair, model)
    h, w = pair.shape[1:]
    workers = worker_count(threads)
    blocks = _row_blocks(h, workers)
    _run_blocks(scorer.prepare, blocks, workers)
    out = np.empty((h, w))
    shifts = offsets(radius)

    def fill(r0: int, r1: int) -> None:
        for dr, dc in shifts:
            i0, i1 = max(r0, -dr), min(r1, h - dr)
            j0, j1 = max(0, -dc), min(w, w - dc)
            if i0 >= i1 or j0 >= j1:
                continue
            s = scorer.score(slice(i0, i1), slice(j0, j1), dr, dc)
            if (dr, dc) == (0, 0):
                out[i0:i1, j0:j1] = s
            else:
                np.minimum(out[i0:i1, j0:j1], s, out=out[i0:i1, j0:j1])

    _run_blocks(fill, blocks, workers)
    return AnomalyMap(out, "lcra" if radius else "hacd", radius)


def hacd_map(pair: ImagePair, model: GaussianChangeModel,
             threads: Optional[int] = None) -> AnomalyMap:
    return lcra_map(pair, model, 0, threads)


def detect(pair: ImagePair, radius: int = 1, sample_stride: int = 1,
           shrinkage: float = DEFAULT_SHRINKAGE, threads: Optional[int] = None) -> AnomalyMap:
    """Fit the in-scene model and score the same pair."""
    model = fit_gaussian(pair, sample_stride, shrinkage)
    return lcra_map(pair, model, radius, threads)


@dataclass(frozen=True)
class DetectionSet:
    """Pixels whose anomaly value is strictly above ``threshold``."""

    mask: np.ndarray
    threshold: float
    percentile: float

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    def __len__(self) -> int:
        return int(self.mask.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def indices(self) -> np.ndarray:
        """(k, 2) array of (row, col), row-major order."""
        return np.argwhere(self.mask)

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(r), int(c)) for r, c in self.indices()}

    def save_csv(self, path, values: Optional[np.ndarray] = None) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["row", "col", "value"])
            for r, c in self.indices():
                wr.writerow([int(r), int(c), "" if values is None else repr(float(values[r, c]))])


def threshold_map(amap: AnomalyMap, pct: float) -> DetectionSet:
    """Threshold at the linear-interpolation percentile of all map values."""
    if not 0 <= pct <= 100:
        raise ValueError(f"percentile must be in [0, 100], got {pct}")
    thr = float(percentile(amap.values.ravel(), pct))
    return DetectionSet(amap.values > thr, thr, float(pct))
