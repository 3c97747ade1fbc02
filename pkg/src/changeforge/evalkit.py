"""Robust detection ratio and threshold sweeps comparing two anomaly maps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .acd import AnomalyMap, DetectionSet, threshold_map
from .raster import write_pgm_bytes

DEFAULT_PERCENTILES = tuple(float(p) for p in range(0, 100, 5))
THRESHOLD_MODES = ("own", "absolute")
CURVE_HEADER = ("percentile", "threshold", "ratio")


class UndefinedRatioError(ZeroDivisionError):
    """The original detection set is empty, so the ratio has no value."""


def _mask(s) -> np.ndarray:
    return s.mask if isinstance(s, DetectionSet) else np.asarray(s, dtype=bool)


def robust_ratio(original, transformed) -> float:
    """|X & Y| / |X|: the share of original detections that survive the transformation.

    Accepts :class:`DetectionSet` objects or boolean masks over the same grid.
    """
    x, y = _mask(original), _mask(transformed)
    if x.shape != y.shape:
        raise ValueError(f"detection grids differ: {x.shape} vs {y.shape}")
    n = int(np.count_nonzero(x))
    if n == 0:
        raise UndefinedRatioError("original detection set is empty")
    return int(np.count_nonzero(x & y)) / n


@dataclass(frozen=True)
class CurveSample:
    percentile: float
    threshold: float
    ratio: Optional[float]

    @property
    def defined(self) -> bool:
        return self.ratio is not None


@dataclass
class RobustnessCurve:
    samples: list[CurveSample] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ps = [s.percentile for s in self.samples]
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError("curve percentiles must be strictly increasing")
        for s in self.samples:
            if s.ratio is not None and not 0.0 <= s.ratio <= 1.0:
                raise ValueError(f"ratio {s.ratio} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.samples)

    def ratio_at(self, pct: float) -> Optional[float]:
        for s in self.samples:
            if s.percentile == pct:
                return s.ratio
        raise KeyError(f"no sample at percentile {pct}")

    @property
    def percentiles(self) -> list[float]:
        return [s.percentile for s in self.samples]

    @property
    def ratios(self) -> list[Optional[float]]:
        return [s.ratio for s in self.samples]


def robustness_curve(map_original: AnomalyMap, map_transformed: AnomalyMap,
                     percentiles: Sequence[float] = DEFAULT_PERCENTILES,
                     mode: str = "own", names: tuple[str, str] = ("original", "transformed")
                     ) -> RobustnessCurve:
    """Robust detection ratio over a sweep of percentile thresholds.

    ``mode="own"`` thresholds each map at its own percentile, so both
    detection budgets match. ``mode="absolute"`` reuses the original map's
    threshold value on the transformed map.
    """
    if mode not in THRESHOLD_MODES:
        raise ValueError(f"mode must be one of {THRESHOLD_MODES}")
    if map_original.shape != map_transformed.shape:
        raise ValueError(f"map shapes differ: {map_original.shape} vs {map_transformed.shape}")
    samples = []
    for p in percentiles:
        p = float(p)
        if not 0 <= p < 100:
            raise ValueError(f"percentiles must lie in [0, 100), got {p}")
        xs = threshold_map(map_original, p)
        if mode == "own":
            ys = threshold_map(map_transformed, p)
        else:
            ys = DetectionSet(map_transformed.values > xs.threshold, xs.threshold, p)
        try:
            ratio = robust_ratio(xs, ys)
        except UndefinedRatioError:
            ratio = None
        samples.append(CurveSample(p, xs.threshold, ratio))
    meta = {"original": names[0], "transformed": names[1], "mode": mode}
    return RobustnessCurve(samples, meta)


def export_curve(curve: RobustnessCurve, path) -> None:
    """CSV ``percentile,threshold,ratio``; undefined ratios are left empty."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(CURVE_HEADER)
        for s in curve.samples:
            wr.writerow([repr(s.percentile), repr(s.threshold),
                         "" if s.ratio is None else repr(s.ratio)])


def read_curve(path) -> RobustnessCurve:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != CURVE_HEADER:
        raise ValueError(f"{path}: missing header {','.join(CURVE_HEADER)}")
    samples = [CurveSample(float(p), float(t), float(r) if r != "" else None)
               for p, t, r in rows[1:]]
    return RobustnessCurve(samples)


def difference_mask(original, transformed) -> np.ndarray:
    """uint8 image: 85 original-only, 170 both, 255 transformed-only, 0 neither."""
    x, y = _mask(original), _mask(transformed)
    out = np.zeros(x.shape, dtype=np.uint8)
    out[x & ~y] = 85
    out[x & y] = 170
    out[~x & y] = 255
    return out


def save_difference_mask(original, transformed, path) -> None:
    write_pgm_bytes(difference_mask(original, transformed), path)
