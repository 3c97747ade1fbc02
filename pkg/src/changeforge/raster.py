"""Multiband image model, band-sequential file I/O and percentile stretching.

Images are stored as a flat little-endian float32 payload (``.bsq``, band-major
then row-major) next to a JSON header of the same stem::

    {"bands": 13, "height": 600, "width": 600, "dtype": "f32le",
     "band_names": ["B01", ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

DTYPE_TAG = "f32le"
_LE_F32 = np.dtype("<f4")


class RasterError(ValueError):
    """Invalid image data or malformed image files."""


def percentile(values: np.ndarray, p, axis=None) -> np.ndarray:
    """Linear-interpolation percentile, index = (n - 1) * p / 100 on the sorted sample.

    Shared by normalization and detection thresholding so both agree.
    """
    return np.percentile(values, p, axis=axis, method="linear")


@dataclass(frozen=True)
class MultibandImage:
    """A (bands, height, width) float32 image."""

    data: np.ndarray
    band_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise RasterError(f"image data must be 3-D (bands, height, width), got shape {data.shape}")
        if min(data.shape) < 1:
            raise RasterError(f"image extents must be positive, got {data.shape}")
        data = np.ascontiguousarray(data, dtype=np.float32)
        if not np.all(np.isfinite(data)):
            raise RasterError("image contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.band_names is not None:
            names = tuple(str(n) for n in self.band_names)
            if len(names) != data.shape[0]:
                raise RasterError(f"{len(names)} band names given for {data.shape[0]} bands")
            object.__setattr__(self, "band_names", names)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, MultibandImage):
            return NotImplemented
        return (self.band_names == other.band_names
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class ImagePair:
    """Co-registered before/after images of identical shape."""

    before: MultibandImage
    after: MultibandImage

    def __post_init__(self):
        if self.before.shape != self.after.shape:
            raise RasterError(
                f"before/after shapes differ: {self.before.shape} vs {self.after.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.before.shape


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-band stretch anchors mapping [low, high] onto [-1, 1]."""

    low: tuple[float, ...]
    high: tuple[float, ...]
    clamp: bool = True

    def __post_init__(self):
        low = tuple(float(v) for v in self.low)
        high = tuple(float(v) for v in self.high)
        if len(low) != len(high) or not low:
            raise RasterError("low/high anchors must be non-empty and of equal length")
        for b, (lo, hi) in enumerate(zip(low, high)):
            if not lo < hi:
                raise RasterError(f"band {b}: low anchor {lo} is not below high anchor {hi}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def bands(self) -> int:
        return len(self.low)

    def to_dict(self) -> dict:
        return {"low": list(self.low), "high": list(self.high), "clamp": self.clamp}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(tuple(d["low"]), tuple(d["high"]), bool(d.get("clamp", True)))


@dataclass
class TileDataset:
    """Image files of one domain (``"X"`` or ``"Y"``) with a held-out validation tail."""

    domain: str
    paths: list[str] = field(default_factory=list)
    validation_count: int = 0
    bands: Optional[int] = None

    def __post_init__(self):
        if self.domain not in ("X", "Y"):
            raise RasterError(f"domain must be 'X' or 'Y', got {self.domain!r}")
        if self.paths and not 0 <= self.validation_count < len(self.paths):
            raise RasterError(
                f"validation count {self.validation_count} must be below total {len(self.paths)}")

    @property
    def train_paths(self) -> list[str]:
        return self.paths[:len(self.paths) - self.validation_count]

    @property
    def validation_paths(self) -> list[str]:
        return self.paths[len(self.paths) - self.validation_count:]

    def load_train(self) -> list[MultibandImage]:
        return [load_image(p) for p in self.train_paths]

    def load_validation(self) -> list[MultibandImage]:
        return [load_image(p) for p in self.validation_paths]

    def to_dict(self) -> dict:
        return {"domain": self.domain, "paths": list(self.paths),
                "validation_count": self.validation_count, "bands": self.bands}

    @classmethod
    def from_dict(cls, d: dict) -> "TileDataset":
        return cls(d["domain"], list(d["paths"]), int(d["validation_count"]), d.get("bands"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TileDataset":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_validation_count(n: int) -> int:
    """200 images or 10% of the domain, whichever is smaller."""
    return min(200, n // 10)


def index_directory(directory, domain: str, validation_count: Optional[int] = None) -> TileDataset:
    """Index every ``.bsq`` image under ``directory`` (sorted) into a dataset."""
    paths = sorted(str(p) for p in Path(directory).rglob("*.bsq"))
    if not paths:
        raise RasterError(f"no .bsq images found under {directory}")
    bands = None
    for p in paths:
        b = read_header(p)["bands"]
        if bands is None:
            bands = b
        elif b != bands:
            raise RasterError(f"{p} has {b} bands, expected {bands}")
    if validation_count is None:
        validation_count = default_validation_count(len(paths))
    return TileDataset(domain, paths, validation_count, bands)


def _header_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _payload_path(path) -> Path:
    return Path(path).with_suffix(".bsq")


def read_header(path) -> dict:
    hp = _header_path(path)
    if not hp.exists():
        raise FileNotFoundError(f"missing header {hp}")
    header = json.loads(hp.read_text())
    for key in ("bands", "height", "width"):
        if not isinstance(header.get(key), int) or header[key] < 1:
            raise RasterError(f"{hp}: '{key}' must be a positive integer")
    if header.get("dtype", DTYPE_TAG) != DTYPE_TAG:
        raise RasterError(f"{hp}: unsupported dtype {header['dtype']!r}")
    return header


def load_image(path) -> MultibandImage:
    """Read a ``.bsq`` payload and its ``.json`` sidecar.

    Either file name may be passed; the other is found by swapping the suffix.
    """
    header = read_header(path)
    pp = _payload_path(path)
    if not pp.exists():
        raise FileNotFoundError(f"missing payload {pp}")
    raw = pp.read_bytes()
    shape = (header["bands"], header["height"], header["width"])
    expected = int(np.prod(shape)) * _LE_F32.itemsize
    if len(raw) != expected:
        raise RasterError(f"{pp}: payload is {len(raw)} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype=_LE_F32).reshape(shape)
    if not np.all(np.isfinite(data)):
        raise RasterError(f"{pp}: payload contains non-finite values")
    return MultibandImage(data.astype(np.float32), header.get("band_names"))


def save_image(img: MultibandImage, path) -> None:
    if not isinstance(img, MultibandImage):
        raise TypeError("save_image expects a MultibandImage")
    header = {"bands": img.bands, "height": img.height, "width": img.width, "dtype": DTYPE_TAG}
    if img.band_names is not None:
        header["band_names"] = list(img.band_names)
    pp = _payload_path(path)
    pp.parent.mkdir(parents=True, exist_ok=True)
    pp.write_bytes(img.data.astype(_LE_F32).tobytes())
    _header_path(path).write_text(json.dumps(header) + "\n")


def fit_normalization(img, p_lo: float = 1.0, p_hi: float = 99.0, clamp: bool = True) -> NormalizationSpec:
    """Per-band percentile stretch anchors.

    ``img`` may be a single image or a sequence of images sharing band count,
    in which case the anchors pool all pixels.
    """
    if not 0 <= p_lo < p_hi <= 100:
        raise RasterError(f"need 0 <= p_lo < p_hi <= 100, got {p_lo}, {p_hi}")
    images = [img] if isinstance(img, MultibandImage) else list(img)
    if not images:
        raise RasterError("no images to fit")
    bands = images[0].bands
    if any(im.bands != bands for im in images):
        raise RasterError("images differ in band count")
    pooled = np.concatenate([im.data.reshape(bands, -1) for im in images], axis=1).astype(np.float64)
    lo = percentile(pooled, p_lo, axis=1)
    hi = percentile(pooled, p_hi, axis=1)
    degenerate = np.nonzero(~(lo < hi))[0]
    if degenerate.size:
        raise RasterError(f"degenerate band(s) {degenerate.tolist()}: low == high")
    return NormalizationSpec(tuple(lo.tolist()), tuple(hi.tolist()), clamp)


def _anchors(img: MultibandImage, spec: NormalizationSpec):
    if img.bands != spec.bands:
        raise RasterError(f"normalization has {spec.bands} bands, image has {img.bands}")
    lo = np.asarray(spec.low, dtype=np.float64)[:, None, None]
    hi = np.asarray(spec.high, dtype=np.float64)[:, None, None]
    return lo, hi


def normalize(img: MultibandImage, spec: NormalizationSpec) -> MultibandImage:
    lo, hi = _anchors(img, spec)
    out = 2.0 * (img.data.astype(np.float64) - lo) / (hi - lo) - 1.0
    if spec.clamp:
        out = np.clip(out, -1.0, 1.0)
    return MultibandImage(out, img.band_names)


def denormalize(img: MultibandImage, spec: NormalizationSpec) -> MultibandImage:
    lo, hi = _anchors(img, spec)
    data = img.data.astype(np.float64)
    if spec.clamp:
        data = np.clip(data, -1.0, 1.0)
    out = (data + 1.0) * 0.5 * (hi - lo) + lo
    return MultibandImage(out, img.band_names)


def write_pgm(values: np.ndarray, path) -> None:
    """Binary P5 8-bit grayscale preview, min-max scaled to 0..255."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise RasterError("PGM export needs a 2-D array")
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.rint((values - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(values)
    write_pgm_bytes(scaled.astype(np.uint8), path)


def write_pgm_bytes(pixels: np.ndarray, path) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace byte ends the header
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise RasterError(f"{path}: not an 8-bit P5 PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def stack_images(images: Sequence[MultibandImage]) -> np.ndarray:
    """(N, bands, H, W) float32 batch."""
    return np.stack([im.data for im in images]).astype(np.float32)
