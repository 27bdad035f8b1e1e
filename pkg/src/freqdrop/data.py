"""Synthetic shortcut dataset, corruption suite and the FDDS dataset file format.

Every pixel value produced here is representable in float32, because the file
format stores float32; that keeps save/load round trips exact.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, FormatError
from .kernels import gaussian_kernel
from .rng import Domain, RngStream

# -- datasets ---------------------------------------------------------------


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,) ints in [0, num_classes)
    num_classes: int = 2

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError("need exactly one label per image")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)


def _f32_exact(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass
class ShortcutSpec:
    """Bars carry the label; a per-class sinusoidal grating is the shortcut.

    Class 0 is a horizontal bar with the high-frequency grating, class 1 a
    vertical bar with the low-frequency grating. ``rho`` is the probability
    that a sample carries its own class's grating; otherwise the grating class
    is drawn uniformly (so it still matches half of the time).
    """

    image_size: int = 28
    num_classes: int = 2
    bar_width: int = 3
    bar_length: int = 20
    bar_jitter: int = 4
    background: float = 0.4
    bar_contrast: float = 0.25
    bar_contrast_min: float = 0.0  # per-sample contrast ~ U[bar_contrast_min, bar_contrast]
    amplitude: float = 0.15
    freq0: float = 2 * math.pi * 0.40
    freq1: float = 2 * math.pi * 0.15
    grating_angle: float = math.pi / 4
    rho_train: float = 0.95
    rho_test: float = 0.5
    noise: float = 0.05

    def validate(self) -> "ShortcutSpec":
        if self.num_classes != 2:
            raise ConfigError("the shortcut dataset has exactly two classes")
        for name in ("rho_train", "rho_test"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"data.{name} must lie in [0, 1]")
        if not 0.0 <= self.bar_contrast_min <= self.bar_contrast:
            raise ConfigError("need 0 <= data.bar_contrast_min <= data.bar_contrast")
        if self.image_size < self.bar_length or self.bar_width < 1 or self.bar_length < self.bar_width:
            raise ConfigError("bar must fit inside the image and be longer than it is wide")
        lo = self.background - self.amplitude - self.noise
        hi = self.background + self.bar_contrast + self.amplitude + self.noise
        if self.amplitude < 0 or self.noise < 0 or lo < -1e-12 or hi > 1 + 1e-12:
            raise ConfigError(f"pixel range [{lo:.3f}, {hi:.3f}] does not fit in [0, 1]")
        return self

    def rho(self, split: str) -> float:
        if split in ("train", "val"):
            return self.rho_train
        if split == "test":
            return self.rho_test
        raise ConfigError(f"split must be 'train', 'val' or 'test', got {split!r}")

    def frequency(self, cls: int) -> float:
        return self.freq0 if cls == 0 else self.freq1


def _bar_masks(spec, labels, rng):
    n, s = len(labels), spec.image_size
    centre = (s - 1) / 2.0
    # bar centre, jittered uniformly around the image centre
    lo_long = max(0, int(round(centre - spec.bar_length / 2 - spec.bar_jitter)))
    hi_long = min(s - spec.bar_length, int(round(centre - spec.bar_length / 2 + spec.bar_jitter)))
    lo_short = max(0, int(round(centre - spec.bar_width / 2 - spec.bar_jitter)))
    hi_short = min(s - spec.bar_width, int(round(centre - spec.bar_width / 2 + spec.bar_jitter)))
    start_long = rng.integers(lo_long, hi_long + 1, size=n)
    start_short = rng.integers(lo_short, hi_short + 1, size=n)
    idx = np.arange(s)
    along = (idx[None, :] >= start_long[:, None]) & (idx[None, :] < start_long[:, None] + spec.bar_length)
    across = (idx[None, :] >= start_short[:, None]) & (idx[None, :] < start_short[:, None] + spec.bar_width)
    horizontal = across[:, :, None] & along[:, None, :]  # rows x cols
    vertical = along[:, :, None] & across[:, None, :]
    return np.where((labels == 0)[:, None, None], horizontal, vertical)


def gen_shortcut_dataset(spec: ShortcutSpec, n: int, split: str = "train", seed: int = 0, rho=None) -> Dataset:
    """Deterministic in ``(spec, n, split, seed)``; ``rho`` overrides the split's rate."""
    spec.validate()
    if n < 1:
        raise ConfigError("dataset size must be at least 1")
    rho = spec.rho(split) if rho is None else float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ConfigError("rho must lie in [0, 1]")
    domain = {"train": Domain.DATA_TRAIN, "val": Domain.DATA_VAL, "test": Domain.DATA_TEST}[split]
    rng = RngStream.for_(seed, domain)
    s = spec.image_size
    labels = rng.integers(0, 2, size=n)
    bars = _bar_masks(spec, labels, rng)
    matched = rng.random(n) < rho
    random_cls = rng.integers(0, 2, size=n)
    grating_cls = np.where(matched, labels, random_cls)
    phase = rng.uniform(0.0, 2 * math.pi, size=n)
    noise = rng.uniform(-spec.noise, spec.noise, size=(n, s, s))

    y, x = np.meshgrid(np.arange(s, dtype=np.float64), np.arange(s, dtype=np.float64), indexing="ij")
    proj = x * math.cos(spec.grating_angle) + y * math.sin(spec.grating_angle)
    freq = np.where(grating_cls == 0, spec.freq0, spec.freq1)
    grating = spec.amplitude * np.sin(freq[:, None, None] * proj[None] + phase[:, None, None])

    contrast = rng.uniform(spec.bar_contrast_min, spec.bar_contrast, size=n)
    img = spec.background + contrast[:, None, None] * bars + grating + noise
    img = np.clip(img, 0.0, 1.0)[:, None]
    ds = Dataset(_f32_exact(img), labels, spec.num_classes)
    ds.grating_labels = grating_cls
    return ds


# -- corruptions ----------------------------------------------------------------


class CorruptionKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    GAUSSIAN_BLUR = "gaussian_blur"
    CONTRAST = "contrast"
    PIXELATE = "pixelate"

    @classmethod
    def parse(cls, name: str) -> "CorruptionKind":
        if isinstance(name, cls):
            return name
        key = name.strip().lower().replace("-", "_")
        key = {"noise": "gaussian_noise", "blur": "gaussian_blur"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown corruption kind {name!r}") from None


SEVERITY_TABLES = {
    CorruptionKind.GAUSSIAN_NOISE: (0.0, 0.04, 0.06, 0.08, 0.09, 0.10),
    CorruptionKind.GAUSSIAN_BLUR: (0.0, 0.4, 0.6, 0.8, 1.0, 1.2),
    CorruptionKind.CONTRAST: (1.0, 0.75, 0.6, 0.5, 0.4, 0.3),
    CorruptionKind.PIXELATE: (1, 2, 2, 4, 4, 7),
}
MAX_SEVERITY = 5


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int

    def __post_init__(self):
        if not isinstance(self.kind, CorruptionKind):
            object.__setattr__(self, "kind", CorruptionKind.parse(self.kind))
        if int(self.severity) != self.severity or not 0 <= self.severity <= MAX_SEVERITY:
            raise ConfigError(f"severity must be an integer in [0, {MAX_SEVERITY}], got {self.severity}")

    @property
    def parameter(self):
        return SEVERITY_TABLES[self.kind][self.severity]


def noise_field(shape, sigma: float, seed: int) -> np.ndarray:
    """The additive noise GaussianNoise uses for ``seed`` (before clamping)."""
    return RngStream.for_(seed, Domain.CORRUPT).normal(0.0, 1.0, size=shape) * sigma


def _blur(images, sigma):
    size = 2 * math.ceil(3 * sigma) + 1
    k = gaussian_kernel(sigma, size).values
    return ndimage.correlate(images, k[None, None], mode="nearest")


def _pixelate(images, factor):
    h, w = images.shape[2:]
    rows = np.minimum(np.arange(0, h, factor) + factor // 2, h - 1)
    cols = np.minimum(np.arange(0, w, factor) + factor // 2, w - 1)
    small = images[:, :, rows][:, :, :, cols]
    return np.repeat(np.repeat(small, factor, axis=2), factor, axis=3)[:, :, :h, :w]


def corrupt(ds: Dataset, spec: CorruptionSpec, seed: int = 0) -> Dataset:
    """Apply one corruption at one severity; severity 0 returns the data unchanged."""
    if spec.severity == 0:
        return Dataset(ds.images.copy(), ds.labels.copy(), ds.num_classes)
    x = ds.images
    param = spec.parameter
    if spec.kind is CorruptionKind.GAUSSIAN_NOISE:
        out = x + noise_field(x.shape, param, seed)
    elif spec.kind is CorruptionKind.GAUSSIAN_BLUR:
        out = _blur(x, param)
    elif spec.kind is CorruptionKind.CONTRAST:
        mean = x.mean(axis=(1, 2, 3), keepdims=True)
        out = mean + param * (x - mean)
    else:
        out = _pixelate(x, param)
    return Dataset(_f32_exact(np.clip(out, 0.0, 1.0)), ds.labels.copy(), ds.num_classes)


def corruption_grid(kinds=None, severities=range(1, MAX_SEVERITY + 1)) -> list[CorruptionSpec]:
    kinds = list(CorruptionKind) if kinds is None else [CorruptionKind.parse(k) for k in kinds]
    return [CorruptionSpec(k, s) for k in kinds for s in severities]


# -- FDDS file format -------------------------------------------------------------
#
# magic "FDDS", u32 version, u32 N, u32 C, u32 H, u32 W, u32 num_classes,
# N*C*H*W float32 pixels, N u16 labels. Little-endian.

DS_MAGIC = b"FDDS"
DS_VERSION = 1
_HEADER = struct.Struct("<4s6I")
_MAX_ELEMENTS = 1 << 34


def encode_dataset(ds: Dataset) -> bytes:
    n, c, h, w = ds.images.shape
    if ds.num_classes > 0xFFFF:
        raise DataError("too many classes for u16 labels")
    header = _HEADER.pack(DS_MAGIC, DS_VERSION, n, c, h, w, ds.num_classes)
    pixels = ds.images.astype("<f4").tobytes()
    labels = ds.labels.astype("<u2").tobytes()
    return header + pixels + labels


def decode_dataset(buf: bytes) -> Dataset:
    if len(buf) < 4 or buf[:4] != DS_MAGIC:
        raise FormatError(f"bad dataset magic {buf[:4]!r}, expected {DS_MAGIC!r}", offset=0)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated dataset header", offset=len(buf))
    _, version, n, c, h, w, num_classes = _HEADER.unpack_from(buf, 0)
    if version != DS_VERSION:
        raise FormatError(f"unsupported dataset version {version}", offset=4)
    count = n * c * h * w
    if count > _MAX_ELEMENTS:
        raise FormatError(f"declared dimensions {n}x{c}x{h}x{w} overflow the size limit", offset=8)
    pos = _HEADER.size
    need = pos + 4 * count + 2 * n
    if len(buf) < need:
        raise FormatError(f"file truncated: need {need} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after labels", offset=need)
    pixels = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float64)
    labels = np.frombuffer(buf, dtype="<u2", count=n, offset=pos + 4 * count).astype(np.int64)
    try:
        return Dataset(pixels.reshape(n, c, h, w), labels, num_classes)
    except DataError as e:
        raise FormatError(str(e), offset=pos + 4 * count) from None


def save_dataset(path, ds: Dataset):
    path = os.fspath(path)
    if not path:
        raise FileNotFoundError("empty dataset path")
    payload = encode_dataset(ds)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".fdds")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path) -> Dataset:
    path = os.fspath(path)
    if not path:
        raise FileNotFoundError("empty dataset path")
    with open(path, "rb") as f:
        return decode_dataset(f.read())
