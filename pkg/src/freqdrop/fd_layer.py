"""Frequency Dropout: randomized per-channel filtering of feature maps.

One filter family is drawn per layer per training step; every channel then
gets its own sigma, and an independent Bernoulli draw decides whether that
channel's kernel is switched off. A switched-off channel passes through
unchanged, so there is no inverted-dropout rescaling anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from . import _accel
from .errors import ConfigError, ShapeError
from .kernels import FilterFamily, Kernel2D, gabor_kernel, gaussian_kernel, log_kernel
from .rng import RngStream

FAMILIES = (FilterFamily.GAUSSIAN, FilterFamily.LOG, FilterFamily.GABOR)


class FDMode(str, Enum):
    FD_RF = "fd_rf"
    FD_GF = "fd_gf"
    CBS = "cbs"
    OFF = "off"

    @classmethod
    def parse(cls, name: str) -> "FDMode":
        if isinstance(name, cls):
            return name
        key = name.strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown FD mode {name!r}") from None


@dataclass
class FDConfig:
    mode: FDMode = FDMode.FD_RF
    p_gauss: float = 0.4
    p_log: float = 0.5
    p_gabor: float = 0.8
    sigma_low: float = 0.1
    sigma_high: float = 2.0
    kernel_size: int = 3
    gabor_lambda_range: tuple[float, float] = (2.0, 6.0)
    gabor_theta_range: tuple[float, float] = (0.0, math.pi)
    gabor_psi: float = 0.0
    gabor_gamma: float = 0.5
    # Optionally rescale the dominant lobe of a kernel to magnitude 1. For zero-DC
    # LoG the positive taps then sum to 1 and the negative taps to -1; without it
    # a sigma=0.1 LoG scales features by ~3000 and training stalls. Gabor taps are
    # already bounded by 1 and stay unnormalized by default.
    gabor_normalize: bool = False
    log_zero_dc: bool = True
    log_normalize: bool = True
    cbs_sigma0: float = 1.0
    cbs_decay: float = 0.1
    cbs_interval_epochs: int = 2
    # Keep the last CBS smoothing active at inference.
    cbs_keep_at_eval: bool = False

    def validate(self) -> "FDConfig":
        for name in ("p_gauss", "p_log", "p_gabor"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"fd.{name} must lie in [0, 1], got {p}")
        if not (0.0 < self.sigma_low < self.sigma_high):
            raise ConfigError(
                f"need 0 < fd.sigma_low < fd.sigma_high, got {self.sigma_low}, {self.sigma_high}"
            )
        if int(self.kernel_size) != self.kernel_size or self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"fd.kernel_size must be odd and positive, got {self.kernel_size}")
        lo, hi = self.gabor_lambda_range
        if not (0.0 < lo <= hi):
            raise ConfigError(f"fd.gabor.lambda_range must satisfy 0 < low <= high, got {lo}, {hi}")
        lo, hi = self.gabor_theta_range
        if not lo <= hi:
            raise ConfigError("fd.gabor.theta_range low exceeds high")
        if self.gabor_gamma <= 0:
            raise ConfigError("fd.gabor.gamma must be positive")
        if self.cbs_sigma0 <= 0 or self.cbs_decay <= 0 or self.cbs_interval_epochs < 1:
            raise ConfigError("fd.cbs.sigma0, fd.cbs.decay must be positive and fd.cbs.interval_epochs >= 1")
        if not isinstance(self.mode, FDMode):
            raise ConfigError(f"fd.mode must be an FDMode, got {self.mode!r}")
        return self

    def dropout_prob(self, family: FilterFamily) -> float:
        return {
            FilterFamily.GAUSSIAN: self.p_gauss,
            FilterFamily.LOG: self.p_log,
            FilterFamily.GABOR: self.p_gabor,
        }[family]

    # ``fd.*`` keys of the harness config file.
    _KEYS = {
        "fd.mode": "mode",
        "fd.p_gauss": "p_gauss",
        "fd.p_log": "p_log",
        "fd.p_gabor": "p_gabor",
        "fd.sigma_low": "sigma_low",
        "fd.sigma_high": "sigma_high",
        "fd.kernel_size": "kernel_size",
        "fd.gabor.lambda_range": "gabor_lambda_range",
        "fd.gabor.theta_range": "gabor_theta_range",
        "fd.gabor.psi": "gabor_psi",
        "fd.gabor.gamma": "gabor_gamma",
        "fd.gabor.normalize": "gabor_normalize",
        "fd.log.zero_dc": "log_zero_dc",
        "fd.log.normalize": "log_normalize",
        "fd.cbs.sigma0": "cbs_sigma0",
        "fd.cbs.decay": "cbs_decay",
        "fd.cbs.interval_epochs": "cbs_interval_epochs",
        "fd.cbs.keep_at_eval": "cbs_keep_at_eval",
    }

    def to_items(self) -> dict[str, str]:
        out = {}
        for key, attr in self._KEYS.items():
            value = getattr(self, attr)
            if isinstance(value, FDMode):
                text = value.value
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = ", ".join(repr(float(v)) for v in value)
            else:
                text = repr(value)
            out[key] = text
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "FDConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, text in items.items():
            if not key.startswith("fd."):
                continue
            attr = cls._KEYS.get(key)
            if attr is None:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[attr] = _coerce(key, text, types[attr])
        return cls(**kwargs).validate()


def _coerce(key, text, type_name):
    text = str(text).strip()
    try:
        if type_name == "FDMode":
            return FDMode.parse(text)
        if type_name == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if type_name == "int":
            return int(text)
        if type_name == "float":
            return float(text)
        if type_name.startswith("tuple"):
            parts = [p for p in text.replace("[", "").replace("]", "").split(",") if p.strip()]
            if len(parts) != 2:
                raise ValueError(text)
            return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {text!r}") from None
    raise ConfigError(f"unsupported type for {key}")


@dataclass
class FDDraw:
    """One materialized random draw for one FD layer application."""

    family: FilterFamily
    sigmas: np.ndarray
    active_mask: np.ndarray
    kernels: list = field(default_factory=list)
    gabor_lambdas: np.ndarray | None = None
    gabor_thetas: np.ndarray | None = None
    _stack: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.sigmas)
        if len(self.active_mask) != n or len(self.kernels) != n:
            raise ShapeError("sigmas, active_mask and kernels must have one entry per channel")
        for on, k in zip(self.active_mask, self.kernels):
            if bool(on) != (k is not None):
                raise ShapeError("active channels need a kernel and inactive ones must not have one")

    @property
    def channels(self) -> int:
        return len(self.sigmas)

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active_mask)

    def full_stack(self) -> np.ndarray:
        """``(n, k, k)`` array; rows of inactive channels are zero."""
        if self._stack is None:
            k = next((kk.values.shape[0] for kk in self.kernels if kk is not None), 1)
            stack = np.zeros((self.channels, k, k))
            for c, kk in enumerate(self.kernels):
                if kk is not None:
                    stack[c] = kk.values
            self._stack = stack
        return self._stack

    def kernel_stack(self) -> np.ndarray:
        """``(n_active, k, k)`` array of the active kernels, in channel order."""
        ks = [k.values for k in self.kernels if k is not None]
        if not ks:
            return np.zeros((0, 1, 1))
        return np.stack(ks)


def choose_filter(rng: RngStream) -> FilterFamily:
    """Uniform choice among Gaussian, LoG and Gabor."""
    return FAMILIES[int(rng.integers(3))]


def sample_sigmas(n: int, cfg: FDConfig, rng: RngStream) -> np.ndarray:
    return rng.uniform(cfg.sigma_low, cfg.sigma_high, size=n)


def sample_mask(n: int, p: float, rng: RngStream) -> np.ndarray:
    """Per-channel ON mask; each channel is OFF with probability ``p``."""
    return rng.random(n) >= p


def _lobe_normalize(k):
    # scale so the larger of the positive / negative lobes sums to magnitude 1
    pos = k.values[k.values > 0].sum()
    neg = -k.values[k.values < 0].sum()
    lobe = max(pos, neg)
    if lobe > 0:
        k.values = k.values / lobe
        k.scale = 1.0 / lobe
    return k


def _fd_log_kernel(sigma, cfg):
    k = log_kernel(sigma, cfg.kernel_size, zero_dc=cfg.log_zero_dc)
    return _lobe_normalize(k) if cfg.log_normalize else k


def _fd_gabor_kernel(sigma, lam, theta, cfg):
    k = gabor_kernel(sigma, lam, cfg.gabor_psi, cfg.gabor_gamma, theta, cfg.kernel_size)
    return _lobe_normalize(k) if cfg.gabor_normalize else k


def build_draw(n: int, cfg: FDConfig, rng: RngStream) -> FDDraw:
    """Family, sigmas, mask and kernels for one layer at one step."""
    cfg.validate()
    if cfg.mode is FDMode.FD_RF:
        family = choose_filter(rng)
    elif cfg.mode is FDMode.FD_GF:
        family = FilterFamily.GAUSSIAN
    else:
        raise ConfigError(f"build_draw needs mode fd_rf or fd_gf, got {cfg.mode.value}")
    sigmas = sample_sigmas(n, cfg, rng)
    mask = sample_mask(n, cfg.dropout_prob(family), rng)
    lams = thetas = None
    if family is FilterFamily.GABOR:
        lams = rng.uniform(*cfg.gabor_lambda_range, size=n)
        thetas = rng.uniform(*cfg.gabor_theta_range, size=n)
    kernels = []
    for c in range(n):
        if not mask[c]:
            kernels.append(None)
        elif family is FilterFamily.GAUSSIAN:
            kernels.append(gaussian_kernel(sigmas[c], cfg.kernel_size))
        elif family is FilterFamily.LOG:
            kernels.append(_fd_log_kernel(sigmas[c], cfg))
        else:
            kernels.append(_fd_gabor_kernel(sigmas[c], lams[c], thetas[c], cfg))
    return FDDraw(family, sigmas, mask, kernels, lams, thetas)


def cbs_sigma(epoch: int, cfg: FDConfig) -> float:
    """Stepwise-linear decaying smoothing sigma, clamped at zero."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return max(cfg.cbs_sigma0 - cfg.cbs_decay * (epoch // cfg.cbs_interval_epochs), 0.0)


def cbs_draw(n: int, sigma: float, cfg: FDConfig) -> FDDraw | None:
    """Gaussian smoothing on every channel, or ``None`` (identity) once sigma hits 0."""
    if sigma <= 0:
        return None
    k = gaussian_kernel(sigma, cfg.kernel_size)
    return FDDraw(
        FilterFamily.GAUSSIAN,
        np.full(n, float(sigma)),
        np.ones(n, dtype=bool),
        [k] * n,
    )


def _check(x, draw):
    if x.ndim != 4:
        raise ShapeError(f"expected a (N, C, H, W) tensor, got shape {x.shape}")
    if x.shape[1] != draw.channels:
        raise ShapeError(f"tensor has {x.shape[1]} channels but the draw covers {draw.channels}")


def depthwise_correlate(x: np.ndarray, kernels: np.ndarray, active=None) -> np.ndarray:
    """Per-channel 2D cross-correlation, stride 1, zero padding ``(k-1)/2``.

    ``x`` is ``(N, C, H, W)`` and ``kernels`` is ``(C, k, k)``. Channels whose
    ``active`` flag is False are copied through untouched.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    kernels = np.ascontiguousarray(kernels, dtype=np.float64)
    if kernels.ndim != 3 or kernels.shape[0] != x.shape[1] or kernels.shape[1] != kernels.shape[2]:
        raise ShapeError(f"need one square kernel per channel, got {kernels.shape} for {x.shape[1]} channels")
    if active is None:
        active = np.ones(x.shape[1], dtype=bool)
    return _accel.depthwise(x, kernels, np.asarray(active, dtype=np.bool_))


def fd_forward(x: np.ndarray, draw: FDDraw | None) -> np.ndarray:
    """Filter active channels with their kernels; inactive channels are copied."""
    if draw is None:
        return x
    _check(x, draw)
    return depthwise_correlate(x, draw.full_stack(), draw.active_mask)


def fd_backward(grad_out: np.ndarray, draw: FDDraw | None) -> np.ndarray:
    """Adjoint of :func:`fd_forward`: correlate with the 180-degree rotated kernels."""
    if draw is None:
        return grad_out
    _check(grad_out, draw)
    return depthwise_correlate(grad_out, draw.full_stack()[:, ::-1, ::-1], draw.active_mask)
