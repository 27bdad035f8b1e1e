"""Analytic Gaussian, Laplacian-of-Gaussian and Gabor kernels on integer grids.

Grid convention: ``values[i, j]`` sits at column offset ``x = j - (k-1)/2``
and row offset ``y = i - (k-1)/2``; the origin is the kernel center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ParameterError


class FilterFamily(str, Enum):
    GAUSSIAN = "gaussian"
    LOG = "log"
    GABOR = "gabor"

    @classmethod
    def parse(cls, name: str) -> "FilterFamily":
        if isinstance(name, cls):
            return name
        key = name.strip().lower()
        aliases = {"g": "gaussian", "gauss": "gaussian", "ga": "gabor", "laplacian": "log"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ParameterError(f"unknown filter family {name!r}") from None


@dataclass(frozen=True)
class KernelParams:
    family: FilterFamily
    sigma: float
    size: int
    lam: float = 1.0
    psi: float = 0.0
    gamma: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        _check_sigma_size(self.sigma, self.size)
        if self.family is FilterFamily.GABOR and not (self.lam > 0 and self.gamma > 0):
            raise ParameterError("Gabor wavelength and aspect ratio must be positive")


@dataclass
class Kernel2D:
    values: np.ndarray
    params: KernelParams
    zero_dc: bool = False
    scale: float = field(default=1.0)

    @property
    def size(self) -> int:
        return self.params.size

    @property
    def family(self) -> FilterFamily:
        return self.params.family


def _check_sigma_size(sigma, size):
    if not (isinstance(sigma, (int, float, np.floating)) and math.isfinite(sigma) and sigma > 0):
        raise ParameterError(f"sigma must be a positive finite number, got {sigma!r}")
    if int(size) != size or size < 1 or size % 2 == 0:
        raise ParameterError(f"kernel size must be an odd positive integer, got {size!r}")


def grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x, y)`` offset grids of shape ``(size, size)``."""
    r = (size - 1) // 2
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    y, x = np.meshgrid(offsets, offsets, indexing="ij")
    return x, y


def gaussian_kernel(sigma: float, size: int) -> Kernel2D:
    """Positive, sum-normalized isotropic Gaussian."""
    params = KernelParams(FilterFamily.GAUSSIAN, float(sigma), int(size))
    x, y = grid(params.size)
    g = np.exp(-(x * x + y * y) / (2.0 * params.sigma**2))
    g /= g.sum()
    return Kernel2D(g, params)


def log_kernel(sigma: float, size: int, zero_dc: bool = True) -> Kernel2D:
    """Laplacian of Gaussian, optionally mean-subtracted so it sums to zero."""
    params = KernelParams(FilterFamily.LOG, float(sigma), int(size))
    x, y = grid(params.size)
    s2 = params.sigma**2
    r2 = (x * x + y * y) / (2.0 * s2)
    k = -(1.0 / (math.pi * s2 * s2)) * (1.0 - r2) * np.exp(-r2)
    if zero_dc:
        k -= k.mean()
    return Kernel2D(k, params, zero_dc=zero_dc)


def gabor_kernel(
    sigma: float,
    lam: float,
    psi: float,
    gamma: float,
    theta: float,
    size: int,
) -> Kernel2D:
    """Real part of a Gabor filter. Not normalized.

    Rotation: ``x' = x cos(theta) + y sin(theta)``,
    ``y' = -x sin(theta) + y cos(theta)``.
    """
    params = KernelParams(
        FilterFamily.GABOR, float(sigma), int(size), float(lam), float(psi), float(gamma), float(theta)
    )
    x, y = grid(params.size)
    c, s = math.cos(params.theta), math.sin(params.theta)
    xr = x * c + y * s
    yr = -x * s + y * c
    envelope = np.exp(-(xr * xr + params.gamma**2 * yr * yr) / (2.0 * params.sigma**2))
    carrier = np.cos(2.0 * math.pi * xr / params.lam + params.psi)
    return Kernel2D(envelope * carrier, params)


def make_kernel(params: KernelParams, zero_dc: bool = True) -> Kernel2D:
    if params.family is FilterFamily.GAUSSIAN:
        return gaussian_kernel(params.sigma, params.size)
    if params.family is FilterFamily.LOG:
        return log_kernel(params.sigma, params.size, zero_dc=zero_dc)
    return gabor_kernel(params.sigma, params.lam, params.psi, params.gamma, params.theta, params.size)


def dtft_magnitude(kernel: Kernel2D | np.ndarray, u: float, v: float) -> float:
    """``|sum_{x,y} w[y, x] exp(-i (u x + v y))|`` by direct summation.

    ``u`` is the horizontal (column) frequency, ``v`` the vertical one, both in
    radians per pixel.
    """
    values = kernel.values if isinstance(kernel, Kernel2D) else np.asarray(kernel, dtype=np.float64)
    x, y = grid(values.shape[0])
    return float(abs(np.sum(values * np.exp(-1j * (u * x + v * y)))))


def dump_kernel(kernel: Kernel2D) -> str:
    """Plain-text dump: a header line then ``k`` rows of 9-significant-digit values."""
    p = kernel.params
    header = [p.family.value, str(p.size), f"{p.sigma:.9g}"]
    if p.family is FilterFamily.GABOR:
        header += [f"{p.lam:.9g}", f"{p.psi:.9g}", f"{p.gamma:.9g}", f"{p.theta:.9g}"]
    rows = [" ".join(f"{v:.9g}" for v in row) for row in kernel.values]
    return "\n".join([" ".join(header), *rows]) + "\n"


def parse_kernel_dump(text: str) -> tuple[KernelParams, np.ndarray]:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ParameterError("empty kernel dump")
    head = lines[0].split()
    family = FilterFamily.parse(head[0])
    size = int(head[1])
    sigma = float(head[2])
    if family is FilterFamily.GABOR:
        if len(head) != 7:
            raise ParameterError("Gabor dump header needs family k sigma lambda psi gamma theta")
        lam, psi, gamma, theta = map(float, head[3:7])
        params = KernelParams(family, sigma, size, lam, psi, gamma, theta)
    else:
        params = KernelParams(family, sigma, size)
    values = np.array([[float(t) for t in ln.split()] for ln in lines[1:]], dtype=np.float64)
    if values.shape != (size, size):
        raise ParameterError(f"expected {size}x{size} values, got {values.shape}")
    return params, values
