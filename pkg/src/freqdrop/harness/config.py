"""Run configuration and its ``key = value`` text format.

Keys live in three sections, ``train.*``, ``fd.*`` and ``data.*``. A line may
also be a ``[section]`` header, after which bare keys get that prefix::

    # two-seed baseline
    train.method = baseline
    train.epochs = 30

    [fd]
    p_gauss = 0.4
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

from ..data import ShortcutSpec
from ..errors import ConfigError
from ..fd_layer import FDConfig, FDMode

SECTIONS = ("train", "fd", "data")


class Method(str, Enum):
    BASELINE = "baseline"
    CBS = "cbs"
    FD_GF = "fd_gf"
    FD_RF = "fd_rf"

    @classmethod
    def parse(cls, name: str) -> "Method":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown method {name!r} (choose from {choices})") from None

    @property
    def fd_mode(self) -> FDMode:
        return {
            Method.BASELINE: FDMode.OFF,
            Method.CBS: FDMode.CBS,
            Method.FD_GF: FDMode.FD_GF,
            Method.FD_RF: FDMode.FD_RF,
        }[self]


def parse_config_text(text: str) -> dict[str, str]:
    """Parse config text into an ordered ``{dotted key: raw value}`` dict."""
    items: dict[str, str] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if section and not key.startswith(section + "."):
            key = f"{section}.{key}"
        if key.split(".", 1)[0] not in SECTIONS or "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} is not in a train/fd/data section")
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    return items


def _to_int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {text!r}") from None


def _to_float(key, text):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite")
    return value


def _to_bool(key, text):
    low = text.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key} must be true or false, got {text!r}")


@dataclass
class DataConfig:
    spec: ShortcutSpec = field(default_factory=ShortcutSpec)
    n_train: int = 4000
    n_val: int = 500
    n_test: int = 2000
    seed: int = 0  # dataset seed, shared by every training seed
    train_path: str = ""  # optional FDDS file replacing the generated train split
    val_path: str = ""

    _INTS = ("n_train", "n_val", "n_test", "seed")
    _PATHS = ("train_path", "val_path")

    def validate(self) -> "DataConfig":
        self.spec.validate()
        if self.n_train < 1 or self.n_test < 1 or self.n_val < 0:
            raise ConfigError("data.n_train and data.n_test must be >= 1, data.n_val >= 0")
        if self.seed < 0:
            raise ConfigError("data.seed must be non-negative")
        return self

    def to_items(self) -> dict[str, str]:
        out = {f"data.{name}": str(getattr(self, name)) for name in self._INTS}
        for name in self._PATHS:
            if getattr(self, name):
                out[f"data.{name}"] = getattr(self, name)
        for f in fields(self.spec):
            out[f"data.{f.name}"] = repr(getattr(self.spec, f.name))
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "DataConfig":
        spec_types = {f.name: f.type for f in fields(ShortcutSpec)}
        kwargs, spec_kwargs = {}, {}
        for key, text in items.items():
            if not key.startswith("data."):
                continue
            name = key[len("data.") :]
            if name in cls._INTS:
                kwargs[name] = _to_int(key, text)
            elif name in cls._PATHS:
                kwargs[name] = text
            elif name in spec_types:
                conv = _to_int if spec_types[name] == "int" else _to_float
                spec_kwargs[name] = conv(key, text)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(spec=ShortcutSpec(**spec_kwargs), **kwargs).validate()


@dataclass
class TrainConfig:
    method: Method = Method.BASELINE
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    clip_norm: float = 1.0  # global gradient-norm cap, 0 = off
    normalize_input: bool = True  # standardize pixels with train-set mean/std
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    fd: FDConfig = field(default_factory=FDConfig)
    out_dir: str = "runs"
    run_id: str = ""

    def __post_init__(self):
        if not isinstance(self.method, Method):
            self.method = Method.parse(self.method)
        # the method decides how the FD layers behave
        if self.fd.mode != self.method.fd_mode:
            self.fd = replace(self.fd, mode=self.method.fd_mode)

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("train.momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be non-negative")
        if self.clip_norm < 0:
            raise ConfigError("train.clip_norm must be non-negative")
        if self.seed < 0 or self.seed >= 2**63:
            raise ConfigError("train.seed must be a non-negative 64-bit integer")
        self.data.validate()
        self.fd.validate()
        return self

    @property
    def name(self) -> str:
        return self.run_id or f"{self.method.value}_s{self.seed}"

    def with_overrides(self, method=None, seed=None, epochs=None, out_dir=None) -> "TrainConfig":
        cfg = replace(self)
        # an explicit run id names one (method, seed) pair, so drop it when either changes
        if method is not None:
            cfg = replace(cfg, method=Method.parse(method), run_id="")
        if seed is not None:
            cfg = replace(cfg, seed=int(seed), run_id="")
        if epochs is not None:
            cfg = replace(cfg, epochs=int(epochs))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        return cfg.validate()

    def to_items(self) -> dict[str, str]:
        out = {
            "train.method": self.method.value,
            "train.epochs": str(self.epochs),
            "train.batch_size": str(self.batch_size),
            "train.lr": repr(self.lr),
            "train.momentum": repr(self.momentum),
            "train.weight_decay": repr(self.weight_decay),
            "train.clip_norm": repr(self.clip_norm),
            "train.normalize_input": "true" if self.normalize_input else "false",
            "train.seed": str(self.seed),
            "train.out_dir": self.out_dir,
        }
        if self.run_id:
            out["train.run_id"] = self.run_id
        out.update(self.fd.to_items())
        out.update(self.data.to_items())
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items().items())

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        conv = {
            "epochs": _to_int,
            "batch_size": _to_int,
            "seed": _to_int,
            "lr": _to_float,
            "momentum": _to_float,
            "weight_decay": _to_float,
            "clip_norm": _to_float,
            "normalize_input": _to_bool,
        }
        for key, text in items.items():
            if not key.startswith("train."):
                continue
            name = key[len("train.") :]
            if name == "method":
                kwargs["method"] = Method.parse(text)
            elif name in ("out_dir", "run_id"):
                kwargs[name] = text
            elif name in conv:
                kwargs[name] = conv[name](key, text)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        method = kwargs.get("method", Method.BASELINE)
        fd_items = dict((k, v) for k, v in items.items() if k.startswith("fd."))
        if "fd.mode" in fd_items:
            mode = FDMode.parse(fd_items.pop("fd.mode"))
            if "method" in kwargs and mode != method.fd_mode:
                raise ConfigError(f"fd.mode={mode.value} contradicts train.method={method.value}")
            if "method" not in kwargs:
                method = {m.fd_mode: m for m in Method}[mode]
                kwargs["method"] = method
        fd = replace(FDConfig.from_items(fd_items), mode=method.fd_mode)
        data = DataConfig.from_items(items)
        return cls(data=data, fd=fd, **kwargs).validate()


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return TrainConfig.from_items(parse_config_text(text))
