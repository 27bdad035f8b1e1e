"""Frequency Dropout: randomized feature-map filtering for a small numpy CNN."""

from .data import CorruptionKind, CorruptionSpec, Dataset, ShortcutSpec, corrupt, gen_shortcut_dataset
from .errors import ConfigError, DataError, FormatError, FreqDropError, NumericError, ParameterError, ShapeError
from .fd_layer import FDConfig, FDDraw, FDMode, build_draw, cbs_draw, cbs_sigma, fd_backward, fd_forward
from .kernels import FilterFamily, Kernel2D, KernelParams, dtft_magnitude, make_kernel
from .network import NetworkSpec, forward, forward_backward, load_checkpoint, save_checkpoint, tiny_net
from .rng import Domain, RngStream, stream_id

__version__ = "0.1.0"
