"""Input-transform gradient estimators: diversity, smoothing, scaling.

Three transforms can wrap any loss oracle, separately or composed:

- diversity ("dim"): with probability p, resize the input to a random
  side r, place it at a random offset on a zero canvas of side pad_to,
  resize back to the input shape, and pull the gradient back through the
  exact adjoint of that linear chain.
- smoothing ("tim"): convolve the gradient with a fixed Gaussian kernel.
- scaling ("sim"): average loss and gradient over the scale copies
  x / 2^i for i = 0..m-1; the chain rule contributes the 1 / 2^i factor
  to each copy's gradient.

The composition runs the scale loop outermost with an independent
diversity draw per copy, and smooths the averaged gradient last.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ShapeMismatch
from .sampling import make_rng
from .tensor import (
    Kernel2D,
    conv2d_same,
    pad_zero,
    pad_zero_adjoint,
    resize_bilinear,
    resize_bilinear_adjoint,
)

TRANSFORM_NAMES = ("dim", "tim", "sim")

# pad_to defaults to ceil(PAD_RATIO * side): 28 -> 31, mirroring the usual
# 299 -> 330 resize headroom at desk scale.
PAD_RATIO = 1.104


@dataclass(frozen=True)
class TransformConfig:
    enabled: tuple = ()
    dim_prob: float = 0.5
    dim_resize_low: int | None = None   # None: the input side
    dim_pad_to: int | None = None       # None: ceil(PAD_RATIO * side)
    tim_kernel_size: int = 7
    tim_sigma: float = 3.0
    sim_copies: int = 5

    def __post_init__(self):
        names = tuple(sorted(set(self.enabled)))
        for n in names:
            if n not in TRANSFORM_NAMES:
                raise ValueError(f"unknown transform {n!r}")
        object.__setattr__(self, "enabled", names)
        if not 0.0 <= self.dim_prob <= 1.0:
            raise ValueError(f"dim_prob must be in [0, 1], got {self.dim_prob}")
        if self.tim_kernel_size % 2 == 0 or self.tim_kernel_size < 1:
            raise ValueError("tim kernel side must be odd and >= 1")
        if self.tim_sigma <= 0.0:
            raise ValueError("tim sigma must be > 0")
        if self.sim_copies < 1:
            raise ValueError("sim needs at least one copy")
        low, pad = self.dim_resize_low, self.dim_pad_to
        if low is not None and low < 1:
            raise ValueError("dim resize_low must be >= 1")
        if low is not None and pad is not None and low > pad:
            raise ValueError(f"dim resize_low {low} exceeds pad_to {pad}")

    def resolve_dim(self, side: int) -> tuple:
        """Concrete (resize_low, pad_to) for a given input side."""
        low = self.dim_resize_low if self.dim_resize_low is not None else side
        pad = self.dim_pad_to if self.dim_pad_to is not None else math.ceil(PAD_RATIO * side)
        if low > pad:
            raise ValueError(f"dim resize_low {low} exceeds pad_to {pad}")
        return low, pad


@lru_cache(maxsize=64)
def tim_kernel(size: int = 7, sigma: float = 3.0) -> Kernel2D:
    """Gaussian weights exp(-(di^2+dj^2) / (2 sigma^2)) normalized to sum 1."""
    if size % 2 == 0:
        raise ValueError("kernel side must be odd")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=float)
    w = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    w = w / w.sum()
    w.setflags(write=False)
    return Kernel2D(w)


def draw_dim_geometry(cfg: TransformConfig, shape: tuple, rng) -> tuple | None:
    """Sample (r, top, left, pad_to) with probability dim_prob, else None.

    The probability gate always consumes exactly one uniform draw, so a
    p=0 run replays the same stream as any other p (transform never
    taken, identical draw ledger).
    """
    h, w, _ = shape
    if h != w:
        raise ShapeMismatch(f"diversity transform needs square inputs, got {h}x{w}")
    u = rng.uniform()
    if not u < cfg.dim_prob:
        return None
    low, pad = cfg.resolve_dim(h)
    r = low if low == pad else int(rng.integers(low, pad))
    top = int(rng.integers(0, pad - r + 1))
    left = int(rng.integers(0, pad - r + 1))
    return r, top, left, pad


def _diversified_loss_grad(oracle, x, y, geometry):
    """Loss/grad through resize(r) -> pad -> resize(back); exact adjoint pullback."""
    if geometry is None:
        return oracle.loss_and_grad(x, y)
    r, top, left, pad = geometry
    h, w, _ = x.shape
    z = resize_bilinear(x, r, r)
    z = pad_zero(z, top, left, pad, pad)
    z = resize_bilinear(z, h, w)
    loss, gz = oracle.loss_and_grad(z, y)
    g = resize_bilinear_adjoint(gz, pad, pad)
    g = pad_zero_adjoint(g, top, left, r, r)
    g = resize_bilinear_adjoint(g, h, w)
    return loss, g


def dim_gradient(oracle, x, y, cfg: TransformConfig, rng):
    """Diversity-transformed loss and input gradient (single draw)."""
    return _diversified_loss_grad(oracle, x, y, draw_dim_geometry(cfg, x.shape, rng))


def tim_gradient(oracle, x, y, kernel: Kernel2D):
    """Plain loss; gradient convolved with the smoothing kernel."""
    loss, g = oracle.loss_and_grad(x, y)
    return loss, conv2d_same(g, kernel)


def sim_gradient(oracle, x, y, copies: int):
    """Mean loss/gradient over x / 2^i, with the 1 / 2^i chain factor."""
    total_loss = 0.0
    total_grad = None
    for i in range(copies):
        s = 0.5**i
        loss_i, g_i = oracle.loss_and_grad(x * s, y)
        total_loss += loss_i
        contrib = s * g_i
        total_grad = contrib if total_grad is None else total_grad + contrib
    return total_loss / copies, total_grad / copies


def compose_dts(oracle, x, y, cfg: TransformConfig, rng):
    """The composed estimator: scale loop outside, fresh diversity draw per
    copy, smoothing applied once to the averaged gradient."""
    copies = cfg.sim_copies if "sim" in cfg.enabled else 1
    use_dim = "dim" in cfg.enabled
    total_loss = 0.0
    total_grad = None
    for i in range(copies):
        s = 0.5**i
        xi = x * s
        geometry = draw_dim_geometry(cfg, x.shape, rng) if use_dim else None
        loss_i, g_i = _diversified_loss_grad(oracle, xi, y, geometry)
        total_loss += loss_i
        contrib = s * g_i
        total_grad = contrib if total_grad is None else total_grad + contrib
    loss = total_loss / copies
    grad = total_grad / copies
    if "tim" in cfg.enabled:
        grad = conv2d_same(grad, tim_kernel(cfg.tim_kernel_size, cfg.tim_sigma))
    return loss, grad


class TransformedOracle:
    """Wraps a loss oracle so loss_and_grad goes through the transform stack.

    Prediction and logits stay untransformed: transforms shape the attack
    gradient, not the model being fooled.
    """

    def __init__(self, oracle, cfg: TransformConfig, rng):
        self.base = oracle
        self.cfg = cfg
        self.rng = rng

    @property
    def input_shape(self):
        return self.base.input_shape

    @property
    def num_classes(self):
        return self.base.num_classes

    def logits(self, x):
        return self.base.logits(x)

    def predict(self, x):
        return self.base.predict(x)

    def loss_and_grad(self, x, y):
        return compose_dts(self.base, x, y, self.cfg, self.rng)


def make_estimator(oracle, cfg: TransformConfig, rng):
    """The configured gradient estimator; the oracle itself when no
    transforms are enabled."""
    if not cfg.enabled:
        return oracle
    return TransformedOracle(oracle, cfg, rng)


class ReseededEstimator:
    """Transform stack with a fresh identically-seeded stream per call.

    Every loss_and_grad call replays the same transform draws, which makes
    the stochastic objective a deterministic function of x - exactly what
    a finite-difference probe needs.
    """

    def __init__(self, oracle, cfg: TransformConfig, seed: int):
        self.base = oracle
        self.cfg = cfg
        self.seed = seed

    @property
    def input_shape(self):
        return self.base.input_shape

    @property
    def num_classes(self):
        return self.base.num_classes

    def logits(self, x):
        return self.base.logits(x)

    def predict(self, x):
        return self.base.predict(x)

    def loss_and_grad(self, x, y):
        return compose_dts(self.base, x, y, self.cfg, make_rng(self.seed))
