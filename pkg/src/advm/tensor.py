"""Image tensors and the linear operators used by the attack pipeline.

Images are float64 numpy arrays of shape (height, width, channels); pixel
data lives in [0, 1]. Everything here is a pure function of its inputs.
The resize and padding operators come with exact adjoints so gradients of
transformed inputs can be pulled back through the transform chain without
an autodiff framework: for each linear operator L we expose L and L^T
built from the same weight matrices, so <L x, y> == <x, L^T y> up to
float rounding.

Tensors are serialized in a small binary format: magic "EMTN", a version
byte, a little-endian u32 rank, the dims as little-endian u32, then the
raw float64 payload in row-major order. Round trips are bit-exact.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import correlate2d

from .errors import (
    BadMagic,
    CorruptFile,
    LengthMismatch,
    PlacementOutOfBounds,
    ShapeMismatch,
    VersionMismatch,
    ZeroGradient,
)
from .fileio import atomic_write_bytes

_MAGIC = b"EMTN"
_VERSION = 1

# L1 masses at or below this are treated as identically zero.
ZERO_L1_THRESHOLD = 1e-300


def validate_image(t: np.ndarray, pixel_domain: bool = False) -> None:
    """Raise ShapeMismatch / ValueError unless t is a well-formed image."""
    if not isinstance(t, np.ndarray) or t.ndim != 3:
        raise ShapeMismatch(f"expected a rank-3 array, got {getattr(t, 'shape', t)!r}")
    if t.dtype != np.float64:
        raise ShapeMismatch(f"expected float64, got {t.dtype}")
    if not np.all(np.isfinite(t)):
        raise ValueError("image contains non-finite values")
    if pixel_domain and (t.min() < 0.0 or t.max() > 1.0):
        raise ValueError("pixel values outside [0, 1]")


def sign(t: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) == 0."""
    return np.sign(t)


def l1_normalize(t: np.ndarray) -> np.ndarray:
    """t / ||t||_1. Raises ZeroGradient when the L1 mass is ~0."""
    mass = float(np.abs(t).sum())
    if mass <= ZERO_L1_THRESHOLD:
        raise ZeroGradient(f"L1 mass {mass} too small to normalize")
    return t / mass


def clamp01(t: np.ndarray) -> np.ndarray:
    return np.clip(t, 0.0, 1.0)


def project_linf(t: np.ndarray, origin: np.ndarray, eps: float) -> np.ndarray:
    """Project t onto the eps-ball around origin intersected with [0, 1]^d.

    Idempotent: applying it twice gives the same floats as applying it once.
    """
    if t.shape != origin.shape:
        raise ShapeMismatch(f"{t.shape} vs {origin.shape}")
    if eps < 0.0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return np.clip(np.clip(t, origin - eps, origin + eps), 0.0, 1.0)


@dataclass(frozen=True)
class Kernel2D:
    """A square 2-D convolution kernel with odd side length."""

    weights: np.ndarray

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeMismatch(f"kernel must be square, got {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ValueError(f"kernel side must be odd, got {w.shape[0]}")

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def identity_kernel(size: int = 1) -> Kernel2D:
    if size % 2 == 0:
        raise ValueError("kernel side must be odd")
    w = np.zeros((size, size))
    w[size // 2, size // 2] = 1.0
    return Kernel2D(w)


def conv2d_same(img: np.ndarray, kernel: Kernel2D) -> np.ndarray:
    """Channelwise 2-D correlation with zero padding; output shape == input shape.

    The identity kernel returns the input bit-for-bit. A symmetric kernel
    makes this operator self-adjoint, which is what the gradient smoothing
    path relies on.
    """
    validate_image(img)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = correlate2d(
            img[:, :, c], kernel.weights, mode="same", boundary="fill", fillvalue=0.0
        )
    return out


@lru_cache(maxsize=256)
def _bilinear_weights(new_n: int, old_n: int) -> np.ndarray:
    """Row-stochastic (new_n, old_n) interpolation matrix, half-pixel convention.

    When new_n == old_n this is exactly the identity matrix.
    """
    if new_n < 1 or old_n < 1:
        raise ValueError("sizes must be >= 1")
    w = np.zeros((new_n, old_n))
    scale = old_n / new_n
    for i in range(new_n):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), old_n - 1.0)
        i0 = int(np.floor(src))
        f = src - i0
        i1 = min(i0 + 1, old_n - 1)
        w[i, i0] += 1.0 - f
        w[i, i1] += f
    w.setflags(write=False)
    return w


def resize_bilinear(img: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Separable bilinear resize; resizing to the same shape is a bit-exact no-op."""
    validate_image(img)
    h, w, _ = img.shape
    wh = _bilinear_weights(new_h, h)
    ww = _bilinear_weights(new_w, w)
    tmp = np.tensordot(wh, img, axes=(1, 0))           # (new_h, w, c)
    out = np.tensordot(tmp, ww, axes=(1, 1))           # (new_h, c, new_w)
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def resize_bilinear_adjoint(grad: np.ndarray, old_h: int, old_w: int) -> np.ndarray:
    """Adjoint of resize_bilinear: maps output-shaped grads back to (old_h, old_w)."""
    validate_image(grad)
    new_h, new_w, _ = grad.shape
    wh = _bilinear_weights(new_h, old_h)
    ww = _bilinear_weights(new_w, old_w)
    tmp = np.tensordot(wh.T, grad, axes=(1, 0))        # (old_h, new_w, c)
    out = np.tensordot(tmp, ww.T, axes=(1, 1))         # (old_h, c, old_w)
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def pad_zero(img: np.ndarray, top: int, left: int, out_h: int, out_w: int) -> np.ndarray:
    """Place img on a zero canvas of (out_h, out_w) at offset (top, left)."""
    validate_image(img)
    h, w, c = img.shape
    if top < 0 or left < 0 or top + h > out_h or left + w > out_w:
        raise PlacementOutOfBounds(
            f"image {h}x{w} at ({top},{left}) does not fit in {out_h}x{out_w}"
        )
    out = np.zeros((out_h, out_w, c))
    out[top:top + h, left:left + w, :] = img
    return out


def pad_zero_adjoint(grad: np.ndarray, top: int, left: int, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of pad_zero: crop the gradient back to the pre-padding window."""
    validate_image(grad)
    return grad[top:top + in_h, left:left + in_w, :].copy()


def tensor_to_bytes(t: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(t, dtype="<f8")
    header = _MAGIC + bytes([_VERSION]) + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 9:
        raise CorruptFile("tensor blob shorter than its fixed header")
    if data[:4] != _MAGIC:
        raise BadMagic(f"expected {_MAGIC!r}, got {data[:4]!r}")
    if data[4] != _VERSION:
        raise VersionMismatch(f"unsupported tensor format version {data[4]}")
    (rank,) = struct.unpack_from("<I", data, 5)
    if rank > 32:
        raise CorruptFile(f"implausible tensor rank {rank}")
    offset = 9
    if len(data) < offset + 4 * rank:
        raise CorruptFile("tensor blob truncated inside the dims block")
    dims = struct.unpack_from(f"<{rank}I", data, offset)
    offset += 4 * rank
    count = 1
    for d in dims:
        count *= d
    payload = data[offset:]
    if len(payload) != 8 * count:
        raise LengthMismatch(
            f"dims {dims} need {8 * count} payload bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def save_tensor(path: str, t: np.ndarray) -> None:
    atomic_write_bytes(path, tensor_to_bytes(t))


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())
