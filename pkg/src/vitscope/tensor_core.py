"""Dense float32 kernels used by the ViT forward pass.

Tensors are plain C-contiguous ``numpy.float32`` arrays in row-major order.
Every public kernel returns a fresh array and rejects non-finite results.
"""

import math

import numpy as np
from scipy.special import erf

from .exceptions import InvariantError, ShapeError

__all__ = [
    "as_tensor",
    "matmul",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "unfold_patches",
    "fold_patches",
]

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def as_tensor(x, name="tensor"):
    """Return ``x`` as a C-contiguous float32 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float32, order="C")
    _check_finite(arr, name)
    return arr


def _check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{name} contains non-finite values")
    return arr


def matmul(a, b, accumulate="f32"):
    """Matrix product of two rank-2 tensors.

    ``accumulate="f64"`` promotes both operands before multiplying and rounds
    the result back to float32; it exists for comparisons against oracles.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if accumulate == "f64":
        out = (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    elif accumulate == "f32":
        out = a.astype(np.float32, copy=False) @ b.astype(np.float32, copy=False)
    else:
        raise ValueError(f"unknown accumulate mode {accumulate!r}")
    return _check_finite(np.ascontiguousarray(out), "matmul output")


def softmax_rows(a):
    a = np.asarray(a, dtype=np.float32)
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows expects rank 2, got shape {a.shape}")
    _check_finite(a, "softmax input")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis with the biased (population) variance."""
    x = np.asarray(x, dtype=np.float32)
    gamma = np.asarray(gamma, dtype=np.float32)
    beta = np.asarray(beta, dtype=np.float32)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: last extent {d} does not match gamma {gamma.shape} / beta {beta.shape}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    denom = np.sqrt(var + np.float32(eps))
    # eps=0 on a constant slice would divide 0 by 0
    denom = np.where(denom == 0, np.float32(1.0), denom)
    out = centered / denom * gamma + beta
    return _check_finite(out.astype(np.float32, copy=False), "layer_norm output")


def gelu(x, approximate=True):
    """GELU; the tanh approximation by default, exact ``x * Phi(x)`` otherwise."""
    x = np.asarray(x, dtype=np.float32)
    if approximate:
        inner = np.float32(_SQRT_2_OVER_PI) * (x + np.float32(0.044715) * x * x * x)
        out = np.float32(0.5) * x * (np.float32(1.0) + np.tanh(inner))
    else:
        out = 0.5 * x * (1.0 + erf(x.astype(np.float64) / math.sqrt(2.0)))
    return out.astype(np.float32, copy=False)


def unfold_patches(image, patch_size):
    """Split an ``[H, W, C]`` image into ``[N, P*P*C]`` rows.

    Patches are ordered left-to-right, top-to-bottom; each row is laid out
    as (patch row, patch column, channel).
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"unfold_patches expects [H, W, C], got {image.shape}")
    h, w, c = image.shape
    p = int(patch_size)
    if p <= 0 or h % p or w % p:
        raise ShapeError(f"image {h}x{w} is not divisible into {p}x{p} patches")
    gh, gw = h // p, w // p
    blocks = image.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(gh * gw, p * p * c))


def fold_patches(patches, height, width, patch_size, channels=None):
    """Inverse of :func:`unfold_patches`."""
    patches = np.asarray(patches)
    p = int(patch_size)
    if height % p or width % p:
        raise ShapeError(f"image {height}x{width} is not divisible into {p}x{p} patches")
    gh, gw = height // p, width // p
    if channels is None:
        channels = patches.shape[1] // (p * p)
    if patches.shape != (gh * gw, p * p * channels):
        raise ShapeError(
            f"expected patches of shape {(gh * gw, p * p * channels)}, got {patches.shape}"
        )
    blocks = patches.reshape(gh, gw, p, p, channels).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(height, width, channels))
