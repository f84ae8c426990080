"""Neuron and embedding visualization across ViT layers.

Layer 0: the neuron ``(i, j)`` is shown as the tile ``f_j * x_p^i``, the
element-wise product of filter ``j`` with patch ``i``.

Layer >= 1: a neuron's visualization is a non-negative combination of the
layer-0 tiles of the same filter. Because the propagation rule is linear,
it is stored as a :class:`CoefficientField` (one weight per tile for each
token) instead of as images::

    layer 1:  C_1 = A_0[:, 1:]            (class key column dropped)
    layer l:  C_l = A_{l-1} @ C_{l-1}     (all N+1 tokens, class row included)

where ``A[i, k]`` is the head-averaged weight with which query ``i``
attends to key ``k``. The coefficients do not depend on the filter, so a
single field serves every ``j``; only the :class:`TileBasis` changes.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import tensor_core as tc
from .exceptions import InvariantError, NotStochasticError, ShapeError
from .imageio import write_png

__all__ = [
    "TileBasis",
    "CoefficientField",
    "RenderedVis",
    "tile",
    "layer0_filter_column",
    "layer0_embedding_overlay",
    "coeff_layer0",
    "coeff_layer1",
    "coeff_propagate",
    "coefficient_fields",
    "render",
    "normalize_display",
    "contact_sheet",
    "vis_filename",
    "NeuronVisualizer",
]

_STOCHASTIC_TOL = 1e-3


def normalize_display(pixels):
    """Global min-max map to 8-bit RGB, rounding half up; constants -> 128."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if not np.all(np.isfinite(pixels)):
        raise InvariantError("cannot display non-finite pixels")
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    lo, hi = pixels.min(), pixels.max()
    if hi == lo:
        out = np.full(pixels.shape, 128, dtype=np.uint8)
    else:
        out = np.floor((pixels - lo) * (255.0 / (hi - lo)) + 0.5).astype(np.uint8)
    if out.shape[2] == 1:
        out = np.repeat(out, 3, axis=2)
    return out


@dataclass(frozen=True)
class RenderedVis:
    pixels: np.ndarray
    display: np.ndarray

    @classmethod
    def from_pixels(cls, pixels):
        return cls(pixels=pixels, display=normalize_display(pixels))

    def save(self, path):
        write_png(path, self.display)


def _filter(weights, j, patch_size, channels):
    w = np.asarray(weights["patch_embed.weight"], dtype=np.float32)
    if not 1 <= j <= w.shape[0]:
        raise IndexError(f"filter index {j} outside 1..{w.shape[0]}")
    return w[j - 1].reshape(patch_size, patch_size, channels)


def _grid(image, patch_size):
    h, w = image.shape[:2]
    if h % patch_size or w % patch_size:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {patch_size}")
    return h // patch_size, w // patch_size


class TileBasis:
    """Layer-0 tiles ``f_j * x_p^k`` for one filter, computed on demand."""

    def __init__(self, image, weights, j, patch_size=16):
        self.image = np.asarray(image, dtype=np.float32)
        if self.image.ndim != 3:
            raise ShapeError(f"image must be [H, W, C], got {self.image.shape}")
        self.patch_size = patch_size
        self.channels = self.image.shape[2]
        self.filter_index = j
        self.filter = _filter(weights, j, patch_size, self.channels)
        self.grid = _grid(self.image, patch_size)

    @property
    def n_patches(self):
        return self.grid[0] * self.grid[1]

    def patch(self, k):
        if not 1 <= k <= self.n_patches:
            raise IndexError(f"patch index {k} outside 1..{self.n_patches}")
        r, c = divmod(k - 1, self.grid[1])
        p = self.patch_size
        return self.image[r * p:(r + 1) * p, c * p:(c + 1) * p]

    def tile(self, k):
        return self.patch(k) * self.filter

    def tiles(self):
        """All tiles as ``[N, P, P, C]``."""
        p, c = self.patch_size, self.channels
        patches = tc.unfold_patches(self.image, p).reshape(-1, p, p, c)
        return patches * self.filter

    def assemble(self, weights_per_tile=None):
        """Place (optionally scaled) tiles at their patch positions."""
        tiles = self.tiles()
        if weights_per_tile is not None:
            coeff = np.asarray(weights_per_tile, dtype=np.float32)
            if coeff.shape != (self.n_patches,):
                raise ShapeError(f"expected {self.n_patches} tile weights, got {coeff.shape}")
            tiles = tiles * coeff[:, None, None, None]
        h, w = self.image.shape[:2]
        return tc.fold_patches(tiles.reshape(self.n_patches, -1), h, w, self.patch_size, self.channels)


def tile(image, weights, i, j, patch_size=16):
    return TileBasis(image, weights, j, patch_size).tile(i)


def layer0_filter_column(image, weights, j, patch_size=16):
    """The whole-image view of filter ``j``: every patch times ``f_j``."""
    return RenderedVis.from_pixels(TileBasis(image, weights, j, patch_size).assemble())


def layer0_embedding_overlay(image, weights, i, patch_size=16, mode="mean"):
    """Composite of the D tiles of patch ``i``.

    ``mode`` is ``"mean"`` (default), ``"sum"`` or ``"maxabs"`` (per pixel,
    the tile value of largest magnitude).
    """
    image = np.asarray(image, dtype=np.float32)
    channels = image.shape[2]
    w = np.asarray(weights["patch_embed.weight"], dtype=np.float32)
    filters = w.reshape(w.shape[0], patch_size, patch_size, channels)
    patch = TileBasis(image, weights, 1, patch_size).patch(i)
    if mode == "mean":
        pixels = filters.mean(axis=0) * patch
    elif mode == "sum":
        pixels = filters.sum(axis=0) * patch
    elif mode == "maxabs":
        stack = filters * patch
        pick = np.abs(stack).argmax(axis=0)
        pixels = np.take_along_axis(stack, pick[None], axis=0)[0]
    else:
        raise ValueError(f"unknown overlay mode {mode!r}")
    return RenderedVis.from_pixels(pixels)


@dataclass(frozen=True)
class CoefficientField:
    """Tile weights for every token at one layer: ``coeffs[i, k-1]`` scales tile ``k``."""

    layer: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = self.coeffs
        if c.ndim != 2 or c.shape[0] != c.shape[1] + 1:
            raise ShapeError(f"coefficient field must be [(N+1), N], got {c.shape}")
        if np.any(c < 0):
            raise InvariantError("coefficient field has negative entries")
        if np.any(c.sum(axis=1) > 1 + _STOCHASTIC_TOL):
            raise InvariantError("coefficient row mass exceeds 1")

    @property
    def n_patches(self):
        return self.coeffs.shape[1]

    @property
    def degenerate_rows(self):
        """Tokens with zero tile mass (e.g. the class row under identity attention)."""
        return np.flatnonzero(self.coeffs.sum(axis=1) == 0)


def _check_stochastic(a, n_tokens):
    a = np.asarray(a, dtype=np.float32)
    if a.shape != (n_tokens, n_tokens):
        raise ShapeError(f"attention must be {(n_tokens, n_tokens)}, got {a.shape}")
    if np.any(a < 0) or np.any(np.abs(a.sum(axis=1, dtype=np.float64) - 1) > _STOCHASTIC_TOL):
        raise NotStochasticError("attention rows must be non-negative and sum to 1")
    return a


def coeff_layer0(n_patches):
    """Layer 0 as a field: each patch token is its own tile; the class row is empty."""
    c = np.zeros((n_patches + 1, n_patches), dtype=np.float32)
    c[1:] = np.eye(n_patches, dtype=np.float32)
    return CoefficientField(layer=0, coeffs=c)


def coeff_layer1(trace):
    if not trace.attn:
        raise ValueError("trace has no attention layers")
    a0 = np.asarray(trace.attn[0], dtype=np.float32)
    _check_stochastic(a0, a0.shape[0])
    return CoefficientField(layer=1, coeffs=np.ascontiguousarray(a0[:, 1:]))


def coeff_propagate(prev, attn):
    if prev.layer < 1:
        raise ValueError("propagation starts from a layer >= 1 field")
    a = _check_stochastic(attn, prev.coeffs.shape[0])
    return CoefficientField(layer=prev.layer + 1, coeffs=tc.matmul(a, prev.coeffs))


def coefficient_fields(trace):
    """Fields for layers ``0..L`` (index ``l`` holds layer ``l``)."""
    n = trace.attn[0].shape[0] - 1 if trace.attn else trace.z[0].shape[0] - 1
    fields = [coeff_layer0(n)]
    if trace.attn:
        fields.append(coeff_layer1(trace))
        for a in trace.attn[1:]:
            fields.append(coeff_propagate(fields[-1], a))
    return fields


def render(field, basis, i):
    """Pixels of token ``i`` at ``field.layer``: sum of its weighted tiles."""
    if not 0 <= i < field.coeffs.shape[0]:
        raise IndexError(f"token index {i} outside 0..{field.coeffs.shape[0] - 1}")
    if basis.n_patches != field.n_patches:
        raise ShapeError(f"basis has {basis.n_patches} tiles, field expects {field.n_patches}")
    return RenderedVis.from_pixels(basis.assemble(field.coeffs[i]))


def vis_filename(layer, token, filt):
    return f"vis_L{layer}_T{token}_F{filt}.png"


def contact_sheet(displays, gap=2, background=255):
    """Tile a rows x cols nested list of equally-sized RGB bitmaps into one image."""
    rows = len(displays)
    cols = max(len(r) for r in displays)
    h, w = displays[0][0].shape[:2]
    sheet = np.full(
        (rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap, 3), background, dtype=np.uint8
    )
    for r, row in enumerate(displays):
        for c, img in enumerate(row):
            y, x = r * (h + gap), c * (w + gap)
            sheet[y:y + h, x:x + w] = img
    return sheet


class NeuronVisualizer(BaseEstimator):
    """Fit on one image's forward trace, then render any (layer, token, filter).

    Parameters
    ----------
    weights : mapping
        Model weights; only ``patch_embed.weight`` is read.
    patch_size : int
    overlay : {"mean", "sum", "maxabs"}
        Compositing used for layer-0 patch-embedding overlays.
    """

    def __init__(self, weights=None, patch_size=16, overlay="mean"):
        self.weights = weights
        self.patch_size = patch_size
        self.overlay = overlay

    def fit(self, image, trace):
        self.image_ = np.asarray(image, dtype=np.float32)
        self.fields_ = coefficient_fields(trace)
        self._bases = {}
        return self

    def basis(self, j):
        check_is_fitted(self, "fields_")
        if j not in self._bases:
            self._bases[j] = TileBasis(self.image_, self.weights, j, self.patch_size)
        return self._bases[j]

    def visualize(self, layer, token, filt):
        check_is_fitted(self, "fields_")
        if not 0 <= layer < len(self.fields_):
            raise IndexError(f"layer {layer} outside 0..{len(self.fields_) - 1}")
        return render(self.fields_[layer], self.basis(filt), token)

    def filter_column(self, filt):
        return layer0_filter_column(self.image_, self.weights, filt, self.patch_size)

    def embedding_overlay(self, token):
        return layer0_embedding_overlay(
            self.image_, self.weights, token, self.patch_size, mode=self.overlay
        )
