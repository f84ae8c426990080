"""Occlusion (patch drop) and grid-shuffle perturbations.

All randomness comes from :class:`SplitMix64`, so a ``(operation, seed)``
pair produces the same mask or permutation on every platform.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ShapeError

__all__ = [
    "SplitMix64",
    "DropMask",
    "ShuffleSpec",
    "random_drop",
    "salient_drop",
    "nonsalient_drop",
    "apply_mask",
    "shuffle",
    "apply_shuffle",
    "shuffle_cells",
]

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
# stream offset for fill noise, so noise and index sampling never share draws
_NOISE_STREAM = 0xD1B54A32D192ED03


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014).

    Output ``n`` is ``mix(seed + n * 0x9E3779B97F4A7C15)`` with the standard
    finalizer (shifts 30/27/31, multipliers 0xBF58476D1CE4E5B9 and
    0x94D049BB133111EB). Derived draws:

    * ``below(m)``: ``(u64 >> 11) * m >> 53`` (53-bit multiply-shift)
    * ``random()``: ``(u64 >> 11) * 2**-53`` in ``[0, 1)``
    * ``normal()``: Box-Muller on consecutive pairs, cosine branch first
    """

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n=None):
        count = 1 if n is None else int(n)
        idx = np.arange(self.counter + 1, self.counter + 1 + count, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(_GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        return int(z[0]) if n is None else z

    def below(self, m):
        return ((self.next_u64() >> 11) * int(m)) >> 53

    def random(self, n):
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n):
        pairs = (n + 1) // 2
        u = self.random(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def sample(self, population, k):
        """``k`` distinct items by partial Fisher-Yates, in draw order."""
        items = list(population)
        if not 0 <= k <= len(items):
            raise ValueError(f"cannot draw {k} items from {len(items)}")
        for t in range(k):
            s = t + self.below(len(items) - t)
            items[t], items[s] = items[s], items[t]
        return items[:k]

    def permutation(self, n):
        return self.sample(range(n), n)


@dataclass(frozen=True)
class DropMask:
    """Patches (1-based) to occlude and how to fill them.

    ``fill_space="raw"`` fills with raw pixel value 0 (black) mapped through
    the model normalization; ``"normalized"`` fills with 0 after
    normalization. Noise fill is standard Gaussian in normalized space.
    """

    dropped: tuple
    n_patches: int
    fill_mode: str = "zero"
    seed: int = 0
    fill_space: str = "raw"
    mode: str = "random"
    ratio: float = 0.0

    def __post_init__(self):
        if self.fill_mode not in ("zero", "noise"):
            raise ValueError(f"fill_mode must be 'zero' or 'noise', got {self.fill_mode!r}")
        if self.fill_space not in ("raw", "normalized"):
            raise ValueError(f"fill_space must be 'raw' or 'normalized', got {self.fill_space!r}")
        if any(not 1 <= i <= self.n_patches for i in self.dropped):
            raise ValueError("dropped indices must lie in 1..n_patches")
        object.__setattr__(self, "dropped", tuple(sorted(int(i) for i in self.dropped)))

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        data["dropped"] = tuple(data["dropped"])
        return cls(**data)


@dataclass(frozen=True)
class ShuffleSpec:
    """Grid shuffle: output cell ``c`` holds input cell ``permutation[c]``.

    Cells are numbered row-major from 0.
    """

    grid: int
    permutation: tuple
    seed: int = 0

    def __post_init__(self):
        perm = tuple(int(p) for p in self.permutation)
        if sorted(perm) != list(range(self.grid * self.grid)):
            raise ValueError("permutation is not a bijection on the grid cells")
        object.__setattr__(self, "permutation", perm)

    def inverse(self):
        inv = [0] * len(self.permutation)
        for c, src in enumerate(self.permutation):
            inv[src] = c
        return ShuffleSpec(self.grid, tuple(inv), self.seed)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        data["permutation"] = tuple(data["permutation"])
        return cls(**data)


def _check_ratio(r):
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {r}")


def _drop_from(eligible, r, seed, n_patches, **kw):
    _check_ratio(r)
    eligible = sorted(int(i) for i in eligible)
    # the epsilon keeps decimal ratios such as 0.29 * 100 from flooring to 28
    k = int(np.floor(len(eligible) * r + 1e-9))
    k = min(k, len(eligible))
    chosen = SplitMix64(seed).sample(eligible, k)
    return DropMask(dropped=tuple(chosen), n_patches=n_patches, seed=seed, ratio=r, **kw)


def random_drop(n_patches, r, seed, fill_mode="zero", fill_space="raw"):
    """``floor(N * r)`` patches drawn uniformly without replacement from 1..N."""
    return _drop_from(
        range(1, n_patches + 1), r, seed, n_patches,
        fill_mode=fill_mode, fill_space=fill_space, mode="random",
    )


def salient_drop(labels, r, seed, fill_mode="zero", fill_space="raw"):
    """``floor(r * |object patches|)`` patches drawn from the object-labeled set."""
    objects = labels.object_patches()
    if not objects:
        raise ValueError("salient drop needs at least one object patch")
    return _drop_from(
        objects, r, seed, labels.n_patches,
        fill_mode=fill_mode, fill_space=fill_space, mode="salient",
    )


def nonsalient_drop(labels, r, seed, fill_mode="zero", fill_space="raw"):
    """``floor(r * |background patches|)`` patches drawn from the background set."""
    background = labels.background_patches()
    if not background:
        raise ValueError("non-salient drop needs at least one background patch")
    return _drop_from(
        background, r, seed, labels.n_patches,
        fill_mode=fill_mode, fill_space=fill_space, mode="nonsalient",
    )


def apply_mask(image, mask, patch_size=16, norm_mean=(0.5, 0.5, 0.5), norm_std=(0.5, 0.5, 0.5)):
    """Occlude the masked patches of a normalized ``[H, W, C]`` image."""
    image = np.asarray(image, dtype=np.float32)
    h, w, c = image.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
    gw = w // p
    if mask.n_patches != (h // p) * gw:
        raise ShapeError(f"mask is for {mask.n_patches} patches, image has {(h // p) * gw}")
    out = image.copy()
    if not mask.dropped:
        return out
    if mask.fill_mode == "noise":
        noise = SplitMix64(mask.seed ^ _NOISE_STREAM).normal(len(mask.dropped) * p * p * c)
        noise = noise.astype(np.float32).reshape(len(mask.dropped), p, p, c)
    elif mask.fill_space == "raw":
        fill = -np.asarray(norm_mean, dtype=np.float64) / np.asarray(norm_std, dtype=np.float64)
        fill = fill.astype(np.float32)
    else:
        fill = np.zeros(c, dtype=np.float32)
    for n, idx in enumerate(mask.dropped):
        r, col = divmod(idx - 1, gw)
        cell = (slice(r * p, (r + 1) * p), slice(col * p, (col + 1) * p))
        out[cell] = noise[n] if mask.fill_mode == "noise" else fill
    return out


def shuffle_cells(array, spec):
    """Rearrange the ``g x g`` cells of the leading two axes of ``array``."""
    array = np.asarray(array)
    g = spec.grid
    h, w = array.shape[:2]
    if h % g or w % g:
        raise ShapeError(f"array {h}x{w} not divisible into a {g}x{g} grid")
    ch, cw = h // g, w // g
    rest = array.shape[2:]
    cells = array.reshape(g, ch, g, cw, *rest).swapaxes(1, 2).reshape(g * g, ch, cw, *rest)
    cells = cells[list(spec.permutation)]
    return cells.reshape(g, g, ch, cw, *rest).swapaxes(1, 2).reshape(array.shape).copy()


def apply_shuffle(image, spec):
    return shuffle_cells(image, spec)


def shuffle(image, g, seed):
    """Randomly permute the ``g x g`` equal cells of ``image``."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    if g < 1 or h % g or w % g:
        raise ShapeError(f"image {h}x{w} not divisible into a {g}x{g} grid")
    spec = ShuffleSpec(grid=g, permutation=tuple(SplitMix64(seed).permutation(g * g)), seed=seed)
    return shuffle_cells(image, spec), spec
