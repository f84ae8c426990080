"""Per-patch ground-truth labels from segmentation masks.

A patch takes an object's id when that object covers at least
``threshold`` (default 40%) of its pixels; otherwise it is background.
Id 0 is background; :data:`DROPPED` marks occluded patches after
:func:`remap_labels`.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ShapeError
from .imageio import read_index_mask, resize_nearest
from .perturb import DropMask, ShuffleSpec, shuffle_cells

__all__ = [
    "BACKGROUND",
    "DROPPED",
    "PatchLabelMap",
    "load_mask",
    "label_patches",
    "select_image",
    "remap_labels",
]

BACKGROUND = 0
DROPPED = -1
# VOC marks object boundaries with 255; treated as background
VOC_VOID = 255


@dataclass
class PatchLabelMap:
    """``labels[i - 1]`` is the label of patch ``i``; ``fractions`` keeps per-object coverage."""

    labels: np.ndarray
    fractions: list
    grid: tuple
    names: dict = field(default_factory=dict)

    @property
    def n_patches(self):
        return len(self.labels)

    def object_patches(self):
        return [i + 1 for i, lab in enumerate(self.labels) if lab > 0]

    def background_patches(self):
        return [i + 1 for i, lab in enumerate(self.labels) if lab == BACKGROUND]

    def object_counts(self):
        ids, counts = np.unique(self.labels[self.labels > 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def to_json(self):
        return json.dumps(
            {
                "grid": list(self.grid),
                "labels": [int(v) for v in self.labels],
                "fractions": [{str(k): float(v) for k, v in f.items()} for f in self.fractions],
                "names": {str(k): v for k, v in self.names.items()},
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(
            labels=np.asarray(data["labels"], dtype=np.int64),
            fractions=[{int(k): v for k, v in f.items()} for f in data["fractions"]],
            grid=tuple(data["grid"]),
            names={int(k): v for k, v in data.get("names", {}).items()},
        )


def load_mask(path, size=None, void_as_background=True):
    """Read a palette/grayscale mask PNG and its optional ``.json`` id -> name sidecar.

    With ``size`` the mask is nearest-neighbour resized to ``size x size``.
    Returns ``(mask, names)``.
    """
    mask = read_index_mask(path)
    if void_as_background:
        mask = np.where(mask == VOC_VOID, BACKGROUND, mask)
    if size is not None:
        mask = resize_nearest(mask, size, size)
    sidecar = Path(path).with_suffix(".json")
    names = {}
    if sidecar.exists():
        names = {int(k): str(v) for k, v in json.loads(sidecar.read_text()).items()}
    return mask, names


def label_patches(mask, patch_size, threshold=0.4, class_of=None, names=None):
    """Assign each patch the object covering the largest fraction of it.

    The argmax object wins if its fraction reaches ``threshold``; ties go to
    the smaller id. ``class_of`` optionally collapses instance ids into class
    ids before counting.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got {mask.shape}")
    h, w = mask.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"mask {h}x{w} not divisible by patch size {p}")
    if class_of is not None:
        mask = np.vectorize(lambda v: class_of.get(int(v), int(v)) if v else 0)(mask)
    gh, gw = h // p, w // p
    blocks = mask.reshape(gh, p, gw, p).swapaxes(1, 2).reshape(gh * gw, p * p)
    labels = np.zeros(gh * gw, dtype=np.int64)
    fractions = []
    for n, block in enumerate(blocks):
        ids, counts = np.unique(block[block > 0], return_counts=True)
        frac = {int(i): c / block.size for i, c in zip(ids, counts)}
        fractions.append(frac)
        if frac:
            # np.unique sorts ids, so the first maximum is the smallest id
            best = int(ids[np.argmax(counts)])
            if frac[best] >= threshold:
                labels[n] = best
    return PatchLabelMap(labels=labels, fractions=fractions, grid=(gh, gw), names=dict(names or {}))


def select_image(label_map, min_objects=2, min_patches=3):
    """True iff at least ``min_objects`` objects own ``min_patches`` patches each."""
    big = [obj for obj, n in label_map.object_counts().items() if n >= min_patches]
    return len(big) >= min_objects


def remap_labels(label_map, spec):
    """Carry labels through a shuffle (permute) or an occlusion (mark dropped)."""
    if isinstance(spec, DropMask):
        if spec.n_patches != label_map.n_patches:
            raise ShapeError("drop mask and label map disagree on the patch count")
        labels = label_map.labels.copy()
        labels[[i - 1 for i in spec.dropped]] = DROPPED
        return PatchLabelMap(labels, list(label_map.fractions), label_map.grid, dict(label_map.names))
    if isinstance(spec, ShuffleSpec):
        gh, gw = label_map.grid
        if gh % spec.grid or gw % spec.grid:
            raise ShapeError(
                f"shuffle grid {spec.grid} does not align with the {gh}x{gw} patch grid"
            )
        labels = shuffle_cells(label_map.labels.reshape(gh, gw), spec).reshape(-1)
        order = shuffle_cells(np.arange(gh * gw).reshape(gh, gw), spec).reshape(-1)
        fractions = [label_map.fractions[i] for i in order]
        return PatchLabelMap(labels, fractions, label_map.grid, dict(label_map.names))
    raise TypeError(f"cannot remap labels with {type(spec).__name__}")
