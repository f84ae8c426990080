"""Per-layer clustering reports for one traced image, and their file formats."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dbscan import DBSCAN, NOISE
from .metrics import (
    dominant_labels,
    group_cosine,
    mean_in_object_cosine,
    purity,
    silhouette,
    unique_label_ratio,
)

__all__ = [
    "EmbeddingSet",
    "ClusterReport",
    "REPORT_COLUMNS",
    "cluster_layer",
    "layer_sweep",
    "dataset_mean",
    "write_report_csv",
    "write_report_json",
    "write_tsne_csv",
]

REPORT_COLUMNS = ("layer", "purity", "silhouette", "in_cluster_cos", "in_object_cos", "unique_label_ratio")


@dataclass
class EmbeddingSet:
    """Patch-token embeddings of one layer (class token excluded)."""

    vectors: np.ndarray
    layer: int
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.vectors) < 1:
            raise ValueError("an embedding set needs at least one vector")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding set contains non-finite values")


@dataclass
class ClusterReport:
    layer: int
    purity: float
    silhouette: float
    unique_label_ratio: float
    mean_in_cluster_cosine: float
    mean_in_object_cosine: float
    n_clusters: int = 0
    n_noise: int = 0
    eps: float = math.nan
    dominated: dict = field(default_factory=dict)
    skipped_pairs: int = 0

    def row(self):
        return {
            "layer": self.layer,
            "purity": self.purity,
            "silhouette": self.silhouette,
            "in_cluster_cos": self.mean_in_cluster_cosine,
            "in_object_cos": self.mean_in_object_cosine,
            "unique_label_ratio": self.unique_label_ratio,
        }


def _label_array(labels):
    return np.asarray(getattr(labels, "labels", labels), dtype=np.int64)


def cluster_layer(
    embeddings,
    labels,
    eps="auto",
    min_pts=3,
    metric="cosine",
    purity_denominator="clustered",
    unique_mode="objects_plus_one",
    silhouette_metric="euclidean",
):
    """DBSCAN one :class:`EmbeddingSet` and score it with all five measures.

    With ``labels=None`` only the label-free measures (silhouette and
    in-cluster cosine) are computed; the others are NaN.
    """
    X = embeddings.vectors
    y = None if labels is None else _label_array(labels)
    if y is not None and len(y) != len(X):
        raise ValueError(f"{len(y)} labels for {len(X)} embeddings")
    model = DBSCAN(eps=eps, min_samples=min_pts, metric=metric).fit(X)
    assign = model.labels_
    clusters = [c for c in np.unique(assign) if c != NOISE]
    in_cluster, skipped = group_cosine(X, [np.flatnonzero(assign == c) for c in clusters])
    dom = {}
    if y is not None:
        dom = {
            int(c): {"label": lab, "count": cnt, "size": int(np.sum(assign == c))}
            for c, (lab, cnt) in dominant_labels(assign, y).items()
        }
    unlabeled = y is None
    return ClusterReport(
        layer=embeddings.layer,
        purity=math.nan if unlabeled else purity(assign, y, purity_denominator),
        silhouette=silhouette(X, assign, silhouette_metric),
        unique_label_ratio=math.nan if unlabeled else unique_label_ratio(assign, y, unique_mode),
        mean_in_cluster_cosine=in_cluster,
        mean_in_object_cosine=math.nan if unlabeled else mean_in_object_cosine(X, y),
        n_clusters=len(clusters),
        n_noise=int(np.sum(assign == NOISE)),
        eps=model.eps_,
        dominated=dom,
        skipped_pairs=skipped,
    )


def layer_sweep(trace, labels, layers=None, **kwargs):
    """One :class:`ClusterReport` per layer; default layers ``0..L-1``."""
    if layers is None:
        layers = range(trace.depth)
    return [
        cluster_layer(EmbeddingSet(trace.patch_embeddings(l), l), labels, **kwargs) for l in layers
    ]


def dataset_mean(per_image):
    """Layer-wise NaN-ignoring mean of several images' report lists."""
    if not per_image:
        return []
    layers = [r.layer for r in per_image[0]]
    out = []
    for pos, layer in enumerate(layers):
        rows = [reports[pos].row() for reports in per_image]
        mean = {"layer": layer}
        for col in REPORT_COLUMNS[1:]:
            vals = [r[col] for r in rows if not math.isnan(r[col])]
            mean[col] = float(np.mean(vals)) if vals else math.nan
        out.append(mean)
    return out


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if math.isnan(v) else repr(float(v))


def write_report_csv(path, rows):
    """Write report rows (``ClusterReport`` or dicts) with the frozen column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            d = r.row() if isinstance(r, ClusterReport) else r
            writer.writerow([_fmt(d[c]) for c in REPORT_COLUMNS])


def _jsonable(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def write_report_json(path, reports, extra=None):
    payload = {"layers": [_jsonable(asdict(r)) for r in reports]}
    if extra:
        payload.update(_jsonable(extra))
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_tsne_csv(path, coords, labels, cls_attention):
    if labels is None:
        labels = np.zeros(len(coords), dtype=np.int64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("x", "y", "label", "attn_cls"))
        for (x, y), lab, a in zip(coords, _label_array(labels), cls_attention):
            writer.writerow((repr(float(x)), repr(float(y)), int(lab), repr(float(a))))
