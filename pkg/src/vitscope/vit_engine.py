"""ViT forward pass with per-layer embedding and attention capture.

The recurrence implemented by :func:`forward_trace` is the pre-norm encoder::

    z~_l = MSA(LN(z_{l-1})) + z_{l-1}
    z_l  = MLP(LN(z~_l)) + z~_l          l = 1..L

and the trace keeps every ``z_l`` together with the head-averaged
post-softmax attention of block ``l``.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor_core as tc
from .archive import load_archive
from .exceptions import ManifestError, ShapeError
from .imageio import read_rgb, resize_bilinear

__all__ = [
    "ModelConfig",
    "ForwardTrace",
    "weight_manifest",
    "check_weights",
    "infer_config",
    "preprocess",
    "embed_layer0",
    "attention_block",
    "mlp_block",
    "forward_trace",
    "random_weights",
    "VisionTransformer",
]


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    channels: int = 3
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_dim: int = 3072
    norm_mean: tuple = (0.5, 0.5, 0.5)
    norm_std: tuple = (0.5, 0.5, 0.5)
    ln_eps: float = 1e-6
    gelu_approximate: bool = True

    def __post_init__(self):
        if self.image_size <= 0 or self.patch_size <= 0 or self.image_size % self.patch_size:
            raise ValueError(
                f"image_size {self.image_size} must be a positive multiple of patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if len(self.norm_mean) != self.channels or len(self.norm_std) != self.channels:
            raise ValueError("norm_mean/norm_std need one entry per channel")
        if any(s <= 0 for s in self.norm_std):
            raise ValueError("norm_std entries must be positive")
        object.__setattr__(self, "norm_mean", tuple(float(v) for v in self.norm_mean))
        object.__setattr__(self, "norm_std", tuple(float(v) for v in self.norm_std))

    @property
    def grid_size(self):
        return self.image_size // self.patch_size

    @property
    def n_patches(self):
        return self.grid_size**2

    @property
    def n_tokens(self):
        return self.n_patches + 1

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self):
        return {
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "channels": self.channels,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "num_heads": self.num_heads,
            "mlp_dim": self.mlp_dim,
            "norm_mean": list(self.norm_mean),
            "norm_std": list(self.norm_std),
            "ln_eps": self.ln_eps,
            "gelu_approximate": self.gelu_approximate,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})


@dataclass
class ForwardTrace:
    """Per-layer embeddings and head-averaged attention for one image.

    ``z[0]`` is the layer-0 token matrix and ``z[l]`` the output of block
    ``l``; ``attn[l - 1]`` is the attention of block ``l`` with rows indexing
    queries and columns keys.
    """

    z: list
    attn: list
    logits: np.ndarray = None
    config: ModelConfig = field(default=None, repr=False)

    @property
    def depth(self):
        return len(self.attn)

    def patch_embeddings(self, layer):
        """Rows 1..N of ``z[layer]`` (class token excluded)."""
        return self.z[layer][1:]

    def class_attention(self, layer=None):
        """Attention of the class-token query onto each patch, ``attn[layer][0, 1:]``."""
        layer = self.depth - 1 if layer is None else layer
        return self.attn[layer][0, 1:]


def weight_manifest(cfg, with_head=False, num_classes=None):
    """Canonical tensor names and shapes for ``cfg``."""
    d, m = cfg.embed_dim, cfg.mlp_dim
    shapes = {
        "patch_embed.weight": (d, cfg.patch_dim),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (cfg.n_tokens, d),
        "norm.weight": (d,),
        "norm.bias": (d,),
    }
    for l in range(cfg.depth):
        p = f"blocks.{l}."
        for ln in ("ln1", "ln2"):
            shapes[p + ln + ".weight"] = (d,)
            shapes[p + ln + ".bias"] = (d,)
        for proj in ("q", "k", "v", "proj"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "mlp.fc1.weight"] = (m, d)
        shapes[p + "mlp.fc1.bias"] = (m,)
        shapes[p + "mlp.fc2.weight"] = (d, m)
        shapes[p + "mlp.fc2.bias"] = (d,)
    if with_head:
        shapes["head.weight"] = (num_classes, d)
        shapes["head.bias"] = (num_classes,)
    return shapes


def check_weights(weights, cfg):
    """Raise :class:`ManifestError` unless ``weights`` satisfies the manifest."""
    problems = []
    for name, shape in weight_manifest(cfg).items():
        if name not in weights:
            problems.append(f"missing {name}")
        elif tuple(np.shape(weights[name])) != shape:
            problems.append(f"{name}: expected {shape}, got {tuple(np.shape(weights[name]))}")
    has_w, has_b = "head.weight" in weights, "head.bias" in weights
    if has_w != has_b:
        problems.append("head.weight and head.bias must be provided together")
    elif has_w:
        hw, hb = np.shape(weights["head.weight"]), np.shape(weights["head.bias"])
        if len(hw) != 2 or hw[1] != cfg.embed_dim or hb != (hw[0],):
            problems.append(f"head shapes {hw} / {hb} inconsistent with embed_dim {cfg.embed_dim}")
    if problems:
        shown = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise ManifestError(f"weights violate the manifest: {shown}{more}")


def infer_config(weights, num_heads=None, channels=3, **overrides):
    """Recover a :class:`ModelConfig` from tensor shapes.

    The head count is not recoverable from shapes; it defaults to the
    largest of 12, 8, 6, 4, 3, 2, 1 that divides the embedding width.
    """
    try:
        d = int(np.size(weights["cls_token"]))
        patch_dim = int(np.shape(weights["patch_embed.weight"])[1])
        n_tokens = int(np.shape(weights["pos_embed"])[0])
        mlp = int(np.shape(weights["blocks.0.mlp.fc1.weight"])[0])
    except (KeyError, IndexError) as exc:
        raise ManifestError(f"cannot infer the model shape: missing {exc}") from exc
    depth = 0
    while f"blocks.{depth}.attn.q.weight" in weights:
        depth += 1
    p = int(round(np.sqrt(patch_dim / channels)))
    g = int(round(np.sqrt(n_tokens - 1)))
    if p * p * channels != patch_dim or g * g != n_tokens - 1:
        raise ManifestError(
            f"patch dim {patch_dim} / token count {n_tokens} do not describe a square {channels}-channel model"
        )
    if num_heads is None:
        num_heads = next(h for h in (12, 8, 6, 4, 3, 2, 1) if d % h == 0)
    params = dict(
        image_size=g * p, patch_size=p, channels=channels, embed_dim=d, depth=depth,
        num_heads=num_heads, mlp_dim=mlp,
        norm_mean=(0.5,) * channels, norm_std=(0.5,) * channels,
    )
    params.update(overrides)
    return ModelConfig(**params)


def preprocess(raw_image, cfg):
    """Resize a decoded uint8 RGB bitmap to the model size and normalize it."""
    raw = np.asarray(raw_image)
    if raw.ndim == 2:
        raw = raw[:, :, None]
    if raw.ndim != 3 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise ShapeError(f"cannot preprocess an image of shape {raw.shape}")
    if raw.shape[2] != cfg.channels:
        raise ShapeError(f"image has {raw.shape[2]} channels, model expects {cfg.channels}")
    x = resize_bilinear(raw.astype(np.float64) / 255.0, cfg.image_size, cfg.image_size)
    x = (x - np.asarray(cfg.norm_mean)) / np.asarray(cfg.norm_std)
    return tc.as_tensor(x, "preprocessed image")


def load_image(path, cfg):
    return preprocess(read_rgb(path), cfg)


def _linear(x, weight, bias):
    return tc.matmul(x, weight.T) + bias


def embed_layer0(image, weights, cfg):
    """Token matrix ``z_0 = [x_class, E x_p^1, ..., E x_p^N] + E_pos``."""
    image = np.asarray(image, dtype=np.float32)
    expected = (cfg.image_size, cfg.image_size, cfg.channels)
    if image.shape != expected:
        raise ShapeError(f"image shape {image.shape} does not match config {expected}")
    for name, shape in (
        ("patch_embed.weight", (cfg.embed_dim, cfg.patch_dim)),
        ("patch_embed.bias", (cfg.embed_dim,)),
        ("cls_token", (cfg.embed_dim,)),
        ("pos_embed", (cfg.n_tokens, cfg.embed_dim)),
    ):
        if name not in weights or tuple(np.shape(weights[name])) != shape:
            raise ManifestError(f"{name} must be present with shape {shape}")
    patches = tc.unfold_patches(image, cfg.patch_size)
    tokens = _linear(patches, weights["patch_embed.weight"], weights["patch_embed.bias"])
    z0 = np.vstack([np.asarray(weights["cls_token"], dtype=np.float32)[None, :], tokens])
    return tc.as_tensor(z0 + weights["pos_embed"], "z0")


def _layer_weights(weights, layer):
    prefix = f"blocks.{layer}."
    return {k[len(prefix):]: v for k, v in weights.items() if k.startswith(prefix)}


def attention_block(x, layer_weights, heads):
    """Multi-head self-attention on already-normalized tokens.

    Returns the projected output (residual not added) and the arithmetic
    mean of the heads' post-softmax attention matrices.
    """
    x = np.asarray(x, dtype=np.float32)
    n, d = x.shape
    if d % heads:
        raise ShapeError(f"embed dim {d} not divisible by {heads} heads")
    for name in ("q", "k", "v", "proj"):
        w = layer_weights[f"attn.{name}.weight"]
        b = layer_weights[f"attn.{name}.bias"]
        if np.shape(w) != (d, d) or np.shape(b) != (d,):
            raise ShapeError(f"attn.{name} has shapes {np.shape(w)} / {np.shape(b)}, expected ({d}, {d}) / ({d},)")
    hd = d // heads
    q = _linear(x, layer_weights["attn.q.weight"], layer_weights["attn.q.bias"])
    k = _linear(x, layer_weights["attn.k.weight"], layer_weights["attn.k.bias"])
    v = _linear(x, layer_weights["attn.v.weight"], layer_weights["attn.v.bias"])
    scale = np.float32(1.0 / np.sqrt(hd))
    mixed = np.empty_like(q)
    attn_sum = np.zeros((n, n), dtype=np.float32)
    for h in range(heads):
        cols = slice(h * hd, (h + 1) * hd)
        a = tc.softmax_rows(tc.matmul(q[:, cols], k[:, cols].T) * scale)
        attn_sum += a
        mixed[:, cols] = tc.matmul(a, v[:, cols])
    out = _linear(mixed, layer_weights["attn.proj.weight"], layer_weights["attn.proj.bias"])
    return tc.as_tensor(out, "attention output"), attn_sum / np.float32(heads)


def mlp_block(x, layer_weights, approximate=True):
    hidden = _linear(x, layer_weights["mlp.fc1.weight"], layer_weights["mlp.fc1.bias"])
    hidden = tc.gelu(hidden, approximate=approximate)
    return _linear(hidden, layer_weights["mlp.fc2.weight"], layer_weights["mlp.fc2.bias"])


def forward_trace(image, weights, cfg):
    """Run the encoder on one preprocessed image and record every layer."""
    z = embed_layer0(image, weights, cfg)
    zs = [z]
    attns = []
    eps = cfg.ln_eps
    for l in range(cfg.depth):
        lw = _layer_weights(weights, l)
        try:
            h = tc.layer_norm(z, lw["ln1.weight"], lw["ln1.bias"], eps)
            attn_out, attn_avg = attention_block(h, lw, cfg.num_heads)
            z_mid = z + attn_out
            h = tc.layer_norm(z_mid, lw["ln2.weight"], lw["ln2.bias"], eps)
            z = tc.as_tensor(z_mid + mlp_block(h, lw, cfg.gelu_approximate), f"z{l + 1}")
        except KeyError as exc:
            raise ManifestError(f"block {l} is missing weight {exc}") from exc
        zs.append(z)
        attns.append(attn_avg)
    logits = None
    if "head.weight" in weights:
        y = tc.layer_norm(z[:1], weights["norm.weight"], weights["norm.bias"], eps)
        logits = _linear(y, weights["head.weight"], weights["head.bias"])[0]
    return ForwardTrace(z=zs, attn=attns, logits=logits, config=cfg)


def random_weights(cfg, seed=0, scale=0.02, num_classes=None):
    """Seeded Gaussian weights satisfying the manifest (for tests and timing)."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_manifest(cfg, num_classes is not None, num_classes).items():
        if name.endswith("ln1.weight") or name.endswith("ln2.weight") or name == "norm.weight":
            weights[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias") and ".ln" in name:
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            weights[name] = (rng.standard_normal(shape) * scale).astype(np.float32)
    return weights


class VisionTransformer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`forward_trace`.

    ``fit`` loads and validates the weights; ``transform`` maps a sequence
    of images (paths, uint8 bitmaps or preprocessed float tensors) to the
    patch embeddings of ``layer``, shape ``[n_images, N, D]``.

    Parameters
    ----------
    weights : str, path or mapping
        Tensor archive path or an in-memory name -> array mapping.
    config : ModelConfig, optional
        Defaults to ViT-B/16 at 224 pixels.
    layer : int
        Which ``z_l`` ``transform`` returns.
    """

    def __init__(self, weights=None, config=None, layer=-1):
        self.weights = weights
        self.config = config
        self.layer = layer

    def fit(self, X=None, y=None):
        self.config_ = self.config if self.config is not None else ModelConfig()
        if self.weights is None:
            raise ValueError("VisionTransformer needs weights (archive path or mapping)")
        if isinstance(self.weights, dict):
            weights = {k: np.asarray(v, dtype=np.float32) for k, v in self.weights.items()}
        else:
            weights = load_archive(self.weights)
        check_weights(weights, self.config_)
        self.weights_ = weights
        self.n_classes_ = weights["head.weight"].shape[0] if "head.weight" in weights else 0
        return self

    def _as_image(self, item):
        cfg = self.config_
        if isinstance(item, (str, bytes)) or hasattr(item, "__fspath__"):
            return load_image(item, cfg)
        arr = np.asarray(item)
        if arr.dtype == np.uint8:
            return preprocess(arr, cfg)
        return tc.as_tensor(arr, "image")

    def trace(self, image):
        check_is_fitted(self, "weights_")
        return forward_trace(self._as_image(image), self.weights_, self.config_)

    def transform(self, X):
        check_is_fitted(self, "weights_")
        return np.stack([self.trace(item).patch_embeddings(self.layer) for item in X])

    def predict(self, X):
        check_is_fitted(self, "weights_")
        if not self.n_classes_:
            raise ValueError("weights carry no classification head")
        return np.array([int(np.argmax(self.trace(item).logits)) for item in X])
