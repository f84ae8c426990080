"""Rename public ViT-B/16 checkpoints into the canonical weight manifest.

Both converters take a name -> array mapping (e.g. the tensors of a
``.safetensors`` file read with :func:`vitscope.archive.load_archive`, or a
PyTorch state dict converted with ``{k: v.numpy() for k, v in sd.items()}``)
and return a new mapping. See ``docs/weights.md`` for the full table.
"""

import numpy as np

__all__ = ["from_timm", "from_hf", "CONVERTERS"]


def _conv_filters(w):
    # [D, C, P, P] convolution kernels -> rows in (p_row, p_col, channel) order
    w = np.asarray(w, dtype=np.float32)
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1))


def _f32(a):
    return np.asarray(a, dtype=np.float32, order="C")


def _count(sd, template):
    n = 0
    while template.format(n) in sd:
        n += 1
    return n


def from_timm(sd, depth=None):
    """timm ``vit_base_patch16_224`` naming (fused ``attn.qkv``)."""
    if depth is None:
        depth = _count(sd, "blocks.{}.attn.qkv.weight")
    out = {
        "patch_embed.weight": _conv_filters(sd["patch_embed.proj.weight"]),
        "patch_embed.bias": _f32(sd["patch_embed.proj.bias"]),
        "cls_token": _f32(sd["cls_token"]).reshape(-1),
        "pos_embed": _f32(sd["pos_embed"]).reshape(-1, _f32(sd["cls_token"]).size),
        "norm.weight": _f32(sd["norm.weight"]),
        "norm.bias": _f32(sd["norm.bias"]),
    }
    for l in range(depth):
        src, dst = f"blocks.{l}.", f"blocks.{l}."
        qkv_w = _f32(sd[src + "attn.qkv.weight"])
        qkv_b = _f32(sd[src + "attn.qkv.bias"])
        d = qkv_w.shape[1]
        for n, name in enumerate("qkv"):
            out[dst + f"attn.{name}.weight"] = _f32(qkv_w[n * d:(n + 1) * d])
            out[dst + f"attn.{name}.bias"] = _f32(qkv_b[n * d:(n + 1) * d])
        pairs = {
            "norm1": "ln1", "norm2": "ln2", "attn.proj": "attn.proj",
            "mlp.fc1": "mlp.fc1", "mlp.fc2": "mlp.fc2",
        }
        for a, b in pairs.items():
            out[dst + b + ".weight"] = _f32(sd[src + a + ".weight"])
            out[dst + b + ".bias"] = _f32(sd[src + a + ".bias"])
    if "head.weight" in sd and np.ndim(sd["head.weight"]) == 2:
        out["head.weight"] = _f32(sd["head.weight"])
        out["head.bias"] = _f32(sd["head.bias"])
    return out


_HF_LEGACY = {
    "layernorm_before": "ln1",
    "layernorm_after": "ln2",
    "attention.attention.query": "attn.q",
    "attention.attention.key": "attn.k",
    "attention.attention.value": "attn.v",
    "attention.output.dense": "attn.proj",
    "intermediate.dense": "mlp.fc1",
    "output.dense": "mlp.fc2",
}

# in-memory state dicts of transformers >= 5
_HF_V5 = {
    "layernorm_before": "ln1",
    "layernorm_after": "ln2",
    "attention.q_proj": "attn.q",
    "attention.k_proj": "attn.k",
    "attention.v_proj": "attn.v",
    "attention.o_proj": "attn.proj",
    "mlp.fc1": "mlp.fc1",
    "mlp.fc2": "mlp.fc2",
}


def from_hf(sd, depth=None):
    """Hugging Face ``google/vit-base-patch16-224`` naming.

    Accepts the checkpoint-file layout (``vit.encoder.layer.N...``), bare
    ``ViTModel`` keys without the ``vit.`` prefix, and the renamed layout of
    recent ``transformers`` state dicts (``layers.N.attention.q_proj``).
    """
    if "vit.embeddings.cls_token" not in sd and "embeddings.cls_token" in sd:
        sd = {("vit." + k if not k.startswith("classifier.") else k): v for k, v in sd.items()}
    if "vit.encoder.layer.0.layernorm_before.weight" in sd:
        block, pairs = "vit.encoder.layer.{}.", _HF_LEGACY
    else:
        block, pairs = "vit.layers.{}.", _HF_V5
    if depth is None:
        depth = _count(sd, block + "layernorm_before.weight")
    e = "vit.embeddings."
    d = _f32(sd[e + "cls_token"]).size
    out = {
        "patch_embed.weight": _conv_filters(sd[e + "patch_embeddings.projection.weight"]),
        "patch_embed.bias": _f32(sd[e + "patch_embeddings.projection.bias"]),
        "cls_token": _f32(sd[e + "cls_token"]).reshape(-1),
        "pos_embed": _f32(sd[e + "position_embeddings"]).reshape(-1, d),
        "norm.weight": _f32(sd["vit.layernorm.weight"]),
        "norm.bias": _f32(sd["vit.layernorm.bias"]),
    }
    for l in range(depth):
        src, dst = block.format(l), f"blocks.{l}."
        for a, b in pairs.items():
            out[dst + b + ".weight"] = _f32(sd[src + a + ".weight"])
            out[dst + b + ".bias"] = _f32(sd[src + a + ".bias"])
    if "classifier.weight" in sd:
        out["head.weight"] = _f32(sd["classifier.weight"])
        out["head.bias"] = _f32(sd["classifier.bias"])
    return out


CONVERTERS = {"timm": from_timm, "hf": from_hf}
