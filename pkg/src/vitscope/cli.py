"""``vitscope`` command line.

Exit codes: 0 success, 2 argument error, 3 input-format error, 4 internal
invariant failure. Every run writes ``manifest.json`` into ``--out`` with
the effective parameters and the produced files.
"""

import argparse
import json
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .archive import load_archive, read_metadata, write_archive
from .cluster import ExactTSNE, dataset_mean, layer_sweep, write_report_csv, write_report_json, write_tsne_csv
from .convert import CONVERTERS
from .exceptions import (
    ArchiveFormatError,
    InfeasibleInstanceError,
    InvariantError,
    ManifestError,
    NotStochasticError,
    ShapeError,
    VitscopeError,
)
from .imageio import read_rgb, write_png
from .patch_labels import label_patches, load_mask, remap_labels, select_image
from .perturb import apply_mask, nonsalient_drop, random_drop, salient_drop, shuffle, shuffle_cells
from .theorem_lab import (
    iterate_dynamics,
    make_clustered_instance,
    verify_bound,
    verify_bound_trials,
    verify_contraction,
    write_trajectory_csv,
)
from .vis_field import NeuronVisualizer, contact_sheet, vis_filename
from .vit_engine import ModelConfig, check_weights, forward_trace, infer_config, preprocess

EXIT_OK, EXIT_ARGS, EXIT_FORMAT, EXIT_INVARIANT = 0, 2, 3, 4
CONFIG_META_KEY = "vitscope.config"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".bmp")


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _ratio_list(text):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ratios, got {text!r}")
    bad = [v for v in vals if not 0.0 <= v <= 1.0]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"ratios must lie in [0, 1], got {text!r}")
    return vals


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _eps(text):
    if text == "auto":
        return "auto"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"eps must be 'auto' or a positive number, got {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"eps must be positive, got {text!r}")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _common_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--weights", help="tensor archive with the model weights")
    g.add_argument("--config", help="JSON file of option defaults; command-line flags override it")
    g.add_argument("--out", default="vitscope_out", help="output directory (created if absent)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1, help="worker processes over images (0 = all CPUs)")
    g.add_argument("--model-config", help="JSON model description; default: archive metadata, else shapes")
    g.add_argument("--heads", type=int, help="attention heads when inferring the model from shapes")
    g.add_argument("--convert", choices=["none", *CONVERTERS], default="none",
                   help="rename checkpoint tensors from a public naming scheme on load")
    return p


def _label_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("labels")
    g.add_argument("--threshold", type=float, default=0.4, help="object coverage needed to label a patch")
    return p


def _cluster_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("clustering")
    g.add_argument("--eps", type=_eps, default="auto")
    g.add_argument("--min-pts", type=_positive, default=3)
    g.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    g.add_argument("--purity-denominator", choices=["clustered", "tokens"], default="clustered")
    g.add_argument("--unique-mode", choices=["objects_plus_one", "object_types"], default="objects_plus_one")
    g.add_argument("--sweep-layers", type=_int_list, help="layers for the cluster report (default 0..L-1)")
    return p


def _vis_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("visualization")
    g.add_argument("--layers", type=_int_list, help="layers 0..L (default: all)")
    g.add_argument("--token", type=_int_list, default=[], help="token indices 0..N")
    g.add_argument("--filter", type=_int_list, default=[], help="filter indices 1..D")
    return p


def _tsne_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("t-SNE")
    g.add_argument("--tsne-layers", type=_int_list)
    g.add_argument("--perplexity", type=float, default=15.0)
    g.add_argument("--iterations", type=_positive, default=1000)
    return p


def build_parser():
    common = _common_parent()
    labels = _label_parent()
    clus = _cluster_parent()
    vis = _vis_parent()
    ts = _tsne_parent()
    parser = argparse.ArgumentParser(prog="vitscope", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vitscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("visualize", parents=[common, vis], help="neuron visualizations")
    p.add_argument("--image", nargs="+")
    p.add_argument("--filter-column", type=_int_list, default=[], help="layer-0 view of filter j on every patch")
    p.add_argument("--embedding-overlay", action="store_true", help="layer-0 composite of all filters per token")
    p.add_argument("--overlay", choices=["mean", "sum", "maxabs"], default="mean")
    p.add_argument("--contact-sheet", action="store_true", help="one grid per token: filters x layers")
    subs["visualize"] = p

    p = sub.add_parser("occlude", parents=[common, vis, labels, clus], help="patch-drop study")
    p.add_argument("--image", nargs="+")
    p.add_argument("--mask", nargs="+")
    p.add_argument("--mode", choices=["random", "salient", "nonsalient"], default="random")
    p.add_argument("--ratio", type=_ratio_list, default=[0.5], help="drop ratio, or a comma list to sweep")
    p.add_argument("--fill", choices=["zero", "noise"], default="zero")
    p.add_argument("--fill-space", choices=["raw", "normalized"], default="raw")
    subs["occlude"] = p

    p = sub.add_parser("shuffle", parents=[common, vis, labels, clus], help="grid-shuffle study")
    p.add_argument("--image", nargs="+")
    p.add_argument("--mask", nargs="+")
    p.add_argument("--grid", type=_int_list, default=[2, 4, 8])
    subs["shuffle"] = p

    p = sub.add_parser("cluster", parents=[common, labels, clus, ts], help="dataset layer sweep")
    p.add_argument("--image", nargs="+")
    p.add_argument("--mask", nargs="+")
    p.add_argument("--image-dir")
    p.add_argument("--mask-dir")
    p.add_argument("--limit", type=_positive)
    p.add_argument("--min-objects", type=int, default=2)
    p.add_argument("--min-patches", type=int, default=3)
    p.add_argument("--shuffle-grid", type=_int_list, default=[])
    subs["cluster"] = p

    p = sub.add_parser("tsne", parents=[common, labels, ts], help="2-D embeddings per layer")
    p.add_argument("--image", nargs="+")
    p.add_argument("--mask", nargs="+")
    subs["tsne"] = p

    p = sub.add_parser("theorem", parents=[common], help="numerical checks of attention contraction")
    p.add_argument("--trials", type=_positive, default=1000)
    p.add_argument("--bound-instances", type=_positive, default=500)
    p.add_argument("--point-instances", type=_positive, default=20, help="instances per sweep point")
    p.add_argument("--eps-l", type=_float_list, default=[0.0, 0.01])
    p.add_argument("--eps-u", type=_float_list, default=[0.02, 0.05])
    p.add_argument("--sizes", type=_int_list, action="append", help="cluster sizes, repeatable")
    p.add_argument("--dim", type=_positive, default=8)
    p.add_argument("--steps", type=_positive, default=10)
    p.add_argument("--mode", choices=["fixed", "per-step"], default="fixed")
    p.add_argument("--spread", type=float, default=0.1)
    p.add_argument("--separation", type=float, default=5.0)
    subs["theorem"] = p

    p = sub.add_parser("inspect-weights", parents=[common], help="check an archive against the manifest")
    p.add_argument("--save", help="write the (converted) weights as a canonical archive")
    subs["inspect-weights"] = p
    return parser, subs


_LIST_TYPES = (_int_list, _ratio_list, _float_list)


def _coerce(action, value):
    """Validate a config-file value the way the command line would."""
    kind = action.type
    if isinstance(action, argparse._StoreTrueAction):
        if not isinstance(value, bool):
            raise TypeError("expected true or false")
        return value
    if isinstance(action, argparse._AppendAction):
        return [kind(",".join(map(str, v)) if isinstance(v, list) else str(v)) for v in value]
    if kind in _LIST_TYPES:
        return kind(",".join(map(str, value)) if isinstance(value, list) else str(value))
    if action.nargs == "+":
        value = value if isinstance(value, list) else [value]
        return [str(v) for v in value]
    if value is None:
        return None
    if kind is not None:
        value = kind(str(value)) if kind in (_eps, _positive) else kind(value)
    if action.choices is not None and value not in action.choices:
        raise ValueError(f"{value!r} not in {sorted(action.choices)}")
    return value


def parse_args(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            parser.error(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            parser.error(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(data, dict):
            parser.error(f"config file {path} must hold a JSON object")
        sp = subs[args.command]
        known = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, value in data.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("help", "config"):
                parser.error(f"config file {path}: unknown option {key!r} for {args.command}")
            try:
                defaults[dest] = _coerce(known[dest], value)
            except (argparse.ArgumentTypeError, TypeError, ValueError) as exc:
                parser.error(f"config file {path}: {key}: {exc}")
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.jobs < 0:
        parser.error("--jobs must be >= 0")
    return args


def _require_file(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def load_model(args):
    path = _require_file(args.weights, "--weights")
    weights = load_archive(path)
    meta = read_metadata(path)
    if args.convert != "none":
        weights = CONVERTERS[args.convert](weights)
    if args.model_config:
        data = json.loads(_require_file(args.model_config, "--model-config").read_text())
        cfg = ModelConfig.from_dict(data)
    elif CONFIG_META_KEY in meta:
        cfg = ModelConfig.from_dict(json.loads(meta[CONFIG_META_KEY]))
    else:
        cfg = infer_config(weights, num_heads=args.heads)
    check_weights(weights, cfg)
    return weights, cfg


def _display(x, cfg):
    raw = x * np.asarray(cfg.norm_std, dtype=np.float32) + np.asarray(cfg.norm_mean, dtype=np.float32)
    return np.floor(np.clip(raw, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _labels_for(mask_path, cfg, threshold):
    if mask_path is None:
        return None, None
    mask, names = load_mask(mask_path, size=cfg.image_size)
    return label_patches(mask, cfg.patch_size, threshold=threshold, names=names), mask


def _unique_ids(paths):
    seen = {}
    ids = []
    for p in paths:
        stem = Path(p).stem
        n = seen.get(stem, 0)
        seen[stem] = n + 1
        ids.append(stem if n == 0 else f"{stem}_{n}")
    return ids


def _pairs(args, need_masks):
    images = list(args.image or [])
    if not images:
        raise UsageError("--image is required")
    masks = list(getattr(args, "mask", None) or [])
    if masks and len(masks) != len(images):
        raise UsageError(f"{len(images)} images but {len(masks)} masks")
    if need_masks and not masks:
        raise UsageError(f"--mask is required for --mode {args.mode}")
    for p in images:
        _require_file(p, "image")
    for p in masks:
        _require_file(p, "mask")
    return [
        {"id": i, "image": str(img), "mask": str(masks[n]) if masks else None}
        for n, (i, img) in enumerate(zip(_unique_ids(images), images))
    ]


def _dataset_pairs(args):
    if args.image_dir:
        if args.image:
            raise UsageError("use either --image or --image-dir")
        if not args.mask_dir:
            raise UsageError("--image-dir needs --mask-dir")
        idir, mdir = Path(args.image_dir), Path(args.mask_dir)
        if not idir.is_dir() or not mdir.is_dir():
            raise UsageError(f"image or mask directory not found: {idir}, {mdir}")
        masks = {p.stem: p for p in sorted(mdir.iterdir()) if p.suffix.lower() == ".png"}
        images = [p for p in sorted(idir.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES and p.stem in masks]
        if args.limit:
            images = images[: args.limit]
        return [{"id": p.stem, "image": str(p), "mask": str(masks[p.stem])} for p in images]
    if not args.image:
        raise UsageError("cluster needs --image/--mask or --image-dir/--mask-dir")
    pairs = _pairs(args, need_masks=True)
    return pairs[: args.limit] if args.limit else pairs


_WORKER = {}


def _init_worker(params):
    """Each worker loads its own read-only copy of the model."""
    args = argparse.Namespace(**params)
    weights, cfg = load_model(args) if args.weights else (None, None)
    _WORKER.update(args=args, weights=weights, cfg=cfg)


def _call(task):
    fn, item = task
    return fn(_WORKER, item)


def run_items(args, fn, items, weights=None, cfg=None):
    """Apply ``fn(ctx, item)`` to every item, sharded over ``--jobs`` processes."""
    jobs = args.jobs or os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        ctx = {"args": args, "weights": weights, "cfg": cfg}
        return [fn(ctx, item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items)), initializer=_init_worker,
                             initargs=(vars(args),)) as pool:
        return list(pool.map(_call, [(fn, item) for item in items]))


def _cluster_kwargs(args):
    return dict(
        eps=args.eps, min_pts=args.min_pts, metric=args.metric,
        purity_denominator=args.purity_denominator, unique_mode=args.unique_mode,
    )


def _sweep(trace, labels, args):
    return layer_sweep(trace, labels, layers=args.sweep_layers, **_cluster_kwargs(args))


def _write_reports(base, reports, extra=None):
    write_report_csv(f"{base}.csv", reports)
    write_report_json(f"{base}.json", reports, extra)
    return [f"{base}.csv", f"{base}.json"]


def _save_vis(viz, out_dir, args, cfg):
    files = []
    layers = args.layers if args.layers is not None else list(range(cfg.depth + 1))
    for l in layers:
        for t in args.token:
            for f in args.filter:
                path = out_dir / vis_filename(l, t, f)
                viz.visualize(l, t, f).save(path)
                files.append(str(path))
    return files


def _visualize_one(ctx, item):
    args, weights, cfg = ctx["args"], ctx["weights"], ctx["cfg"]
    out_dir = Path(args.out) / item["id"]
    out_dir.mkdir(parents=True, exist_ok=True)
    x = preprocess(read_rgb(item["image"]), cfg)
    trace = forward_trace(x, weights, cfg)
    viz = NeuronVisualizer(weights, cfg.patch_size, args.overlay).fit(x, trace)
    files = _save_vis(viz, out_dir, args, cfg)
    for j in args.filter_column:
        path = out_dir / f"filter_column_F{j}.png"
        viz.filter_column(j).save(path)
        files.append(str(path))
    if args.embedding_overlay:
        for t in args.token:
            if t >= 1:
                path = out_dir / f"embedding_T{t}.png"
                viz.embedding_overlay(t).save(path)
                files.append(str(path))
    if args.contact_sheet and args.token and args.filter:
        layers = args.layers if args.layers is not None else list(range(cfg.depth + 1))
        for t in args.token:
            grid = [[viz.visualize(l, t, f).display for l in layers] for f in args.filter]
            path = out_dir / f"sheet_T{t}.png"
            write_png(path, contact_sheet(grid))
            files.append(str(path))
    return {"id": item["id"], "files": files}


def _occlude_one(ctx, item):
    args, weights, cfg = ctx["args"], ctx["weights"], ctx["cfg"]
    x = preprocess(read_rgb(item["image"]), cfg)
    labels, _ = _labels_for(item["mask"], cfg, args.threshold)
    rows = {}
    files = []
    for r in args.ratio:
        out_dir = Path(args.out) / item["id"] / f"r{r:g}"
        out_dir.mkdir(parents=True, exist_ok=True)
        kw = dict(fill_mode=args.fill, fill_space=args.fill_space)
        if args.mode == "random":
            mask = random_drop(cfg.n_patches, r, args.seed, **kw)
        elif args.mode == "salient":
            mask = salient_drop(labels, r, args.seed, **kw)
        else:
            mask = nonsalient_drop(labels, r, args.seed, **kw)
        occluded = apply_mask(x, mask, cfg.patch_size, cfg.norm_mean, cfg.norm_std)
        (out_dir / "mask.json").write_text(mask.to_json() + "\n")
        write_png(out_dir / "occluded.png", _display(occluded, cfg))
        trace = forward_trace(occluded, weights, cfg)
        viz = NeuronVisualizer(weights, cfg.patch_size).fit(occluded, trace)
        files += [str(out_dir / "mask.json"), str(out_dir / "occluded.png")]
        files += _save_vis(viz, out_dir, args, cfg)
        live = None if labels is None else remap_labels(labels, mask)
        reports = _sweep(trace, live, args)
        files += _write_reports(out_dir / "report", reports, {"dropped": len(mask.dropped), "ratio": r})
        rows[r] = reports
    return {"id": item["id"], "files": files, "reports": rows}


def _shuffle_one(ctx, item):
    args, weights, cfg = ctx["args"], ctx["weights"], ctx["cfg"]
    x = preprocess(read_rgb(item["image"]), cfg)
    _, pixel_mask = _labels_for(item["mask"], cfg, args.threshold)
    rows = {}
    files = []
    for g in args.grid:
        out_dir = Path(args.out) / item["id"] / f"g{g}"
        out_dir.mkdir(parents=True, exist_ok=True)
        shuffled, spec = shuffle(x, g, args.seed)
        if not np.array_equal(np.sort(shuffled, axis=None), np.sort(x, axis=None)):
            raise InvariantError("grid shuffle changed the pixel histogram")
        labels = None
        if pixel_mask is not None:
            # relabel from the shuffled pixel mask: cells need not align with patches
            labels = label_patches(shuffle_cells(pixel_mask, spec), cfg.patch_size, threshold=args.threshold)
        (out_dir / "shuffle.json").write_text(spec.to_json() + "\n")
        write_png(out_dir / "shuffled.png", _display(shuffled, cfg))
        trace = forward_trace(shuffled, weights, cfg)
        viz = NeuronVisualizer(weights, cfg.patch_size).fit(shuffled, trace)
        files += [str(out_dir / "shuffle.json"), str(out_dir / "shuffled.png")]
        files += _save_vis(viz, out_dir, args, cfg)
        reports = _sweep(trace, labels, args)
        files += _write_reports(out_dir / "report", reports, {"grid": g})
        rows[g] = reports
    return {"id": item["id"], "files": files, "reports": rows}


def _tsne_layers(args, cfg):
    if args.tsne_layers is not None:
        return args.tsne_layers
    return sorted({0, cfg.depth // 2, cfg.depth - 1})


def _tsne_files(trace, labels, layers, out_dir, prefix, args):
    files, kl = [], {}
    attn = trace.class_attention()
    for l in layers:
        model = ExactTSNE(perplexity=args.perplexity, n_iter=args.iterations, random_state=args.seed)
        coords = model.fit_transform(trace.patch_embeddings(l))
        path = out_dir / f"{prefix}L{l}.csv"
        write_tsne_csv(path, coords, labels, attn)
        files.append(str(path))
        kl[l] = model.kl_divergence_
    return files, kl


def _tsne_one(ctx, item):
    args, weights, cfg = ctx["args"], ctx["weights"], ctx["cfg"]
    out_dir = Path(args.out) / item["id"]
    out_dir.mkdir(parents=True, exist_ok=True)
    x = preprocess(read_rgb(item["image"]), cfg)
    labels, _ = _labels_for(item["mask"], cfg, args.threshold)
    trace = forward_trace(x, weights, cfg)
    files, kl = _tsne_files(trace, labels, _tsne_layers(args, cfg), out_dir, "tsne_", args)
    path = out_dir / "tsne_kl.json"
    path.write_text(json.dumps({str(k): v for k, v in kl.items()}, indent=2, sort_keys=True) + "\n")
    return {"id": item["id"], "files": files + [str(path)]}


def _cluster_one(ctx, item):
    args, weights, cfg = ctx["args"], ctx["weights"], ctx["cfg"]
    labels, pixel_mask = _labels_for(item["mask"], cfg, args.threshold)
    info = {"id": item["id"], "objects": labels.object_counts(), "files": [], "reports": {}}
    info["selected"] = select_image(labels, args.min_objects, args.min_patches)
    if not info["selected"]:
        return info
    out_dir = Path(args.out) / "per_image"
    out_dir.mkdir(parents=True, exist_ok=True)
    x = preprocess(read_rgb(item["image"]), cfg)
    trace = forward_trace(x, weights, cfg)
    reports = _sweep(trace, labels, args)
    info["reports"][None] = reports
    info["files"] += _write_reports(out_dir / f"report_{item['id']}", reports)
    layers = _tsne_layers(args, cfg) if args.tsne_layers else []
    files, _ = _tsne_files(trace, labels, layers, out_dir, f"tsne_{item['id']}_", args)
    info["files"] += files
    for g in args.shuffle_grid:
        shuffled, spec = shuffle(x, g, args.seed)
        relabeled = label_patches(shuffle_cells(pixel_mask, spec), cfg.patch_size, threshold=args.threshold)
        reports = _sweep(forward_trace(shuffled, weights, cfg), relabeled, args)
        info["reports"][g] = reports
        info["files"] += _write_reports(out_dir / f"report_{item['id']}_g{g}", reports)
    return info


def _check_indices(args, cfg):
    layers = args.layers if args.layers is not None else []
    for l in layers:
        if not 0 <= l <= cfg.depth:
            raise UsageError(f"layer {l} outside 0..{cfg.depth}")
    for t in args.token:
        if not 0 <= t <= cfg.n_patches:
            raise UsageError(f"token {t} outside 0..{cfg.n_patches}")
    for f in list(args.filter) + list(getattr(args, "filter_column", [])):
        if not 1 <= f <= cfg.embed_dim:
            raise UsageError(f"filter {f} outside 1..{cfg.embed_dim}")


def _check_sweep_layers(args, cfg):
    for l in getattr(args, "sweep_layers", None) or []:
        if not 0 <= l <= cfg.depth:
            raise UsageError(f"sweep layer {l} outside 0..{cfg.depth}")
    for l in getattr(args, "tsne_layers", None) or []:
        if not 0 <= l <= cfg.depth:
            raise UsageError(f"t-SNE layer {l} outside 0..{cfg.depth}")


def _mean_rows(results, key):
    per_image = [r["reports"][key] for r in results if key in r.get("reports", {})]
    return per_image, dataset_mean(per_image)


def cmd_visualize(args, run):
    weights, cfg = run.model()
    _check_indices(args, cfg)
    if not (args.token and args.filter) and not args.filter_column:
        raise UsageError("nothing to render: give --token and --filter, or --filter-column")
    items = _pairs(args, need_masks=False)
    for res in run_items(args, _visualize_one, items, weights, cfg):
        run.outputs += res["files"]


def cmd_occlude(args, run):
    weights, cfg = run.model()
    _check_indices(args, cfg)
    _check_sweep_layers(args, cfg)
    items = _pairs(args, need_masks=args.mode != "random")
    results = run_items(args, _occlude_one, items, weights, cfg)
    for res in results:
        run.outputs += res["files"]
    if len(results) > 1:
        for r in args.ratio:
            _, mean = _mean_rows(results, r)
            path = Path(args.out) / f"report_mean_r{r:g}.csv"
            write_report_csv(path, mean)
            run.outputs.append(str(path))


def cmd_shuffle(args, run):
    weights, cfg = run.model()
    _check_indices(args, cfg)
    _check_sweep_layers(args, cfg)
    for g in args.grid:
        if g < 1 or cfg.image_size % g:
            raise UsageError(f"grid {g} does not divide the image size {cfg.image_size}")
    items = _pairs(args, need_masks=False)
    results = run_items(args, _shuffle_one, items, weights, cfg)
    for res in results:
        run.outputs += res["files"]
    if len(results) > 1:
        for g in args.grid:
            _, mean = _mean_rows(results, g)
            path = Path(args.out) / f"report_mean_g{g}.csv"
            write_report_csv(path, mean)
            run.outputs.append(str(path))


def cmd_tsne(args, run):
    weights, cfg = run.model()
    _check_sweep_layers(args, cfg)
    items = _pairs(args, need_masks=False)
    for res in run_items(args, _tsne_one, items, weights, cfg):
        run.outputs += res["files"]


def cmd_cluster(args, run):
    weights, cfg = run.model()
    _check_sweep_layers(args, cfg)
    for g in args.shuffle_grid:
        if g < 1 or cfg.image_size % g:
            raise UsageError(f"shuffle grid {g} does not divide the image size {cfg.image_size}")
    items = _dataset_pairs(args)
    if not items:
        raise UsageError("no image/mask pairs found")
    results = run_items(args, _cluster_one, items, weights, cfg)
    selected = [r["id"] for r in results if r["selected"]]
    summary = {
        "images": len(results),
        "selected": len(selected),
        "selected_ids": selected,
        "objects": {r["id"]: {str(k): v for k, v in r["objects"].items()} for r in results},
        "tables": {},
    }
    for res in results:
        run.outputs += res["files"]
    print(f"{len(selected)} selected of {len(results)} images")
    if selected:
        for key in [None, *args.shuffle_grid]:
            per_image, mean = _mean_rows(results, key)
            name = "report_mean.csv" if key is None else f"report_mean_g{key}.csv"
            path = Path(args.out) / name
            write_report_csv(path, mean)
            run.outputs.append(str(path))
            summary["tables"][name] = len(per_image)
    path = Path(args.out) / "selection.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.outputs.append(str(path))


def cmd_theorem(args, run):
    out = Path(args.out)
    contraction = verify_contraction(args.trials, seed=args.seed)
    checked, random_violations = verify_bound_trials(args.bound_instances, seed=args.seed)
    sizes_list = args.sizes or [[3, 3], [4, 4, 4]]
    points, skipped = [], []
    first_feasible = None
    for sizes in sizes_list:
        for el in args.eps_l:
            for eu in args.eps_u:
                point = {"sizes": sizes, "eps_l": el, "eps_u": eu}
                if el > eu:
                    skipped.append({**point, "reason": "eps_l > eps_u"})
                    continue
                violations, worst = 0, 0.0
                try:
                    for k in range(args.point_instances):
                        inst = make_clustered_instance(
                            sizes, args.dim, el, eu, seed=args.seed + k,
                            spread=args.spread, separation=args.separation,
                        )
                        rep = verify_bound(inst)
                        violations += sum(not c.satisfied for c in rep.clusters)
                        worst = max([worst] + [c.d_after / c.rhs for c in rep.clusters if c.rhs > 0])
                except InfeasibleInstanceError as exc:
                    skipped.append({**point, "reason": str(exc)})
                    continue
                if first_feasible is None:
                    first_feasible = point
                points.append({**point, "instances": args.point_instances,
                               "violations": violations, "max_lhs_over_rhs": worst})
    report = {
        "contraction": contraction.to_dict(),
        "bound_random": {"instances": checked, "violations": random_violations},
        "bound_sweep": points,
        "skipped": skipped,
        "total_violations": len(contraction.violations) + len(random_violations)
        + sum(p["violations"] for p in points),
    }
    if first_feasible is not None:
        inst = make_clustered_instance(
            first_feasible["sizes"], args.dim, first_feasible["eps_l"], first_feasible["eps_u"],
            seed=args.seed, spread=args.spread, separation=args.separation,
        )
        traj = iterate_dynamics(inst, args.steps, mode=args.mode, seed=args.seed)
        path = out / "trajectory.csv"
        write_trajectory_csv(path, traj)
        run.outputs.append(str(path))
        report["trajectory"] = {**first_feasible, "mode": args.mode, "steps": args.steps}
    path = out / "theorem.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    run.outputs.append(str(path))
    print(f"violations: {report['total_violations']}; skipped sweep points: {len(skipped)}")


def cmd_inspect_weights(args, run):
    path = _require_file(args.weights, "--weights")
    weights = load_archive(path)
    if args.convert != "none":
        weights = CONVERTERS[args.convert](weights)
    meta = read_metadata(path)
    report = {
        "tensors": len(weights),
        "parameters": int(sum(np.size(v) for v in weights.values())),
        "metadata": meta,
    }
    status = EXIT_OK
    try:
        if args.model_config:
            cfg = ModelConfig.from_dict(json.loads(_require_file(args.model_config, "--model-config").read_text()))
        elif CONFIG_META_KEY in meta:
            cfg = ModelConfig.from_dict(json.loads(meta[CONFIG_META_KEY]))
        else:
            cfg = infer_config(weights, num_heads=args.heads)
        report["config"] = cfg.to_dict()
        check_weights(weights, cfg)
        report["manifest"] = "ok"
        run.cfg = cfg
    except (ManifestError, ValueError) as exc:
        report["manifest"] = str(exc)
        status = EXIT_FORMAT
    if args.save and status == EXIT_OK:
        write_archive(args.save, weights, {CONFIG_META_KEY: json.dumps(run.cfg.to_dict(), sort_keys=True)})
        report["saved"] = str(args.save)
        run.outputs.append(str(args.save))
    out = Path(args.out) / "inspect.json"
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    run.outputs.append(str(out))
    print(json.dumps({k: report[k] for k in ("tensors", "parameters", "manifest")}))
    return status


COMMANDS = {
    "visualize": cmd_visualize,
    "occlude": cmd_occlude,
    "shuffle": cmd_shuffle,
    "cluster": cmd_cluster,
    "tsne": cmd_tsne,
    "theorem": cmd_theorem,
    "inspect-weights": cmd_inspect_weights,
}


class Run:
    def __init__(self, args):
        self.args = args
        self.outputs = []
        self.cfg = None
        self._model = None

    def model(self):
        if self._model is None:
            self._model = load_model(self.args)
            self.cfg = self._model[1]
        return self._model

    def write_manifest(self, status):
        out = Path(self.args.out)
        params = {k: v for k, v in sorted(vars(self.args).items())}
        manifest = {
            "version": __version__,
            "command": self.args.command,
            "exit_code": status,
            "params": _jsonable(params),
            "model": None if self.cfg is None else self.cfg.to_dict(),
            "outputs": sorted({_relative(p, out) for p in self.outputs}),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _relative(path, root):
    try:
        return str(Path(path).resolve().relative_to(root.resolve()))
    except ValueError:
        return str(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def _execute(args, run):
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, run) or EXIT_OK
    except UsageError as exc:
        print(f"vitscope {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (ArchiveFormatError, ManifestError, ShapeError) as exc:
        print(f"vitscope {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (InvariantError, NotStochasticError) as exc:
        print(f"vitscope {args.command}: invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (VitscopeError, ValueError, OSError) as exc:
        print(f"vitscope {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except Exception:
        traceback.print_exc()
        return EXIT_INVARIANT


def main(argv=None):
    args = parse_args(sys.argv[1:] if argv is None else argv)
    run = Run(args)
    status = _execute(args, run)
    # failed runs still record their parameters and exit code
    if Path(args.out).is_dir():
        run.write_manifest(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
