"""Command-line pipeline: train, segment, eval, sweep-lambda, synth.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence. Configuration is a JSON object of namespaced keys (see
CONFIG_KEYS); unknown keys are rejected by name. CUTS_THREADS caps the
worker count used for per-image parallel work.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import condense, metrics, objective, segment, synth
from .encoder import ArchSpec, forward, load_model, save_model
from .errors import (
    ConfigError,
    CutsError,
    NonFiniteLossError,
    SelectorUnsatisfiableError,
)
from .imgio import (
    BinaryMask,
    Image,
    load_image,
    read_label_map,
    render_label_map,
    resize_bilinear,
    save_image,
    write_label_map,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")

# key -> (type, default); None default means "derived from the data"
CONFIG_KEYS = {
    "seed": (int, 0),
    "io.resolution": (int, 128),
    "arch.num_layers": (int, 4),
    "arch.filter_size": (int, 5),
    "arch.channel_widths": (list, [16, 32, 64, 128]),
    "arch.embed_dim": (int, 128),
    "arch.recon_patch": (int, 5),
    "train.lambda": (float, 0.01),
    "train.tau": (float, 0.5),
    "train.epochs": (int, 50),
    "train.learning_rate": (float, 1e-3),
    "train.anchors_per_image": (int, 256),
    "mine.radius": (int, 3),
    "mine.ssim_threshold": (float, 0.5),
    "mine.max_pos": (int, 4),
    "condense.epsilon0": (float, None),
    "condense.epsilon_growth": (float, 2.0),
    "condense.merge_threshold": (float, None),
    "condense.max_iters": (int, 500),
    "condense.snapshot_policy": (str, "on-merge-events"),
    "condense.exact": (bool, False),
    "condense.max_points": (int, 1024),
    "sweep.heldout_n": (int, 8),
    "sweep.heldout_kind": (str, "two-region"),
    "sweep.heldout_seed": (int, 990),
}


def load_config(path=None, seed_override=None) -> dict:
    """Read and strictly validate a config file; unknown keys fail fast."""
    cfg = {k: v for k, (_, v) in CONFIG_KEYS.items()}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}")
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for key, value in raw.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key: {key!r}")
            want, default = CONFIG_KEYS[key]
            if value is None and default is None:
                continue
            if want is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if want is list:
                if not isinstance(value, list) or not all(
                    isinstance(v, int) and not isinstance(v, bool) for v in value
                ):
                    raise ConfigError(f"config key {key!r} must be a list of integers")
            elif want is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f"config key {key!r} must be a boolean")
            elif want is int:
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"config key {key!r} must be an integer")
            elif want is float:
                if not isinstance(value, float):
                    raise ConfigError(f"config key {key!r} must be a number")
            elif want is str:
                if not isinstance(value, str):
                    raise ConfigError(f"config key {key!r} must be a string")
            cfg[key] = value
    if seed_override is not None:
        cfg["seed"] = seed_override
    return cfg


def _arch_from_config(cfg: dict, input_channels: int) -> ArchSpec:
    return ArchSpec(
        num_layers=cfg["arch.num_layers"],
        filter_size=cfg["arch.filter_size"],
        channel_widths=tuple(cfg["arch.channel_widths"]),
        embed_dim=cfg["arch.embed_dim"],
        recon_patch=cfg["arch.recon_patch"],
        input_channels=input_channels,
    )


def _train_config(cfg: dict, epochs=None, lam=None) -> objective.TrainConfig:
    return objective.TrainConfig(
        lam=cfg["train.lambda"] if lam is None else lam,
        tau=cfg["train.tau"],
        epochs=cfg["train.epochs"] if epochs is None else epochs,
        learning_rate=cfg["train.learning_rate"],
        anchors_per_image=cfg["train.anchors_per_image"],
        mine_radius=cfg["mine.radius"],
        mine_ssim_threshold=cfg["mine.ssim_threshold"],
        mine_max_pos=cfg["mine.max_pos"],
        seed=cfg["seed"],
    )


def _condense_config(cfg: dict) -> condense.CondenseConfig:
    return condense.CondenseConfig(
        epsilon0=cfg["condense.epsilon0"],
        epsilon_growth=cfg["condense.epsilon_growth"],
        merge_threshold=cfg["condense.merge_threshold"],
        max_iters=cfg["condense.max_iters"],
        snapshot_policy=cfg["condense.snapshot_policy"],
        exact=cfg["condense.exact"],
        max_points=cfg["condense.max_points"],
        seed=cfg["seed"],
    )


def worker_count() -> int:
    """Worker cap from CUTS_THREADS (default: cpu count)."""
    raw = os.environ.get("CUTS_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def _list_images(data_dir: Path) -> list:
    return sorted(p for p in data_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _load_resized(path: Path, resolution: int) -> Image:
    img = load_image(path)
    if img.height != resolution or img.width != resolution:
        img = resize_bilinear(img, resolution, resolution)
    return img


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        print(f"error: data directory not found: {data_dir}", file=sys.stderr)
        return EXIT_DATA
    paths = _list_images(data_dir)
    if not paths:
        print(f"error: no readable images in {data_dir}", file=sys.stderr)
        return EXIT_DATA
    try:
        dataset = [_load_resized(p, cfg["io.resolution"]) for p in paths]
    except (CutsError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    channels = {img.channels for img in dataset}
    if len(channels) != 1:
        print(f"error: mixed channel counts in corpus: {sorted(channels)}", file=sys.stderr)
        return EXIT_DATA

    arch = _arch_from_config(cfg, channels.pop())
    tcfg = _train_config(cfg)
    try:
        params, history = objective.train(dataset, tcfg, arch)
    except NonFiniteLossError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(params, out)
    with open(out.with_suffix(out.suffix + ".history.jsonl"), "w") as f:
        for epoch, bd in enumerate(history):
            f.write(json.dumps({"epoch": epoch, **bd.to_dict()}) + "\n")
    if history:
        final = history[-1]
        print(
            f"final loss: combined={final.combined:.6f} "
            f"contrastive={final.contrastive:.6f} reconstruction={final.reconstruction:.6f}"
        )
    else:
        print("no epochs run; wrote initialized parameters")
    return EXIT_OK


def parse_selectors(spec: str) -> list:
    """Parse 'persistent,k10,count:5,index:3' into selector descriptors.

    Returns (token, kind, value) triples where kind is 'persistent',
    'kmeans', 'count' or 'index'.
    """
    out = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "persistent":
            out.append((token, "persistent", 0))
        elif token.startswith("k") and token[1:].isdigit():
            out.append((token, "kmeans", int(token[1:])))
        elif token.startswith("count:"):
            out.append((token.replace(":", ""), "count", int(token.split(":", 1)[1])))
        elif token.startswith("index:"):
            out.append((token.replace(":", ""), "index", int(token.split(":", 1)[1])))
        else:
            raise ConfigError(f"unknown selector {token!r}")
    if not out:
        raise ConfigError("selector list is empty")
    return out


def cmd_segment(args) -> int:
    cfg = load_config(args.config, args.seed)
    try:
        selectors = parse_selectors(args.selectors)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        params = load_model(args.model)
    except (CutsError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    img_path = Path(args.data)
    try:
        img = _load_resized(img_path, cfg["io.resolution"])
    except (CutsError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    hint = None
    if args.hint:
        try:
            hint_map = read_label_map(args.hint)
        except (CutsError, FileNotFoundError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_DATA
        hint = BinaryMask(hint_map.labels != 0)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = img_path.stem

    field = forward(params, img)
    cloud = condense.PointCloud.from_field(field)
    h, w = img.height, img.width

    need_trace = any(kind in ("persistent", "count", "index") for _, kind, _ in selectors)
    trace = None
    if need_trace:
        trace = condense.condense_run(cloud, _condense_config(cfg))
        with open(out_dir / f"{stem}_trace.json", "w") as f:
            json.dump(trace.to_dict(), f, indent=1)

    status = EXIT_OK
    for token, kind, value in selectors:
        try:
            if kind == "kmeans":
                labels = condense.spectral_kmeans(cloud, value, cfg["seed"])
                lm = segment.LabelMap(labels.reshape(h, w))
            elif kind == "persistent":
                lm = segment.label_map_at(
                    trace, segment.GranularitySelector("persistent"), h, w
                )
            elif kind == "count":
                lm = segment.label_map_at(
                    trace, segment.GranularitySelector("by-cluster-count", value), h, w
                )
            else:
                lm = segment.label_map_at(
                    trace, segment.GranularitySelector("by-snapshot-index", value), h, w
                )
        except SelectorUnsatisfiableError as e:
            print(f"warning: selector {token}: {e}", file=sys.stderr)
            continue
        write_label_map(lm, out_dir / f"{stem}_{token}.lbl")
        save_image(render_label_map(lm), out_dir / f"{stem}_{token}.png")
        if hint is not None:
            mask = segment.binarize_with_hint(lm, hint)
            mask_lm = segment.LabelMap(mask.bits.astype(np.int64))
            write_label_map(mask_lm, out_dir / f"{stem}_{token}_mask.lbl")
            save_image(render_label_map(mask_lm), out_dir / f"{stem}_{token}_mask.png")
    return status


def _eval_pairs(pred_path: Path, gt_path: Path) -> list:
    if pred_path.is_dir() != gt_path.is_dir():
        raise ConfigError("pred and gt must both be files or both directories")
    if pred_path.is_dir():
        preds = sorted(p for p in pred_path.iterdir() if p.suffix == ".lbl")
        gts = sorted(p for p in gt_path.iterdir() if p.suffix == ".lbl")
        if len(preds) != len(gts):
            raise ConfigError(f"{len(preds)} predictions vs {len(gts)} ground truths")
        return list(zip(preds, gts))
    return [(pred_path, gt_path)]


def _eval_one(pair, mode: str) -> dict:
    pred_path, gt_path = pair
    record = {"pred": str(pred_path), "gt": str(gt_path)}
    try:
        pred = read_label_map(pred_path)
        gt = read_label_map(gt_path)
        if mode == "binary":
            report = metrics.binary_summary(
                BinaryMask(pred.labels != 0), BinaryMask(gt.labels != 0)
            )
        else:
            report = metrics.multiclass_summary(pred, gt)
        record.update(report.to_dict())
    except (CutsError, FileNotFoundError) as e:
        record["error"] = str(e)
    return record


def cmd_eval(args) -> int:
    try:
        pairs = _eval_pairs(Path(args.pred), Path(args.gt))
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if not pairs:
        print("error: nothing to evaluate", file=sys.stderr)
        return EXIT_DATA

    workers = min(worker_count(), len(pairs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda pr: _eval_one(pr, args.mode), pairs))
    else:
        records = [_eval_one(pr, args.mode) for pr in pairs]

    ok = [r for r in records if "error" not in r]
    summary = {"summary": True, "count": len(ok), "failed": len(records) - len(ok)}
    for key in ("dice", "hausdorff", "ssim", "ergas", "rmse"):
        vals = [r[key] for r in ok]
        summary[f"{key}_mean"] = float(np.mean(vals)) if vals else None
        summary[f"{key}_std"] = float(np.std(vals)) if vals else None

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
        f.write(json.dumps(summary) + "\n")
    print(
        f"evaluated {len(ok)}/{len(records)} pairs"
        + (f", mean dice {summary['dice_mean']:.4f}" if ok else "")
    )
    return EXIT_OK if ok else EXIT_DATA


def _segment_kmeans_mask(params, img: Image, gt_labels, k: int, seed: int):
    field = forward(params, img)
    cloud = condense.PointCloud.from_field(field)
    labels = condense.spectral_kmeans(cloud, k, seed)
    lm = segment.LabelMap(labels.reshape(img.height, img.width))
    return segment.binarize_with_hint(lm, BinaryMask(gt_labels != 0))


def cmd_sweep_lambda(args) -> int:
    cfg = load_config(args.config, args.seed)
    try:
        lambdas = [float(tok) for tok in args.lambdas.split(",") if tok.strip() != ""]
    except ValueError as e:
        print(f"error: bad lambda list: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if not lambdas:
        print("error: empty lambda list", file=sys.stderr)
        return EXIT_CONFIG

    data_dir = Path(args.data)
    paths = _list_images(data_dir) if data_dir.is_dir() else []
    if not paths:
        print(f"error: no readable images in {data_dir}", file=sys.stderr)
        return EXIT_DATA
    try:
        dataset = [_load_resized(p, cfg["io.resolution"]) for p in paths]
    except (CutsError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA

    # held-out synthetic pairs, independent of the training corpus
    rng = np.random.default_rng(cfg["sweep.heldout_seed"])
    held = [
        synth.synth_pair(cfg["sweep.heldout_kind"], cfg["io.resolution"], cfg["io.resolution"], rng)
        for _ in range(cfg["sweep.heldout_n"])
    ]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    arch = _arch_from_config(cfg, dataset[0].channels)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["lambda", "dice", "hausdorff", "ssim", "ergas", "rmse"])
        f.flush()
        for lam in lambdas:
            tcfg = _train_config(cfg, lam=lam)
            try:
                params, _ = objective.train(dataset, tcfg, arch)
            except NonFiniteLossError as e:
                print(f"error: lambda={lam}: {e}", file=sys.stderr)
                return EXIT_NUMERIC
            reports = []
            for img, gt in held:
                mask = _segment_kmeans_mask(params, img, gt.labels, 10, cfg["seed"])
                reports.append(metrics.binary_summary(mask, BinaryMask(gt.labels != 0)))
            writer.writerow(
                [
                    lam,
                    float(np.mean([r.dice for r in reports])),
                    float(np.mean([r.hausdorff for r in reports])),
                    float(np.mean([r.ssim for r in reports])),
                    float(np.mean([r.ergas for r in reports])),
                    float(np.mean([r.rmse for r in reports])),
                ]
            )
            f.flush()
            print(f"lambda={lam}: mean dice {np.mean([r.dice for r in reports]):.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind not in synth.KINDS:
        print(f"error: unknown kind {args.kind!r}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = load_config(args.config, args.seed)
    try:
        synth.generate_corpus(args.out, args.n, cfg["seed"], args.kind, cfg["io.resolution"])
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    print(f"wrote {args.n} {args.kind} image/label pairs to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cuts",
        description="Unsupervised multi-scale image segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the encoder on an image directory")
    p_train.add_argument("--config", default=None, help="JSON config path")
    p_train.add_argument("--data", required=True, help="directory of training images")
    p_train.add_argument("--out", required=True, help="output checkpoint path")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_seg = sub.add_parser("segment", help="segment one image with a trained model")
    p_seg.add_argument("--config", default=None)
    p_seg.add_argument("--model", required=True, help="checkpoint path")
    p_seg.add_argument("--data", required=True, help="image path")
    p_seg.add_argument("--out", required=True, help="output directory")
    p_seg.add_argument(
        "--selectors",
        default="persistent,k10",
        help="comma list: persistent, kN, count:N, index:N",
    )
    p_seg.add_argument("--hint", default=None, help="ground-truth label map for binarization")
    p_seg.add_argument("--seed", type=int, default=None)
    p_seg.set_defaults(func=cmd_segment)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("pred", help="prediction label map file or directory")
    p_eval.add_argument("gt", help="ground-truth label map file or directory")
    p_eval.add_argument("--out", required=True, help="JSONL report path")
    p_eval.add_argument("--mode", choices=("binary", "multiclass"), default="multiclass")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep-lambda", help="ablation sweep over the loss weighting")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--data", required=True, help="training image directory")
    p_sweep.add_argument("--lambdas", required=True, help="comma-separated lambda values")
    p_sweep.add_argument("--out", required=True, help="output CSV path")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep_lambda)

    p_synth = sub.add_parser("synth", help="generate a synthetic ground-truth corpus")
    p_synth.add_argument("--config", default=None)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--n", type=int, required=True, help="number of images")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--kind", choices=synth.KINDS, default="two-region")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
