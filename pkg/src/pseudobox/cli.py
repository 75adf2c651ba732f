"""Command-line interface.

Subcommands: ``extract`` (stacks -> pseudo-labeled training set),
``selftrain-filter`` (scored predictions -> next training set), ``eval``
(AR@k and label metrics), ``loss`` (set-matched detection loss),
``kmeans fit``/``kmeans assign`` (standalone clustering), and ``inspect``
(validate and describe a ``.fms`` file).

Conventions: progress and human-readable summaries go to stderr; ``--json``
prints a machine-readable result object to stdout. ``--config FILE`` loads
defaults from a JSON object whose keys are the long option names with
underscores; explicit flags win over the file. Exit codes: 0 success, 1
data error (unreadable or inconsistent inputs), 2 usage or schema error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .formats import (
    AnnotatedImage,
    FormatError,
    SchemaError,
    read_annotations,
    read_feature_stack,
    write_annotations,
)
from .kmeans import kmeans_assign, kmeans_fit, load_model, save_model
from .matching import MatchWeights, Prediction, detection_loss, min_permutation_loss
from .metrics import DEFAULT_K, evaluate_proposals
from .pipeline import ProposalExtractor, extract_dataset
from .selftrain import DEFAULT_IOU_MAX, DEFAULT_TOP_K, build_next_training_set
from .validation import l2_normalize_rows

_ORACLE_MAX_SLOTS = 8


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit_json(obj: dict) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: config is not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    return cfg


def _resolve(args: argparse.Namespace, cfg: dict, key: str, default):
    """Precedence: explicit flag > config file > built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in cfg:
        return cfg[key]
    return default


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _features_from_fms(path: str) -> np.ndarray:
    """Read an (N, d) feature matrix stored as a single d x N x 1 level."""
    stack = read_feature_stack(path)
    if len(stack.levels) != 1 or stack.levels[0].width != 1:
        raise FormatError(f"{path}: expected a single level with W=1 holding an (N, d) matrix")
    return stack.levels[0].data[:, :, 0].T.astype(np.float64)


# ---------------------------------------------------------------------------
# extract


def _cmd_extract(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    in_dir = _resolve(args, cfg, "input", None)
    out_path = _resolve(args, cfg, "out", None)
    if in_dir is None or out_path is None:
        raise SchemaError("extract requires --input and --out")
    if not os.path.isdir(in_dir):
        raise FileNotFoundError(f"input directory not found: {in_dir}")

    paths = sorted(
        os.path.join(in_dir, name) for name in os.listdir(in_dir) if name.endswith(".fms")
    )
    if not paths:
        print(f"no feature stacks found in {in_dir}", file=sys.stderr)
        return 1

    sizes = None
    sizes_path = _resolve(args, cfg, "sizes", None)
    if sizes_path is not None:
        with open(sizes_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise SchemaError(f"{sizes_path}: sizes file must map image_id to [width, height]")
        sizes = {}
        for key, value in raw.items():
            if not (isinstance(value, list) and len(value) == 2):
                raise SchemaError(f"{sizes_path}: entry {key!r} must be [width, height]")
            sizes[key] = (int(value[0]), int(value[1]))

    seed = int(_resolve(args, cfg, "seed", 0))
    extractor = ProposalExtractor(
        levels=_resolve(args, cfg, "levels", None),
        cluster_counts=tuple(_resolve(args, cfg, "cluster_counts", (2, 3, 4, 5))),
        knn=int(_resolve(args, cfg, "knn", 10)),
        iou_merge=float(_resolve(args, cfg, "iou_merge", 0.75)),
        sim_merge=float(_resolve(args, cfg, "sim_merge", 0.90)),
        min_rel_area=float(_resolve(args, cfg, "min_rel_area", 0.001)),
        seed=seed,
    )
    n_classes = int(_resolve(args, cfg, "classes", 2048))
    threads = int(_resolve(args, cfg, "threads", 1))

    _progress(f"extracting proposals from {len(paths)} stacks")
    images, model, stats = extract_dataset(
        paths,
        extractor=extractor,
        n_classes=n_classes,
        seed=seed,
        threads=threads,
        sizes=sizes,
    )
    for name, error in stats.failures:
        print(f"failed: {name}: {error}", file=sys.stderr)

    write_annotations(out_path, images, n_classes)
    model_out = _resolve(args, cfg, "model_out", None)
    if model_out is not None:
        save_model(model_out, model)

    _progress(f"images: {stats.images}")
    _progress(f"raw regions: {stats.raw_regions}")
    _progress(f"proposals: {stats.proposals}")
    _progress(f"mean proposals/image: {stats.mean_proposals_per_image:.2f}")
    _progress(f"wrote: {out_path}")
    if args.json:
        _emit_json(
            {
                "images": stats.images,
                "raw_regions": stats.raw_regions,
                "proposals": stats.proposals,
                "mean_proposals_per_image": stats.mean_proposals_per_image,
                "failures": len(stats.failures),
                "out": out_path,
            }
        )
    return 1 if stats.failures else 0


# ---------------------------------------------------------------------------
# selftrain-filter


def _cmd_selftrain_filter(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    pred_path = _resolve(args, cfg, "predictions", None)
    out_path = _resolve(args, cfg, "out", None)
    if pred_path is None or out_path is None:
        raise SchemaError("selftrain-filter requires --predictions and --out")
    top_k = int(_resolve(args, cfg, "top_k", DEFAULT_TOP_K))
    iou_max = float(_resolve(args, cfg, "iou_max", DEFAULT_IOU_MAX))

    images, n_classes = read_annotations(pred_path)
    if any(img.scores is None for img in images):
        raise SchemaError(f"{pred_path}: predictions must carry scores")
    kept = build_next_training_set(images, top_k=top_k, iou_max=iou_max)
    write_annotations(out_path, kept, n_classes)

    n_in = sum(img.boxes.shape[0] for img in images)
    n_out = sum(img.boxes.shape[0] for img in kept)
    _progress(f"images: {len(images)}")
    _progress(f"boxes in: {n_in}")
    _progress(f"boxes kept: {n_out}")
    _progress(f"wrote: {out_path}")
    if args.json:
        _emit_json({"images": len(images), "boxes_in": n_in, "boxes_kept": n_out, "out": out_path})
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    gt_path = _resolve(args, cfg, "gt", None)
    pred_path = _resolve(args, cfg, "pred", None)
    if gt_path is None or pred_path is None:
        raise SchemaError("eval requires --gt and --pred")
    k = int(_resolve(args, cfg, "k", DEFAULT_K))

    gt_images, _ = read_annotations(gt_path)
    pred_images, _ = read_annotations(pred_path)
    report = evaluate_proposals(gt_images, pred_images, k=k)

    ar = report.ar_at_k[k]
    _progress(f"AR@{k}: {ar:.4f}")
    if report.acc is not None:
        _progress(f"ACC: {report.acc:.4f}")
    if report.purity is not None:
        _progress(f"purity: {report.purity:.4f}")
    if args.json:
        _emit_json(report.to_dict())
    return 0


# ---------------------------------------------------------------------------
# loss


def _read_results_array(path: str, id_to_image: dict[int, AnnotatedImage]) -> dict[int, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            entries = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise SchemaError(f"{path}: results must be a JSON array")
    per_image: dict[int, list[dict]] = {img_id: [] for img_id in id_to_image}
    for entry in entries:
        if not isinstance(entry, dict):
            raise SchemaError(f"{path}: result entries must be objects")
        for key in ("image_id", "category_id", "bbox"):
            if key not in entry:
                raise SchemaError(f"{path}: result entry missing {key!r}")
        if entry["image_id"] not in id_to_image:
            raise SchemaError(f"{path}: result references unknown image id {entry['image_id']}")
        bbox = entry["bbox"]
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise SchemaError(f"{path}: bbox must be [x, y, w, h]")
        per_image[entry["image_id"]].append(entry)
    return per_image


def _cmd_loss(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    gt_path = _resolve(args, cfg, "gt", None)
    pred_path = _resolve(args, cfg, "pred", None)
    logits_dir = _resolve(args, cfg, "logits", None)
    if gt_path is None or pred_path is None or logits_dir is None:
        raise SchemaError("loss requires --gt, --pred, and --logits")
    weights = MatchWeights(
        l1=float(_resolve(args, cfg, "l1", 5.0)),
        giou=float(_resolve(args, cfg, "giou", 2.0)),
        eos=float(_resolve(args, cfg, "eos", 0.1)),
        class_term=str(_resolve(args, cfg, "match_class_term", "prob")),
    )
    oracle = bool(args.oracle or cfg.get("oracle", False))
    if oracle and weights.class_term != "logprob":
        raise SchemaError("--oracle requires --match-class-term logprob (cost must equal the loss)")

    gt_images, n_classes = read_annotations(gt_path)
    with open(gt_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    ids_in_order = [im["id"] for im in doc["images"]]
    id_to_image = dict(zip(ids_in_order, gt_images))
    results = _read_results_array(pred_path, id_to_image)

    totals = {"total": 0.0, "class": 0.0, "l1": 0.0, "giou": 0.0}
    n_eval = 0
    for img_id in ids_in_order:
        img = id_to_image[img_id]
        entries = results[img_id]
        if not entries and img.boxes.shape[0] == 0:
            continue
        if not entries:
            raise ValueError(f"image {img.image_id!r} has ground truth but no predictions")

        sidecar = os.path.join(logits_dir, f"{img.image_id}.fms")
        stack = read_feature_stack(sidecar)
        if len(stack.levels) != 1 or stack.levels[0].width != 1:
            raise SchemaError(f"{sidecar}: expected one level with W=1 holding slot logits")
        logits = stack.levels[0].data[:, :, 0].T.astype(np.float64)  # (Q, C+1)
        if logits.shape[1] != n_classes + 1:
            raise SchemaError(
                f"{sidecar}: logits width {logits.shape[1]} does not match "
                f"{n_classes} classes (+1 no-object) declared by {gt_path}"
            )
        if logits.shape[0] != len(entries):
            raise SchemaError(
                f"{sidecar}: {logits.shape[0]} logit rows but {len(entries)} prediction entries"
            )

        preds = []
        for entry, row in zip(entries, logits):
            x, y, w, h = (float(v) for v in entry["bbox"])
            box = np.array([x / img.width, y / img.height, w / img.width, h / img.height])
            try:
                preds.append(Prediction(box=box, logits=row))
            except ValueError as exc:
                raise SchemaError(f"{pred_path}: image {img.image_id!r}: {exc}") from exc

        gt_norm = img.boxes.copy()
        gt_norm[:, 0] /= img.width
        gt_norm[:, 2] /= img.width
        gt_norm[:, 1] /= img.height
        gt_norm[:, 3] /= img.height
        result = detection_loss(preds, gt_norm, img.labels, weights=weights)
        if oracle:
            if len(preds) > _ORACLE_MAX_SLOTS:
                raise SchemaError(
                    f"--oracle supports at most {_ORACLE_MAX_SLOTS} prediction slots, "
                    f"image {img.image_id!r} has {len(preds)}"
                )
            brute = min_permutation_loss(preds, gt_norm, img.labels, weights=weights)
            if abs(brute - result.total_loss) > 1e-9:
                print(
                    f"oracle mismatch on {img.image_id!r}: "
                    f"matched {result.total_loss!r} vs brute force {brute!r}",
                    file=sys.stderr,
                )
                return 1
        totals["total"] += result.total_loss
        totals["class"] += result.class_loss
        totals["l1"] += result.box_l1
        totals["giou"] += result.box_giou
        n_eval += 1

    if n_eval == 0:
        raise ValueError("no images with predictions or ground truth to evaluate")
    _progress(f"images: {n_eval}")
    _progress(f"total loss: {totals['total']:.6f}")
    _progress(f"mean loss: {totals['total'] / n_eval:.6f}")
    _progress(f"class: {totals['class']:.6f}  l1: {totals['l1']:.6f}  giou: {totals['giou']:.6f}")
    if oracle:
        _progress("oracle: all images matched brute force")
    if args.json:
        _emit_json(
            {
                "images": n_eval,
                "total_loss": totals["total"],
                "mean_loss": totals["total"] / n_eval,
                "class_loss": totals["class"],
                "box_l1": totals["l1"],
                "box_giou": totals["giou"],
                "oracle_checked": oracle,
            }
        )
    return 0


# ---------------------------------------------------------------------------
# kmeans


def _cmd_kmeans_fit(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    feat_path = _resolve(args, cfg, "features", None)
    out_path = _resolve(args, cfg, "out", None)
    n_clusters = _resolve(args, cfg, "clusters", None)
    if feat_path is None or out_path is None or n_clusters is None:
        raise SchemaError("kmeans fit requires --features, --clusters, and --out")
    seed = int(_resolve(args, cfg, "seed", 0))

    features = _features_from_fms(feat_path)
    if not args.no_normalize:
        features = l2_normalize_rows(features)
    history: list[float] = []
    model = kmeans_fit(
        features,
        int(n_clusters),
        seed=seed,
        max_iter=int(_resolve(args, cfg, "max_iter", 300)),
        tol=float(_resolve(args, cfg, "tol", 1e-4)),
        inertia_history=history,
    )
    save_model(out_path, model)
    _progress(f"clusters: {model.n_clusters}")
    _progress(f"inertia: {model.inertia:.6f}")
    _progress(f"wrote: {out_path}")
    if args.json:
        _emit_json(
            {
                "clusters": model.n_clusters,
                "inertia": model.inertia,
                "iterations": len(history),
                "out": out_path,
            }
        )
    return 0


def _cmd_kmeans_assign(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    model_path = _resolve(args, cfg, "model", None)
    feat_path = _resolve(args, cfg, "features", None)
    out_path = _resolve(args, cfg, "out", None)
    if model_path is None or feat_path is None or out_path is None:
        raise SchemaError("kmeans assign requires --model, --features, and --out")

    model = load_model(model_path)
    features = _features_from_fms(feat_path)
    if not args.no_normalize:
        features = l2_normalize_rows(features)
    labels = kmeans_assign(model, features)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump({"labels": [int(v) for v in labels]}, fh, indent=2)
        fh.write("\n")
    _progress(f"assigned: {labels.size}")
    _progress(f"wrote: {out_path}")
    if args.json:
        _emit_json({"assigned": int(labels.size), "out": out_path})
    return 0


# ---------------------------------------------------------------------------
# inspect


def _cmd_inspect(args: argparse.Namespace) -> int:
    stack = read_feature_stack(args.input)
    info = {
        "image_id": stack.image_id,
        "levels": [
            {"level": fm.level, "channels": fm.channels, "height": fm.height, "width": fm.width}
            for fm in stack.levels
        ],
    }
    _progress(f"image_id: {stack.image_id}")
    for fm in stack.levels:
        _progress(f"level {fm.level}: d={fm.channels} H={fm.height} W={fm.width}")
    _progress("ok")
    if args.json:
        _emit_json(info)
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of option defaults; explicit flags win")
    parser.add_argument("--json", action="store_true", help="print a JSON result object to stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudobox",
        description="Unsupervised region proposals and pseudo-labels from backbone feature maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="stacks -> pseudo-labeled training set")
    p.add_argument("--input", help="directory of .fms feature stacks")
    p.add_argument("--out", help="output annotations JSON path")
    p.add_argument("--classes", type=int, help="number of pseudo-classes (default 2048)")
    p.add_argument("--levels", type=_csv_ints, help="level indices to cluster (default: deepest two)")
    p.add_argument("--cluster-counts", type=_csv_ints, dest="cluster_counts",
                   help="cluster counts per level (default 2,3,4,5)")
    p.add_argument("--knn", type=int, help="affinity neighbors per pixel (default 10)")
    p.add_argument("--iou-merge", type=float, dest="iou_merge", help="merge IoU threshold (default 0.75)")
    p.add_argument("--sim-merge", type=float, dest="sim_merge",
                   help="merge cosine threshold for overlapping boxes (default 0.90)")
    p.add_argument("--min-rel-area", type=float, dest="min_rel_area",
                   help="drop proposals smaller than this image fraction (default 0.001)")
    p.add_argument("--seed", type=int, help="seed for all randomized stages (default 0)")
    p.add_argument("--threads", type=int, help="worker threads; output is thread-count independent")
    p.add_argument("--sizes", help="JSON mapping image_id -> [width, height] pixel canvas")
    p.add_argument("--model-out", dest="model_out", help="also save the fitted pseudo-label model here")
    _add_common(p)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("selftrain-filter", help="scored predictions -> next training set")
    p.add_argument("--predictions", help="scored annotations JSON")
    p.add_argument("--out", help="output annotations JSON path")
    p.add_argument("--top-k", type=int, dest="top_k", help="keep at most k boxes per image (default 100)")
    p.add_argument("--iou-max", type=float, dest="iou_max",
                   help="suppress boxes overlapping an accepted box at or above this IoU (default 0.55)")
    _add_common(p)
    p.set_defaults(func=_cmd_selftrain_filter)

    p = sub.add_parser("eval", help="AR@k plus label metrics on identical boxes")
    p.add_argument("--gt", help="ground-truth annotations JSON")
    p.add_argument("--pred", help="proposal/prediction annotations JSON")
    p.add_argument("--k", type=int, help="proposal budget per image (default 100)")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("loss", help="set-matched detection loss over a results file")
    p.add_argument("--gt", help="ground-truth annotations JSON")
    p.add_argument("--pred", help="COCO-style results array JSON")
    p.add_argument("--logits", help="directory of per-image .fms logit sidecars")
    p.add_argument("--l1", type=float, help="L1 box weight (default 5)")
    p.add_argument("--giou", type=float, help="generalized-IoU box weight (default 2)")
    p.add_argument("--eos", type=float, help="no-object class down-weight (default 0.1)")
    p.add_argument("--match-class-term", dest="match_class_term", choices=("prob", "logprob"),
                   help="class term used in the matching cost (default prob)")
    p.add_argument("--oracle", action="store_true",
                   help="cross-check each image against brute-force permutation search")
    _add_common(p)
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("kmeans", help="standalone clustering utilities")
    ksub = p.add_subparsers(dest="kmeans_command", required=True)

    kp = ksub.add_parser("fit", help="fit centroids on an (N, d) feature matrix")
    kp.add_argument("--features", help=".fms file holding one d x N x 1 level")
    kp.add_argument("--clusters", type=int, help="number of clusters")
    kp.add_argument("--seed", type=int, help="seed (default 0)")
    kp.add_argument("--max-iter", type=int, dest="max_iter", help="iteration cap (default 300)")
    kp.add_argument("--tol", type=float, help="centroid shift convergence threshold (default 1e-4)")
    kp.add_argument("--out", help="output .plm model path")
    kp.add_argument("--no-normalize", action="store_true", help="skip L2 row normalization")
    _add_common(kp)
    kp.set_defaults(func=_cmd_kmeans_fit)

    kp = ksub.add_parser("assign", help="assign features to fitted centroids")
    kp.add_argument("--model", help=".plm model path")
    kp.add_argument("--features", help=".fms file holding one d x N x 1 level")
    kp.add_argument("--out", help="output labels JSON path")
    kp.add_argument("--no-normalize", action="store_true", help="skip L2 row normalization")
    _add_common(kp)
    kp.set_defaults(func=_cmd_kmeans_assign)

    p = sub.add_parser("inspect", help="validate a .fms file and describe its levels")
    p.add_argument("--input", required=True, help=".fms file to inspect")
    _add_common(p)
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
