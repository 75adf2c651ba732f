"""Batch feature dumps: images in, one ``.fms`` stack per image out.

A run is deterministic end to end: images are processed in sorted order,
inference runs single-threaded under ``torch.inference_mode`` with a fixed
batch size, and ``manifest.json`` records every knob that influenced the
bytes. Per-image decode failures are reported and skipped; the dump as a
whole fails only when nothing could be written.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

import torch
from pseudobox import FeatureMap, FeatureStack, write_feature_stack

from .models import STAGE_CHANNELS, build_backbone, stage_features, supported_models
from .preprocess import IMAGENET_MEAN, IMAGENET_STD, INTERPOLATION, load_image, preprocess

_BATCH = 8
_IMAGE_SUFFIXES = {".bmp", ".gif", ".jpeg", ".jpg", ".png", ".tif", ".tiff", ".webp"}


@dataclass
class DumpSpec:
    """One dump run: which backbone, which stages, which pixels, where to.

    ``images`` may be a directory (scanned for common image suffixes, sorted
    by name) or an explicit sequence of paths. ``levels`` are residual-stage
    indices in 1..4; they are deduplicated and sorted ascending, so the last
    selected level is always the deepest one.
    """

    model: str
    images: Sequence[str | Path] | str | Path
    out: str | Path
    levels: Sequence[int] = (1, 2, 3, 4)
    size: int = 224
    seed: int = 0
    checkpoint: str | Path | None = None

    def __post_init__(self) -> None:
        if self.model not in STAGE_CHANNELS:
            known = ", ".join(supported_models())
            raise ValueError(f"unknown model {self.model!r}; supported: {known}")
        levels = sorted({int(level) for level in self.levels})
        if not levels:
            raise ValueError("at least one level must be selected")
        bad = [level for level in levels if level not in (1, 2, 3, 4)]
        if bad:
            raise ValueError(f"levels must be residual-stage indices in 1..4, got {bad}")
        self.levels = tuple(levels)
        self.size = int(self.size)
        if self.size < 1:
            raise ValueError(f"input size must be >= 1, got {self.size}")

    def weights_tag(self) -> str:
        """How the backbone weights were obtained, as recorded in the manifest."""
        if self.checkpoint is not None:
            return f"checkpoint:{Path(self.checkpoint).name}"
        return f"random:{self.seed}"


def _image_paths(spec: DumpSpec) -> list[Path]:
    source = spec.images
    if isinstance(source, (str, Path)):
        root = Path(source)
        if not root.exists():
            raise FileNotFoundError(f"image path does not exist: {root}")
        if root.is_file():
            return [root]
        return sorted(
            p for p in root.iterdir() if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
        )
    return [Path(p) for p in source]


def dump_features(spec: DumpSpec, log: TextIO = sys.stderr) -> int:
    """Dump one feature stack per decodable image; return the count written.

    Undecodable or duplicate-id images are reported on ``log`` and listed
    under ``"failed"`` in the manifest but never abort the run.
    """
    paths = _image_paths(spec)
    if not paths:
        raise ValueError(f"no images found in {spec.images}")
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_backbone(spec.model, seed=spec.seed, checkpoint=spec.checkpoint)

    written: dict[str, str] = {}
    failed: list[str] = []
    batch_ids: list[str] = []
    batch_tensors: list[torch.Tensor] = []

    def flush() -> None:
        if not batch_ids:
            return
        with torch.inference_mode():
            feats = stage_features(model, torch.stack(batch_tensors), spec.levels)
        for i, image_id in enumerate(batch_ids):
            maps = [FeatureMap(level=lvl, data=feats[lvl][i].numpy()) for lvl in spec.levels]
            target = out_dir / f"{image_id}.fms"
            write_feature_stack(str(target), FeatureStack(image_id=image_id, levels=maps))
            written[image_id] = target.name
        batch_ids.clear()
        batch_tensors.clear()

    prior_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # bit-stable reductions regardless of host core count
    try:
        for path in paths:
            image_id = path.stem
            if image_id in written or image_id in batch_ids:
                print(f"skip {path.name}: duplicate image id {image_id!r}", file=log)
                failed.append(path.name)
                continue
            try:
                tensor = preprocess(load_image(path), spec.size)
            except Exception as exc:  # noqa: BLE001 - any decode failure skips one image
                print(f"skip {path.name}: {exc}", file=log)
                failed.append(path.name)
                continue
            batch_ids.append(image_id)
            batch_tensors.append(tensor)
            if len(batch_ids) == _BATCH:
                flush()
        flush()
    finally:
        torch.set_num_threads(prior_threads)

    _write_manifest(out_dir, spec, written, failed)
    return len(written)


def _write_manifest(
    out_dir: Path, spec: DumpSpec, written: dict[str, str], failed: list[str]
) -> None:
    manifest = {
        "tool": "backbone-dump",
        "model": spec.model,
        "weights": spec.weights_tag(),
        "levels": list(spec.levels),
        "input_size": spec.size,
        "preprocessing": {
            "decode": "RGB",
            "resize_shorter_side": spec.size,
            "interpolation": INTERPOLATION,
            "center_crop": spec.size,
            "scale": "x / 255",
            "mean": list(IMAGENET_MEAN),
            "std": list(IMAGENET_STD),
        },
        "torch_threads": 1,
        "batch_size": _BATCH,
        "files": {image_id: written[image_id] for image_id in sorted(written)},
        "failed": sorted(failed),
    }
    text = json.dumps(manifest, indent=2) + "\n"
    (out_dir / "manifest.json").write_text(text, encoding="utf-8")
