"""Binary feature-map container and annotated-set JSON, with validation.

Feature stacks travel between tools in a small binary container (extension
``.fms``). Layout, all integers little-endian:

    offset  size  field
    ------  ----  -----------------------------------------------
    0       4     magic, ASCII "FMS1"
    4       2     u16 n = byte length of the UTF-8 image id
    6       n     image id, UTF-8
    6+n     4     u32 L = number of levels
    ...           L level headers, 16 bytes each:
                      u32 level index, u32 channels d, u32 height H, u32 width W
    ...           L data blocks, concatenated in header order:
                      d*H*W float32 values, value for (channel c, row y, col x)
                      at flat index c*H*W + y*W + x

Level indices must be strictly increasing (shallow to deep); the last level
is the deepest map, used for descriptor pooling. Writers refuse non-finite
data before touching the file; readers validate the magic, all declared
sizes against the actual byte count, and data finiteness. A write/read
round trip is bit-exact.

Annotated sets are COCO-style JSON documents with three arrays:

- ``images``: ``{"id", "file_name", "width", "height"}`` where ``file_name``
  carries the string image id (ids are assigned 1..n in list order),
- ``annotations``: ``{"id", "image_id", "category_id", "bbox", "score"?}``
  with ``bbox`` as ``[x, y, w, h]`` in absolute pixels (``score`` only for
  scored sets),
- ``categories``: ids ``0..C-1`` named ``pseudo_<id>``.

Key order and id assignment are fixed, so serialization is byte-stable for
identical input.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .validation import check_finite

MAGIC = b"FMS1"
_HEADER_LEVEL = struct.Struct("<IIII")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


class FormatError(ValueError):
    """Raised when a binary container is malformed."""


class SchemaError(ValueError):
    """Raised when a JSON document violates the annotated-set schema."""


@dataclass
class FeatureMap:
    """One feature map: ``data`` has shape (channels, height, width), float32."""

    level: int
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.level < 0:
            raise ValueError(f"level index must be >= 0, got {self.level}")
        if self.data.ndim != 3:
            raise ValueError(f"feature map data must be 3-D (d, H, W), got shape {self.data.shape}")
        d, h, w = self.data.shape
        if d < 1 or h < 1 or w < 1:
            raise ValueError(f"feature map dims must be positive, got {self.data.shape}")
        check_finite("feature map data", self.data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def pixel_matrix(self) -> np.ndarray:
        """Return pixels as a (H*W, d) float64 matrix, row-major."""
        d = self.data.shape[0]
        return self.data.reshape(d, -1).T.astype(np.float64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.level == other.level and np.array_equal(self.data, other.data)


@dataclass
class FeatureStack:
    """All feature maps for one image, ordered shallow to deep."""

    image_id: str
    levels: list[FeatureMap]

    def __post_init__(self) -> None:
        if not isinstance(self.image_id, str):
            raise ValueError("image_id must be a string")
        if len(self.image_id.encode("utf-8")) > 0xFFFF:
            raise ValueError("image_id longer than 65535 UTF-8 bytes")
        if not self.levels:
            raise ValueError("feature stack must contain at least one level")
        indices = [fm.level for fm in self.levels]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"level indices must be strictly increasing, got {indices}")

    @property
    def last_level(self) -> FeatureMap:
        return self.levels[-1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureStack):
            return NotImplemented
        return self.image_id == other.image_id and self.levels == other.levels


def write_feature_stack(path: str, stack: FeatureStack) -> None:
    """Serialize ``stack`` to ``path``. Validates everything before writing."""
    idb = stack.image_id.encode("utf-8")
    blobs = []
    for fm in stack.levels:
        check_finite("feature map data", fm.data)
        blobs.append(fm.data.astype("<f4", copy=False).tobytes())
    parts = [MAGIC, _U16.pack(len(idb)), idb, _U32.pack(len(stack.levels))]
    for fm in stack.levels:
        d, h, w = fm.data.shape
        parts.append(_HEADER_LEVEL.pack(fm.level, d, h, w))
    parts.extend(blobs)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_feature_stack(path: str) -> FeatureStack:
    """Parse a ``.fms`` file, validating structure, sizes, and finiteness."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def need(n: int, what: str, off: int) -> int:
        if off + n > len(raw):
            raise FormatError(f"{path}: truncated while reading {what}")
        return off + n

    off = need(4, "magic", 0)
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    end = need(_U16.size, "image id length", off)
    (id_len,) = _U16.unpack(raw[off:end])
    off = end
    end = need(id_len, "image id", off)
    try:
        image_id = raw[off:end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: image id is not valid UTF-8") from exc
    off = end
    end = need(_U32.size, "level count", off)
    (n_levels,) = _U32.unpack(raw[off:end])
    off = end
    if n_levels < 1:
        raise FormatError(f"{path}: level count must be >= 1, got {n_levels}")

    headers = []
    for i in range(n_levels):
        end = need(_HEADER_LEVEL.size, f"header of level {i}", off)
        level, d, h, w = _HEADER_LEVEL.unpack(raw[off:end])
        off = end
        if d < 1 or h < 1 or w < 1:
            raise FormatError(f"{path}: level {level} declares empty dims ({d}, {h}, {w})")
        headers.append((level, d, h, w))

    maps = []
    for level, d, h, w in headers:
        nbytes = 4 * d * h * w
        end = need(nbytes, f"data of level {level}", off)
        data = np.frombuffer(raw[off:end], dtype="<f4").reshape(d, h, w)
        off = end
        if not np.isfinite(data).all():
            raise FormatError(f"{path}: level {level} contains non-finite values")
        maps.append(FeatureMap(level=level, data=data.copy()))
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes after declared data")

    try:
        return FeatureStack(image_id=image_id, levels=maps)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


@dataclass
class AnnotatedImage:
    """Boxes and labels for one image, in absolute pixel coordinates.

    ``boxes`` is (n, 4) float ``(x, y, w, h)`` with ``w, h > 0`` and every box
    inside the image; ``labels`` is (n,) int in ``[0, C)``; ``scores`` is an
    optional (n,) float array in [0, 1].
    """

    image_id: str
    width: int
    height: int
    boxes: np.ndarray
    labels: np.ndarray
    scores: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        n = self.boxes.shape[0]
        if self.labels.shape[0] != n:
            raise ValueError(f"{n} boxes but {self.labels.shape[0]} labels")
        if self.scores is not None and self.scores.shape[0] != n:
            raise ValueError(f"{n} boxes but {self.scores.shape[0]} scores")
        check_finite("boxes", self.boxes)
        if n:
            x, y, w, h = (self.boxes[:, i] for i in range(4))
            if (w <= 0).any() or (h <= 0).any():
                raise ValueError("box width and height must be > 0")
            if (x < 0).any() or (y < 0).any() or (x + w > self.width).any() or (y + h > self.height).any():
                raise ValueError("boxes must lie inside the image bounds")
            if (self.labels < 0).any():
                raise ValueError("labels must be >= 0")
        if self.scores is not None and self.scores.size:
            check_finite("scores", self.scores)
            if (self.scores < 0).any() or (self.scores > 1).any():
                raise ValueError("scores must lie in [0, 1]")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnnotatedImage):
            return NotImplemented
        if self.image_id != other.image_id or self.width != other.width or self.height != other.height:
            return False
        if not (np.array_equal(self.boxes, other.boxes) and np.array_equal(self.labels, other.labels)):
            return False
        if (self.scores is None) != (other.scores is None):
            return False
        return self.scores is None or np.array_equal(self.scores, other.scores)


def write_annotations(path: str, images: list[AnnotatedImage], n_classes: int) -> None:
    """Write an annotated set as a COCO-style JSON document.

    Image ids are 1..n in list order and annotation ids run 1..m over images
    in that same order, so the output bytes depend only on the input.
    """
    if n_classes < 1:
        raise SchemaError(f"n_classes must be >= 1, got {n_classes}")
    seen: set[str] = set()
    for img in images:
        if img.image_id in seen:
            raise SchemaError(f"duplicate image_id {img.image_id!r}")
        seen.add(img.image_id)
        if img.labels.size and int(img.labels.max()) >= n_classes:
            raise SchemaError(
                f"image {img.image_id!r} has label {int(img.labels.max())} >= n_classes {n_classes}"
            )

    doc_images = []
    doc_anns = []
    ann_id = 1
    for idx, img in enumerate(images, start=1):
        doc_images.append(
            {"id": idx, "file_name": img.image_id, "width": int(img.width), "height": int(img.height)}
        )
        for j in range(img.boxes.shape[0]):
            entry = {
                "id": ann_id,
                "image_id": idx,
                "category_id": int(img.labels[j]),
                "bbox": [float(v) for v in img.boxes[j]],
            }
            if img.scores is not None:
                entry["score"] = float(img.scores[j])
            doc_anns.append(entry)
            ann_id += 1
    doc = {
        "images": doc_images,
        "annotations": doc_anns,
        "categories": [{"id": c, "name": f"pseudo_{c}"} for c in range(n_classes)],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaError(msg)


def read_annotations(path: str) -> tuple[list[AnnotatedImage], int]:
    """Parse an annotated-set document; returns (images, n_classes)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc

    _require(isinstance(doc, dict), f"{path}: document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        _require(key in doc and isinstance(doc[key], list), f"{path}: missing or invalid {key!r} array")

    cats = doc["categories"]
    _require(len(cats) >= 1, f"{path}: categories must be non-empty")
    ids = sorted(c.get("id") for c in cats if isinstance(c, dict))
    _require(ids == list(range(len(cats))), f"{path}: category ids must be exactly 0..C-1")
    n_classes = len(cats)

    by_id: dict[int, dict] = {}
    order: list[int] = []
    for im in doc["images"]:
        _require(isinstance(im, dict), f"{path}: image entries must be objects")
        for key in ("id", "file_name", "width", "height"):
            _require(key in im, f"{path}: image entry missing {key!r}")
        _require(isinstance(im["id"], int), f"{path}: image id must be an integer")
        _require(im["id"] not in by_id, f"{path}: duplicate image id {im['id']}")
        by_id[im["id"]] = {"meta": im, "boxes": [], "labels": [], "scores": []}
        order.append(im["id"])

    has_score = None
    for ann in doc["annotations"]:
        _require(isinstance(ann, dict), f"{path}: annotation entries must be objects")
        for key in ("id", "image_id", "category_id", "bbox"):
            _require(key in ann, f"{path}: annotation missing {key!r}")
        _require(ann["image_id"] in by_id, f"{path}: annotation references unknown image {ann['image_id']}")
        bbox = ann["bbox"]
        _require(
            isinstance(bbox, list) and len(bbox) == 4,
            f"{path}: bbox must be a 4-element [x, y, w, h] list",
        )
        _require(
            isinstance(ann["category_id"], int) and 0 <= ann["category_id"] < n_classes,
            f"{path}: category_id {ann.get('category_id')} outside [0, {n_classes})",
        )
        scored = "score" in ann
        if has_score is None:
            has_score = scored
        _require(scored == has_score, f"{path}: mixed scored and unscored annotations")
        rec = by_id[ann["image_id"]]
        rec["boxes"].append([float(v) for v in bbox])
        rec["labels"].append(ann["category_id"])
        if scored:
            rec["scores"].append(float(ann["score"]))

    images = []
    for img_id in order:
        rec = by_id[img_id]
        meta = rec["meta"]
        try:
            images.append(
                AnnotatedImage(
                    image_id=str(meta["file_name"]),
                    width=int(meta["width"]),
                    height=int(meta["height"]),
                    boxes=np.array(rec["boxes"], dtype=np.float64).reshape(-1, 4),
                    labels=np.array(rec["labels"], dtype=np.int64),
                    scores=np.array(rec["scores"], dtype=np.float64) if has_score else None,
                )
            )
        except ValueError as exc:
            raise SchemaError(f"{path}: image {meta['file_name']!r}: {exc}") from exc
    return images, n_classes
