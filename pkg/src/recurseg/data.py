"""Case data model, preprocessing ops, and the on-disk dataset layout.

Conventions used throughout the package:

* a "slice" is a 2D float32 array of scanner intensities (dimensionless
  after :func:`normalize_intensity`),
* a "mask" is a 2D uint8 array with values in {0, 1},
* a :class:`Case` bundles the two time-1 modality slices with the time-1
  tumor mask and the time-2 recurrence mask, all sharing one shape.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

NETWORK_SIZE = 128

# On-disk container: 16-byte header = magic, version u8, dtype code u8,
# height u32 LE, width u32 LE, 2 reserved zero bytes; then row-major pixels.
MAGIC = b"MMRS"
FORMAT_VERSION = 1
_DTYPE_BY_CODE = {0: np.dtype(np.float32), 1: np.dtype(np.uint8)}
_CODE_BY_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1}

#: files expected inside each case directory
CASE_FILES = ("flair_1", "t1c_1", "seg_1", "rec_2")
MANIFEST_NAME = "manifest.tsv"

# BraTS-2015-style label set accepted by unify_labels.
LABEL_BACKGROUND = 0
LABEL_NECROSIS = 1
LABEL_EDEMA = 2
LABEL_NON_ENHANCING = 3
LABEL_ENHANCING = 4
KNOWN_LABELS = frozenset(
    {LABEL_BACKGROUND, LABEL_NECROSIS, LABEL_EDEMA, LABEL_NON_ENHANCING, LABEL_ENHANCING}
)
TUMOR_LABELS = frozenset({LABEL_NECROSIS, LABEL_ENHANCING})


class DataError(ValueError):
    """Base class for dataset/input validation failures."""


class MissingModalityError(DataError):
    """A required case file is absent."""


class ShapeMismatchError(DataError):
    """Arrays that must share a shape do not."""


class NonBinaryMaskError(DataError):
    """A mask contains values other than 0 and 1."""


class UnknownLabelError(DataError):
    """A multi-class label map contains an undocumented value."""


class DegenerateImageError(DataError):
    """Image too small to resize meaningfully."""


class ContainerFormatError(DataError):
    """Raw container file is malformed."""


def as_slice(pixels) -> np.ndarray:
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"slice must be 2D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"slice has empty dimension: {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("slice contains non-finite values")
    return arr


def as_mask(pixels) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise DataError(f"mask must be 2D, got shape {arr.shape}")
    values = np.unique(arr)
    bad = [v for v in values.tolist() if v not in (0, 1)]
    if bad:
        raise NonBinaryMaskError(f"mask contains non-binary value(s) {bad}")
    return arr.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Case:
    """One patient: two co-registered time-1 slices, tumor mask at time 1,
    recurrence mask at time 2. All four arrays share one shape."""

    id: str
    flair_t1: np.ndarray
    t1c_t1: np.ndarray
    tumor_mask_t1: np.ndarray
    recurrence_mask_t2: np.ndarray

    def __post_init__(self):
        if not self.id:
            raise DataError("case id must be non-empty")
        object.__setattr__(self, "flair_t1", as_slice(self.flair_t1))
        object.__setattr__(self, "t1c_t1", as_slice(self.t1c_t1))
        object.__setattr__(self, "tumor_mask_t1", as_mask(self.tumor_mask_t1))
        object.__setattr__(self, "recurrence_mask_t2", as_mask(self.recurrence_mask_t2))
        shapes = {
            "flair_1": self.flair_t1.shape,
            "t1c_1": self.t1c_t1.shape,
            "seg_1": self.tumor_mask_t1.shape,
            "rec_2": self.recurrence_mask_t2.shape,
        }
        if len(set(shapes.values())) != 1:
            raise ShapeMismatchError(f"case {self.id!r} arrays disagree in shape: {shapes}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.flair_t1.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, Case):
            return NotImplemented
        return (
            self.id == other.id
            and self.flair_t1.dtype == other.flair_t1.dtype
            and np.array_equal(self.flair_t1, other.flair_t1)
            and np.array_equal(self.t1c_t1, other.t1c_t1)
            and np.array_equal(self.tumor_mask_t1, other.tumor_mask_t1)
            and np.array_equal(self.recurrence_mask_t2, other.recurrence_mask_t2)
        )


@dataclass(frozen=True)
class DatasetSplit:
    """80/20 id split; train size is round-half-up of 0.8 * N."""

    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def normalize_intensity(s: np.ndarray) -> np.ndarray:
    """Map a slice to zero mean and unit population standard deviation.

    A constant slice maps to all zeros.
    """
    arr = as_slice(s)
    x = arr.astype(np.float64)
    mean = x.mean()
    std = x.std()  # population (1/N) estimator
    if std == 0.0:
        return np.zeros_like(arr, dtype=np.float32)
    return ((x - mean) / std).astype(np.float32)


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    # pixel-center mapping, edge-clamped; identity when sizes match
    in_h, in_w = img.shape
    x = img.astype(np.float64)
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    wy = (ys - y0f)[:, None]
    wx = (xs - x0f)[None, :]
    y0 = np.clip(y0f.astype(np.int64), 0, in_h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, in_h - 1)
    x0 = np.clip(x0f.astype(np.int64), 0, in_w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, in_w - 1)
    top = x[np.ix_(y0, x0)] * (1 - wx) + x[np.ix_(y0, x1)] * wx
    bot = x[np.ix_(y1, x0)] * (1 - wx) + x[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def _nearest_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = img.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * (in_h / out_h)).astype(np.int64), in_h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (in_w / out_w)).astype(np.int64), in_w - 1)
    return img[np.ix_(ys, xs)]


def resize_to_network(image: np.ndarray, size: int = NETWORK_SIZE) -> np.ndarray:
    """Resize a slice (bilinear) or mask (nearest neighbor, re-binarized) to
    ``size`` x ``size``. Masks are recognized by uint8 dtype."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise DataError(f"expected 2D image, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise DegenerateImageError(f"cannot resize degenerate image of shape {arr.shape}")
    if arr.dtype == np.uint8:
        mask = as_mask(arr)
        out = _nearest_resize(mask, size, size)
        return (out > 0).astype(np.uint8)
    sl = as_slice(arr)
    return _bilinear_resize(sl, size, size).astype(np.float32)


def unify_labels(labels: np.ndarray) -> np.ndarray:
    """Collapse a BraTS-style multi-class label map to a binary tumor mask
    (enhancing + necrosis -> 1, everything else -> 0)."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise DataError(f"label map must be 2D, got shape {arr.shape}")
    values = np.unique(arr)
    unknown = [v for v in values.tolist() if v not in KNOWN_LABELS]
    if unknown:
        raise UnknownLabelError(f"unknown label value(s) {unknown}; known: {sorted(KNOWN_LABELS)}")
    return np.isin(arr, sorted(TUMOR_LABELS)).astype(np.uint8)


def split_dataset(cases: Sequence, seed: int) -> DatasetSplit:
    """Deterministic 80/20 split over case ids (or Case objects)."""
    ids = [c.id if isinstance(c, Case) else str(c) for c in cases]
    if len(ids) < 2:
        raise DataError(f"need at least 2 cases to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DataError("case ids are not unique")
    ordered = sorted(ids)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    n_train = int(math.floor(0.8 * len(ordered) + 0.5))
    return DatasetSplit(train=tuple(shuffled[:n_train]), test=tuple(shuffled[n_train:]), seed=seed)


def write_array(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.ndim != 2:
        raise DataError(f"container stores 2D arrays, got shape {arr.shape}")
    code = _CODE_BY_DTYPE.get(arr.dtype)
    if code is None:
        raise DataError(f"unsupported dtype {arr.dtype}; use float32 or uint8")
    header = MAGIC + struct.pack("<BBII", FORMAT_VERSION, code, arr.shape[0], arr.shape[1])
    header += b"\x00\x00"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_array(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16:
        raise ContainerFormatError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {blob[:4]!r}")
    version, code, height, width = struct.unpack("<BBII", blob[4:14])
    if version != FORMAT_VERSION:
        raise ContainerFormatError(f"{path}: unsupported version {version}")
    dtype = _DTYPE_BY_CODE.get(code)
    if dtype is None:
        raise ContainerFormatError(f"{path}: unknown dtype code {code}")
    expected = 16 + height * width * dtype.itemsize
    if len(blob) != expected:
        raise ContainerFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    return np.frombuffer(blob[16:], dtype=dtype).reshape(height, width).copy()


def save_case(case: Case, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_array(directory / "flair_1", case.flair_t1)
    write_array(directory / "t1c_1", case.t1c_t1)
    write_array(directory / "seg_1", case.tumor_mask_t1)
    write_array(directory / "rec_2", case.recurrence_mask_t2)
    return directory


def load_case(directory, case_id: str | None = None, require_recurrence: bool = True) -> Case:
    """Load one case directory.

    With ``require_recurrence=False`` a missing ``rec_2`` file is replaced
    by an all-zero mask (source datasets for pretraining only need time-1
    data).
    """
    directory = Path(directory)
    case_id = case_id or directory.name
    arrays = {}
    for name in CASE_FILES:
        path = directory / name
        if not path.exists():
            if name == "rec_2" and not require_recurrence:
                arrays[name] = None
                continue
            raise MissingModalityError(f"case {case_id!r}: missing modality file {name!r}")
        arrays[name] = read_array(path)
    if arrays["rec_2"] is None:
        arrays["rec_2"] = np.zeros(arrays["seg_1"].shape, dtype=np.uint8)
    shapes = {name: a.shape for name, a in arrays.items()}
    if len(set(shapes.values())) != 1:
        raise ShapeMismatchError(f"case {case_id!r} arrays disagree in shape: {shapes}")
    for name in ("seg_1", "rec_2"):
        if arrays[name].dtype != np.uint8:
            raise ContainerFormatError(f"case {case_id!r}: {name} must be stored as uint8")
    return Case(
        id=case_id,
        flair_t1=arrays["flair_1"],
        t1c_t1=arrays["t1c_1"],
        tumor_mask_t1=arrays["seg_1"],
        recurrence_mask_t2=arrays["rec_2"],
    )


def save_dataset(cases: Sequence[Case], root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = [c.id for c in cases]
    if len(set(ids)) != len(ids):
        raise DataError("case ids are not unique")
    for case in cases:
        save_case(case, root / case.id)
    manifest = root / MANIFEST_NAME
    lines = ["case_id"] + sorted(ids)
    manifest.write_text("\n".join(lines) + "\n")
    return root


def load_dataset(root, require_recurrence: bool = True) -> list[Case]:
    """Load every case named in ``manifest.tsv``, returned in id-sorted order."""
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise MissingModalityError(f"no {MANIFEST_NAME} under {root}")
    lines = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != "case_id":
        raise ContainerFormatError(f"{manifest}: expected 'case_id' header")
    ids = sorted(lines[1:])
    if len(set(ids)) != len(ids):
        raise DataError(f"{manifest}: duplicate case ids")
    return [load_case(root / cid, cid, require_recurrence=require_recurrence) for cid in ids]


def preprocess_case(case: Case, size: int = NETWORK_SIZE) -> Case:
    """Resize to the network resolution and normalize both modalities."""
    return Case(
        id=case.id,
        flair_t1=normalize_intensity(resize_to_network(case.flair_t1, size)),
        t1c_t1=normalize_intensity(resize_to_network(case.t1c_t1, size)),
        tumor_mask_t1=resize_to_network(case.tumor_mask_t1, size),
        recurrence_mask_t2=resize_to_network(case.recurrence_mask_t2, size),
    )
