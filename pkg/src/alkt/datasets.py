"""Synthetic and file-backed classification datasets.

Labels are stored privately.  Training code reaches them through
:meth:`Dataset.oracle` (simulated annotation of chosen indices) and
evaluation code through :meth:`Dataset.eval_labels`; nothing in the scoring
path needs them.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

TRAIN, TEST = "train-pool", "test"

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("="): k for k, v in _IDX_DTYPES.items()}


class DatasetFormatError(ValueError):
    pass


class Dataset:
    def __init__(self, features, labels, num_classes: int, split=None, name: str = "dataset"):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.intp)
        if len(features) != len(labels):
            raise ValueError(f"{len(features)} feature rows but {len(labels)} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
        self.features = features
        self._labels = labels
        self.num_classes = int(num_classes)
        self.split = np.full(len(labels), TRAIN, dtype=object) if split is None else np.asarray(split, dtype=object)
        if not set(self.split.tolist()) <= {TRAIN, TEST}:
            raise ValueError("split tags must be 'train-pool' or 'test'")
        self.name = name
        self.features.setflags(write=False)
        self._labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self._labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self._labels, minlength=self.num_classes)

    def oracle(self, indices) -> np.ndarray:
        """Ground-truth labels of ``indices``: the simulated annotator."""
        return self._labels[np.asarray(indices, dtype=np.intp)]

    def eval_labels(self) -> np.ndarray:
        return self._labels.copy()

    def indices(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def subset(self, indices, name: str | None = None) -> Dataset:
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            self.features[idx], self._labels[idx], self.num_classes, self.split[idx], name or self.name
        )

    def train_pool(self) -> Dataset:
        return self.subset(self.indices(TRAIN), f"{self.name}/{TRAIN}")

    def test(self) -> Dataset:
        return self.subset(self.indices(TEST), f"{self.name}/{TEST}")

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(self._labels.astype("<i8").tobytes())
        h.update("|".join(self.split.tolist()).encode())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "N": len(self),
            "classes": self.num_classes,
            "checksum": self.checksum(),
        }


def write_manifest(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(ds.manifest(), indent=2, sort_keys=True))


def stratified_split(labels, test_fraction: float, seed: int) -> np.ndarray:
    """Split tags with round(test_fraction * count) test samples per class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    tags = np.full(len(labels), TRAIN, dtype=object)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        k = int(np.floor(test_fraction * len(members) + 0.5))
        tags[rng.choice(members, size=k, replace=False)] = TEST
    return tags


def blob_centers(num_classes: int, dims: int) -> np.ndarray:
    """Unit-scale class centers.

    Simplex vertices (scaled basis vectors) when there are enough
    dimensions, otherwise a regular polygon in the first two axes, otherwise
    evenly spaced points on a line.
    """
    centers = np.zeros((num_classes, dims))
    if dims >= num_classes:
        centers[np.arange(num_classes), np.arange(num_classes)] = 1.0
    elif dims >= 2:
        ang = 2 * np.pi * np.arange(num_classes) / num_classes
        centers[:, 0], centers[:, 1] = np.cos(ang), np.sin(ang)
    else:
        centers[:, 0] = np.linspace(-1.0, 1.0, num_classes)
    return centers


def make_blobs(
    num_classes: int = 4,
    per_class=500,
    dims: int = 2,
    spread: float = 0.5,
    seed: int = 0,
    test_fraction: float = 0.2,
) -> Dataset:
    """Gaussian clusters with standard deviation ``spread`` around fixed centers.

    ``per_class`` is either one count or a sequence with one count per class.
    """
    counts = np.broadcast_to(np.asarray(per_class, dtype=int), (num_classes,))
    if num_classes < 2 or dims < 1 or (counts < 1).any() or spread < 0:
        raise ValueError("make_blobs: need num_classes >= 2, dims >= 1, counts >= 1, spread >= 0")
    rng = np.random.default_rng(seed)
    centers = blob_centers(num_classes, dims)
    xs, ys = [], []
    for c in range(num_classes):
        xs.append(centers[c] + spread * rng.standard_normal((counts[c], dims)))
        ys.append(np.full(counts[c], c))
    y = np.concatenate(ys)
    split = stratified_split(y, test_fraction, seed + 1)
    return Dataset(np.concatenate(xs), y, num_classes, split, name=f"blobs-{num_classes}x{dims}")


def make_imbalanced(base: Dataset, class_fractions, seed: int) -> Dataset:
    fr = np.broadcast_to(np.asarray(class_fractions, dtype=np.float64), (base.num_classes,))
    if ((fr <= 0) | (fr > 1)).any():
        raise ValueError("class fractions must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    labels = base.oracle(np.arange(len(base)))
    keep = []
    for c in range(base.num_classes):
        members = np.flatnonzero(labels == c)
        k = int(np.floor(fr[c] * len(members) + 0.5))
        if k == 0:
            raise ValueError(f"class {c} would be empty after subsampling")
        keep.append(members if k == len(members) else rng.choice(members, size=k, replace=False))
    return base.subset(np.sort(np.concatenate(keep)), f"{base.name}-imbalanced")


# -- file formats --------------------------------------------------------------


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an IDX file: 2 zero bytes, dtype code, rank, big-endian u32 dims, payload."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated header at byte {len(raw)}")
    if raw[0] != 0 or raw[1] != 0:
        raise DatasetFormatError(f"{path}: bad magic at byte 0: {raw[:4].hex()}")
    code, rank = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise DatasetFormatError(f"{path}: unknown dtype code 0x{code:02x} at byte 2")
    head = 4 + 4 * rank
    if len(raw) < head:
        raise DatasetFormatError(f"{path}: truncated dimension list at byte {len(raw)}")
    dims = struct.unpack(f">{rank}I", raw[4:head])
    dt = _IDX_DTYPES[code]
    need = head + int(np.prod(dims)) * dt.itemsize
    if len(raw) != need:
        raise DatasetFormatError(f"{path}: payload ends at byte {len(raw)}, expected {need}")
    return np.frombuffer(raw, dtype=dt, offset=head).reshape(dims).astype(dt.newbyteorder("="))


def write_idx(path, array) -> None:
    arr = np.asarray(array)
    code = _IDX_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise DatasetFormatError(f"no IDX dtype code for {arr.dtype}")
    head = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    body = arr.astype(_IDX_DTYPES[code]).tobytes()
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(Path(path), "wb") as fh:
        fh.write(head + body)


def _normalize(x: np.ndarray, mode: str, byte_data: bool) -> np.ndarray:
    if mode == "none":
        return x
    if mode == "minmax":
        if byte_data:
            return x / 255.0
        lo, hi = x.min(), x.max()
        return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    if mode == "standardize":
        sd = x.std(axis=0)
        return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    raise ValueError(f"unknown normalization {mode!r}")


def load_idx(
    images_path,
    labels_path,
    num_classes: int | None = None,
    normalization: str = "minmax",
    test_fraction: float = 0.2,
    seed: int = 0,
) -> Dataset:
    """Image/label IDX pair to a Dataset of (N, 1, H, W) images.

    Byte images divide by 255 under the default min-max normalization.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise DatasetFormatError(f"{images_path}: expected rank-3 image array, got rank {images.ndim}")
    if labels.ndim != 1 or len(labels) != len(images):
        raise DatasetFormatError(
            f"{labels_path}: expected {len(images)} labels, got shape {labels.shape}"
        )
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    x = _normalize(images.astype(np.float64), normalization, images.dtype == np.uint8)
    return Dataset(
        x[:, None, :, :],
        labels.astype(np.intp),
        k,
        stratified_split(labels, test_fraction, seed),
        name=Path(images_path).name,
    )


def load_csv(
    path,
    num_classes: int | None = None,
    shape: tuple[int, ...] | None = None,
    normalization: str = "minmax",
    test_fraction: float = 0.2,
    seed: int = 0,
) -> Dataset:
    """Rows of ``label,x1,x2,...``; a non-numeric first row is taken as a header."""
    labels, rows = [], []
    width = None
    with open(Path(path), newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                lab = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError:
                if lineno == 1:
                    continue
                raise DatasetFormatError(f"{path}: line {lineno}: non-numeric field") from None
            if width is None:
                width = len(vals)
            if len(vals) != width or width == 0:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: expected {width} features, got {len(vals)}"
                )
            if lab < 0 or (num_classes is not None and lab >= num_classes):
                raise DatasetFormatError(f"{path}: line {lineno}: label {lab} out of range")
            labels.append(lab)
            rows.append(vals)
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.intp)
    x = np.array(rows, dtype=np.float64)
    x = _normalize(x, normalization, byte_data=False)
    if shape is not None:
        x = x.reshape((len(x),) + tuple(shape))
    k = int(y.max()) + 1 if num_classes is None else num_classes
    return Dataset(x, y, k, stratified_split(y, test_fraction, seed), name=Path(path).name)


def write_csv(ds: Dataset, path) -> None:
    labels = ds.eval_labels()
    flat = ds.features.reshape(len(ds), -1)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        for lab, row in zip(labels, flat):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])
