"""Corpus ingestion, synthetic data, outlier contamination, binarization.

Datasets are immutable rows of flattened images in [0, 1] with integer
labels and per-record outlier flags.  Every transform returns a new
Dataset and appends a one-line description to ``meta["transforms"]``.

A dataset manifest is a flat "key = value" file describing how to build a
dataset: the source (IDX files or synthetic corpus parameters) followed by
an optional split / contaminate / binarize pipeline, applied in that
order.  Replaying a manifest is fully deterministic; all randomness is
keyed by seeds stored in the manifest.  Relative paths resolve against the
manifest's directory.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import as_bool, as_float, as_int, parse_kv_file
from .errors import (
    ConfigError,
    DataError,
    IdxDimensionError,
    IdxMagicError,
    IdxTruncatedError,
)

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801
_MAX_IDX_ELEMENTS = 1 << 33

GAUSSIAN_NOISE = "gaussian_noise"
FOREIGN_DATASET = "foreign_dataset"
DROPOUT_BANDS = "dropout_bands"
BLOBS = "blobs"
CONTAMINATION_KINDS = (GAUSSIAN_NOISE, FOREIGN_DATASET, DROPOUT_BANDS, BLOBS)

# Noise outliers: N(0.5, 0.25^2) clipped to [0, 1] binarizes to roughly
# half-on salt-and-pepper images.  Declared default, tunable per call.
NOISE_MEAN = 0.5
NOISE_STD = 0.25


@dataclass
class Dataset:
    """Flattened image corpus with labels and outlier ground truth."""

    images: np.ndarray
    labels: np.ndarray
    is_outlier: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.is_outlier = np.asarray(self.is_outlier, dtype=bool)
        if self.images.ndim != 2:
            raise DataError(f"images must be 2-D (N x D), got {self.images.shape}")
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.is_outlier.shape != (n,):
            raise DataError("labels / is_outlier row counts disagree with images")
        if n and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataError("image values must lie in [0, 1]")
        self.meta.setdefault("source", "unknown")
        self.meta.setdefault("transforms", [])

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def _derive(self, images, labels, is_outlier, note: str) -> "Dataset":
        meta = {**self.meta, "transforms": [*self.meta["transforms"], note]}
        return Dataset(images, labels, is_outlier, meta)


@dataclass(frozen=True)
class ContaminationSpec:
    """How to corrupt a fraction of the records."""

    kind: str = GAUSSIAN_NOISE
    fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CONTAMINATION_KINDS:
            raise ConfigError(f"unknown contamination kind {self.kind!r}")
        if not 0.0 <= self.fraction < 1.0:
            raise ConfigError("contamination fraction must lie in [0, 1)")


def read_idx(path) -> tuple[np.ndarray, dict]:
    """Parse a big-endian IDX container.

    Images (magic 0x00000803) come back as (n, rows, cols) float64 scaled
    by 1/255; labels (magic 0x00000801) as (n,) int64.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"IDX file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_MAGIC_IMAGES:
        rank = 3
    elif magic == IDX_MAGIC_LABELS:
        rank = 1
    else:
        raise IdxMagicError(f"{path}: unsupported magic 0x{magic:08x}")
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise IdxTruncatedError(f"{path}: header cut off before dimension sizes")
    dims = struct.unpack(f">{rank}I", raw[4:header_end])
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_IDX_ELEMENTS:
        raise IdxDimensionError(f"{path}: dims {dims} overflow sane payload size")
    payload = raw[header_end:]
    if len(payload) < count:
        raise IdxTruncatedError(
            f"{path}: payload holds {len(payload)} bytes, header promises {count}")
    if len(payload) > count:
        raise IdxTruncatedError(f"{path}: {len(payload) - count} trailing bytes")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    meta = {"path": str(path), "magic": magic, "dims": dims}
    if magic == IDX_MAGIC_IMAGES:
        return data.astype(np.float64) / 255.0, meta
    return data.astype(np.int64), meta


def write_idx(path, array) -> None:
    """Write an IDX file: rank-3 float images in [0, 1] or rank-1 int labels."""
    array = np.asarray(array)
    with open(path, "wb") as f:
        if array.ndim == 3:
            pixels = np.rint(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)
            f.write(struct.pack(">IIII", IDX_MAGIC_IMAGES, *array.shape))
            f.write(pixels.tobytes())
        elif array.ndim == 1:
            values = array.astype(np.int64)
            if values.min() < 0 or values.max() > 255:
                raise DataError("label values must fit in a byte")
            f.write(struct.pack(">II", IDX_MAGIC_LABELS, array.shape[0]))
            f.write(values.astype(np.uint8).tobytes())
        else:
            raise DataError(f"cannot write rank-{array.ndim} array as IDX")


def load_idx_dataset(images_path, labels_path=None) -> Dataset:
    """Build a Dataset from IDX files, flattening images row-major."""
    images, meta = read_idx(images_path)
    if images.ndim != 3:
        raise DataError(f"{images_path}: expected an image IDX file")
    n = images.shape[0]
    flat = images.reshape(n, -1)
    if labels_path is not None:
        labels, _ = read_idx(labels_path)
        if labels.ndim != 1:
            raise DataError(f"{labels_path}: expected a label IDX file")
        if labels.shape[0] != n:
            raise DataError("image and label counts disagree")
    else:
        labels = np.zeros(n, dtype=np.int64)
    return Dataset(flat, labels, np.zeros(n, dtype=bool),
                   {"source": f"idx:{meta['path']}", "transforms": []})


def binarize(ds: Dataset, threshold_frac: float = 0.5) -> Dataset:
    """Threshold pixels at threshold_frac of the dataset-wide max intensity."""
    if ds.n == 0:
        raise DataError("cannot binarize an empty dataset")
    peak = ds.images.max()
    if peak > 0.0:
        images = (ds.images >= threshold_frac * peak).astype(np.float64)
    else:
        images = np.zeros_like(ds.images)
    return ds._derive(images, ds.labels.copy(), ds.is_outlier.copy(),
                      f"binarize(threshold_frac={threshold_frac})")


def _square_side(dim: int) -> int:
    side = int(round(np.sqrt(dim)))
    if side * side != dim:
        raise DataError(f"feature dimension {dim} is not a perfect square")
    return side


def contaminate(ds: Dataset, spec: ContaminationSpec,
                outlier_source: Dataset | None = None) -> Dataset:
    """Replace or corrupt floor(fraction * N) seeded-random records.

    gaussian_noise and foreign_dataset replace whole records; dropout_bands
    and blobs alter the selected records in place.  Altered/replaced rows
    get is_outlier = True; the input dataset is left untouched.
    """
    images = ds.images.copy()
    labels = ds.labels.copy()
    flags = ds.is_outlier.copy()
    note = f"contaminate(kind={spec.kind}, fraction={spec.fraction}, seed={spec.seed})"
    n_replace = int(spec.fraction * ds.n)
    if n_replace == 0:
        if spec.fraction > 0.0:
            warnings.warn("fraction * N < 1: no records contaminated")
        return ds._derive(images, labels, flags, note)
    rng = np.random.default_rng(spec.seed)
    idx = rng.choice(ds.n, size=n_replace, replace=False)
    if spec.kind == GAUSSIAN_NOISE:
        noise = rng.normal(NOISE_MEAN, NOISE_STD, size=(n_replace, ds.dim))
        images[idx] = np.clip(noise, 0.0, 1.0)
        labels[idx] = -1
    elif spec.kind == FOREIGN_DATASET:
        if outlier_source is None:
            raise DataError("foreign_dataset contamination needs an outlier source")
        if outlier_source.dim != ds.dim:
            raise DataError(
                f"outlier source dim {outlier_source.dim} != dataset dim {ds.dim}")
        src = rng.choice(outlier_source.n, size=n_replace,
                         replace=outlier_source.n < n_replace)
        images[idx] = outlier_source.images[src]
        labels[idx] = -1
    elif spec.kind == DROPOUT_BANDS:
        side = _square_side(ds.dim)
        band = 5
        for i in idx:
            frame = images[i].reshape(side, side)
            start = int(rng.integers(0, max(side - band, 1)))
            frame[start:start + band, :] = 0.0
    else:  # blobs
        side = _square_side(ds.dim)
        rr, cc = np.mgrid[0:side, 0:side]
        for i in idx:
            r0, c0 = rng.uniform(0, side, size=2)
            scale = rng.uniform(1.0, max(side / 6.0, 1.5))
            amp = rng.uniform(0.5, 1.0)
            bump = amp * np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * scale ** 2))
            images[i] = np.clip(images[i] + bump.ravel(), 0.0, 1.0)
    flags[idx] = True
    return ds._derive(images, labels, flags, note)


def make_synthetic_clusters(n: int, d: int, seed: int,
                            geometry: str = "bars") -> Dataset:
    """Deterministic two-class corpus of structured patterns with jitter.

    "bars": class 0 draws horizontal stripes, class 1 vertical stripes, with
    per-image phase, thickness, and brightness jitter.  "blobs": class 0 a
    bright top-left blob, class 1 bottom-right, with center jitter.  Labels
    alternate, so counts balance within 1.
    """
    if n <= 0:
        raise DataError("need n > 0 synthetic records")
    side = _square_side(d)
    if geometry not in ("bars", "blobs"):
        raise ConfigError(f"unknown geometry {geometry!r}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % 2
    images = np.empty((n, d))
    rr, cc = np.mgrid[0:side, 0:side]
    for i in range(n):
        if geometry == "bars":
            # phase limited to a quarter-period shift so same-class patterns
            # stay closer to each other than to the other orientation
            phase = int(rng.integers(0, 3))
            thick = int(rng.integers(3, 6))
            axis = rr if labels[i] == 0 else cc
            bright = rng.uniform(0.7, 0.95)
            frame = np.where((axis + phase) % 8 < thick, bright, 0.05)
        else:
            center = side / 4.0 if labels[i] == 0 else 3.0 * side / 4.0
            r0 = center + rng.uniform(-side / 10.0, side / 10.0)
            c0 = center + rng.uniform(-side / 10.0, side / 10.0)
            frame = 0.05 + 0.85 * np.exp(
                -((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * (side / 5.0) ** 2))
        frame = frame + rng.normal(0.0, 0.05, size=frame.shape)
        images[i] = np.clip(frame, 0.0, 1.0).ravel()
    return Dataset(images, labels, np.zeros(n, dtype=bool),
                   {"source": f"synthetic:{geometry}(n={n}, d={d}, seed={seed})",
                    "transforms": []})


def split(ds: Dataset, train_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint seeded partition preserving labels and flags."""
    if not 0.0 < train_frac < 1.0:
        raise ConfigError("train_frac must lie strictly between 0 and 1")
    n_train = int(round(train_frac * ds.n))
    if n_train == 0 or n_train == ds.n:
        raise DataError(f"split of {ds.n} rows at {train_frac} leaves an empty side")
    order = np.random.default_rng(seed).permutation(ds.n)
    parts = []
    for name, rows in (("train", order[:n_train]), ("test", order[n_train:])):
        rows = np.sort(rows)
        note = f"split(side={name}, train_frac={train_frac}, seed={seed})"
        parts.append(ds._derive(ds.images[rows], ds.labels[rows],
                                ds.is_outlier[rows], note))
    return parts[0], parts[1]


_MANIFEST_KEYS = {
    "source", "images", "labels", "n", "dim", "seed", "geometry",
    "split", "train_frac", "split_seed",
    "outlier_kind", "outlier_fraction", "outlier_seed", "outlier_images",
    "binarize", "binarize_threshold",
}


def write_manifest(path, entries: dict[str, object]) -> None:
    """Write a dataset manifest; values are stringified as-is."""
    unknown = set(entries) - _MANIFEST_KEYS
    if unknown:
        raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
    lines = ["# rvae dataset manifest"]
    lines += [f"{k} = {entries[k]}" for k in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> Dataset:
    """Replay the pipeline described by a manifest file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset manifest not found: {path}")
    items = parse_kv_file(path)
    unknown = set(items) - _MANIFEST_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown manifest keys {sorted(unknown)}")
    if "source" not in items:
        raise ConfigError(f"{path}: manifest needs a 'source' key")

    def respath(key):
        return path.parent / items[key]

    source = items["source"]
    if source == "idx":
        if "images" not in items:
            raise ConfigError(f"{path}: idx source needs an 'images' path")
        ds = load_idx_dataset(respath("images"),
                              respath("labels") if "labels" in items else None)
    elif source == "synthetic":
        ds = make_synthetic_clusters(
            n=as_int(items, "n"), d=as_int(items, "dim"),
            seed=as_int(items, "seed"),
            geometry=items.get("geometry", "bars"))
    else:
        raise ConfigError(f"{path}: unknown source {source!r}")

    side = items.get("split", "none")
    if side != "none":
        if side not in ("train", "test"):
            raise ConfigError(f"{path}: split must be none/train/test, got {side!r}")
        train, test = split(ds, as_float(items, "train_frac"),
                            as_int(items, "split_seed"))
        ds = train if side == "train" else test

    kind = items.get("outlier_kind", "none")
    if kind != "none":
        spec = ContaminationSpec(kind=kind,
                                 fraction=as_float(items, "outlier_fraction"),
                                 seed=as_int(items, "outlier_seed"))
        source_ds = None
        if kind == FOREIGN_DATASET:
            if "outlier_images" not in items:
                raise ConfigError(f"{path}: foreign_dataset needs 'outlier_images'")
            source_ds = load_idx_dataset(respath("outlier_images"))
        ds = contaminate(ds, spec, source_ds)

    if "binarize" in items and as_bool(items, "binarize"):
        threshold = as_float(items, "binarize_threshold") \
            if "binarize_threshold" in items else 0.5
        ds = binarize(ds, threshold)
    return ds
