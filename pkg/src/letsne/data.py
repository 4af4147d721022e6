"""Dataset ingestion, standardization and synthetic generators.

Two on-disk formats are understood: a plain CSV table and the ``HSCUBE01``
hyperspectral cube container (see :func:`load_cube`).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CUBE_MAGIC = b"HSCUBE01"
_CUBE_DTYPES = {"f32": "<f4", "f64": "<f8"}


class DataError(ValueError):
    """Raised for malformed input files or invalid dataset parameters."""


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Samples as rows, features as columns.

    ``labels`` uses ``-1`` for unlabelled samples (only produced by cube
    files, whose label 0 marks background). ``grid`` is ``(height, width)``
    for image-shaped data in row-major pixel order. ``coords`` carries an
    optional real-valued per-sample quantity used only for coloring plots
    (e.g. the unrolled swiss-roll coordinate).
    """

    values: np.ndarray
    labels: np.ndarray | None = None
    grid: tuple[int, int] | None = None
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None
    coords: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        n = values.shape[0]
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise DataError("labels length does not match sample count")
            object.__setattr__(self, "labels", labels)
        if self.grid is not None:
            h, w = (int(v) for v in self.grid)
            if h * w != n:
                raise DataError(f"grid {h}x{w} does not cover {n} samples")
            object.__setattr__(self, "grid", (h, w))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def labelled_mask(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(self.n, dtype=bool)
        return self.labels >= 0

    @property
    def n_classes(self) -> int:
        if self.labels is None or not self.labelled_mask.any():
            return 0
        return int(self.labels.max()) + 1


def _remap_labels(raw):
    """Map arbitrary label tokens to 0..C-1 following their sorted order.

    Numeric tokens sort numerically, anything else lexicographically.
    """
    try:
        keys = [float(v) for v in raw]
    except ValueError:
        keys = list(raw)
    uniq = sorted(set(keys))
    index = {k: i for i, k in enumerate(uniq)}
    return np.array([index[k] for k in keys], dtype=np.int64)


def load_tabular(path, label_column=None, ignore_columns=()):
    """Read a headered CSV of numeric features.

    ``label_column`` names the class column (remapped to contiguous ids);
    ``ignore_columns`` are dropped. A column called ``t`` listed in
    ``ignore_columns`` is kept as ``coords`` for plotting.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append((lineno, row))

    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not in header")
    missing = [c for c in ignore_columns if c not in header]
    if missing:
        raise DataError(f"{path}: ignored columns not in header: {missing}")
    if len(rows) < 2:
        raise DataError(f"{path}: fewer than 2 samples")

    skip = set(ignore_columns)
    if label_column is not None:
        skip.add(label_column)
    feat_idx = [i for i, h in enumerate(header) if h not in skip]
    if not feat_idx:
        raise DataError(f"{path}: no feature columns")

    values = np.empty((len(rows), len(feat_idx)))
    for r, (lineno, row) in enumerate(rows):
        for c, i in enumerate(feat_idx):
            try:
                values[r, c] = float(row[i])
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric value {row[i]!r} in column {header[i]!r}"
                ) from None

    labels = None
    if label_column is not None:
        li = header.index(label_column)
        labels = _remap_labels([row[li].strip() for _, row in rows])
    coords = None
    if "t" in ignore_columns:
        ti = header.index("t")
        coords = np.array([float(row[ti]) for _, row in rows])
    return DataMatrix(
        values,
        labels=labels,
        coords=coords,
        feature_names=tuple(header[i] for i in feat_idx),
    )


def save_tabular(data: DataMatrix, path, label_column="label"):
    names = data.feature_names or tuple(f"x{j}" for j in range(data.d))
    header = list(names)
    if data.labels is not None:
        header.append(label_column)
    if data.coords is not None:
        header.append("t")
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(data.n):
            cells = [repr(float(v)) for v in data.values[i]]
            if data.labels is not None:
                cells.append(str(int(data.labels[i])))
            if data.coords is not None:
                cells.append(repr(float(data.coords[i])))
            fh.write(",".join(cells) + "\n")


def _parse_cube_header(blob, path):
    if not blob.startswith(CUBE_MAGIC):
        raise DataError(f"{path}: missing HSCUBE01 magic")
    nl = blob.find(b"\n", len(CUBE_MAGIC))
    if nl < 0:
        raise DataError(f"{path}: unterminated header line")
    try:
        header = json.loads(blob[len(CUBE_MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad JSON header: {exc}") from None
    for key in ("height", "width", "bands", "dtype"):
        if key not in header:
            raise DataError(f"{path}: header lacks {key!r}")
    return header, nl + 1


def load_cube(path):
    """Read an ``HSCUBE01`` file into a gridded :class:`DataMatrix`.

    Payload is band-interleaved-by-pixel little-endian floats. The optional
    trailing uint16 label block uses 0 for unlabelled pixels; classes
    ``1..C`` become ``0..C-1`` and unlabelled pixels become ``-1``.
    """
    path = Path(path)
    blob = path.read_bytes()
    header, offset = _parse_cube_header(blob, path)
    h, w, b = (header["height"], header["width"], header["bands"])
    if not all(isinstance(v, int) and v >= 1 for v in (h, w, b)):
        raise DataError(f"{path}: dimensions must be positive integers, got {h}x{w}x{b}")
    dtype = _CUBE_DTYPES.get(header["dtype"])
    if dtype is None:
        raise DataError(f"{path}: unknown dtype {header['dtype']!r}")
    has_labels = bool(header.get("has_labels", False))

    n = h * w
    payload_bytes = n * b * np.dtype(dtype).itemsize
    expected = payload_bytes + (2 * n if has_labels else 0)
    if len(blob) - offset != expected:
        raise DataError(
            f"{path}: payload is {len(blob) - offset} bytes, header implies {expected}"
        )
    values = np.frombuffer(blob, dtype=dtype, count=n * b, offset=offset)
    values = values.astype(np.float64).reshape(n, b)
    labels = None
    if has_labels:
        raw = np.frombuffer(blob, dtype="<u2", count=n, offset=offset + payload_bytes)
        labels = raw.astype(np.int64) - 1
    return DataMatrix(values, labels=labels, grid=(h, w))


def save_cube(data: DataMatrix, path, dtype="f64"):
    if data.grid is None:
        raise DataError("cube output needs grid geometry")
    h, w = data.grid
    header = {
        "height": h,
        "width": w,
        "bands": data.d,
        "dtype": dtype,
        "has_labels": data.labels is not None,
    }
    with Path(path).open("wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(data.values, dtype=_CUBE_DTYPES[dtype]).tobytes())
        if data.labels is not None:
            fh.write((data.labels + 1).astype("<u2").tobytes())


def standardize(data: DataMatrix) -> DataMatrix:
    """Z-score every column with the population standard deviation.

    Constant columns get a recorded std of 1 and become all zeros.
    """
    if data.n < 2:
        raise DataError("standardize needs at least 2 samples")
    x = data.values
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # relative threshold catches columns constant up to rounding
    scale = np.maximum(np.abs(mean), 1.0)
    std = np.where(std <= 1e-12 * scale, 1.0, std)
    z = (x - mean) / std
    return replace(data, values=z, feature_means=mean, feature_stds=std)


def make_blobs(n_per_class, classes, d, spread, seed, center_scale=1.0):
    """Isotropic Gaussian clusters with centers ``N(0, center_scale**2 I)``."""
    if min(n_per_class, classes, d) < 1:
        raise DataError("n_per_class, classes and d must be >= 1")
    if spread <= 0:
        raise DataError("spread must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=center_scale, size=(classes, d))
    labels = np.repeat(np.arange(classes), n_per_class)
    values = centers[labels] + rng.normal(scale=spread, size=(labels.size, d))
    return DataMatrix(values, labels=labels)


def swiss_roll_t(n, seed):
    """Generative roll parameter for :func:`make_swiss_roll` (same stream)."""
    rng = np.random.default_rng(seed)
    return 1.5 * math.pi * (1.0 + 2.0 * rng.random(n)), rng


def make_swiss_roll(n, noise, seed):
    """3-D swiss roll: ``(t cos t, 21 h, t sin t)`` with ``coords = t``."""
    if n < 10:
        raise DataError("swiss roll needs n >= 10")
    t, rng = swiss_roll_t(n, seed)
    height = 21.0 * rng.random(n)
    values = np.column_stack([t * np.cos(t), height, t * np.sin(t)])
    if noise > 0:
        values = values + rng.normal(scale=noise, size=values.shape)
    return DataMatrix(values, coords=t)


def make_block_cube(height, width, bands, seed, noise=0.3, classes=4):
    """Image cube of ``classes`` contiguous rectangular blocks.

    Each block has its own random mean spectrum; pixels add Gaussian noise.
    With four classes the blocks are the image quadrants. Labels follow the
    tabular convention (0..C-1, nothing unlabelled).
    """
    rng = np.random.default_rng(seed)
    if classes == 4:
        rows = np.arange(height)[:, None] >= height // 2
        cols = np.arange(width)[None, :] >= width // 2
        block = (2 * rows + cols).astype(np.int64)
    else:
        block = np.repeat(
            np.linspace(0, classes, width, endpoint=False).astype(np.int64)[None, :],
            height,
            axis=0,
        )
    labels = block.ravel()
    spectra = rng.normal(size=(classes, bands))
    values = spectra[labels] + rng.normal(scale=noise, size=(labels.size, bands))
    return DataMatrix(values, labels=labels, grid=(height, width))
