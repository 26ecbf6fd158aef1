"""Dataset ingestion: IDX image files, CSV tables, and synthetic corpora.

The synthetic digit corpus stands in for MNIST when the real files are not
on disk (nothing is downloaded): glyph bitmaps are warped by random affine
maps, blurred and speckled, then written through the same IDX writer/parser
path the real files would take.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """File content violates the expected format."""


@dataclass
class Dataset:
    """Feature matrix with integer labels and train/test split tags."""

    features: np.ndarray          # (n, d) float64
    labels: np.ndarray            # (n,) int64
    split: np.ndarray = None      # (n,) strings "train"/"test"
    image_hw: tuple = None        # set when features are flattened images
    n_dropped: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.split is None:
            self.split = np.full(len(self.labels), "train", dtype=object)
        if np.isnan(self.features).any():
            raise FormatError("features contain NaN after ingestion")
        if self.labels.min(initial=0) < 0:
            raise FormatError("labels must be non-negative class indices")

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, mask):
        return Dataset(self.features[mask], self.labels[mask], self.split[mask],
                       image_hw=self.image_hw)

    def train_test(self):
        return self.subset(self.split == "train"), self.subset(self.split == "test")


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------

def _read_idx(path, expected_magic, expected_ndim):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 * (1 + expected_ndim):
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{expected_ndim}I", raw[4:4 + 4 * expected_ndim])
    payload = raw[4 + 4 * expected_ndim:]
    expected_len = int(np.prod(dims))
    if len(payload) != expected_len:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, header promises {expected_len}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_mnist_idx(images_path, labels_path, subsample_to=None, split="train"):
    """Parse an IDX image/label file pair into a Dataset.

    Pixels are scaled to [0, 1]. ``subsample_to`` keeps k pixels by uniform
    stride over the flattened image (feature reduction for small front ends).
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"image/label counts disagree: {images.shape[0]} vs {labels.shape[0]}")
    n, h, w = images.shape
    feats = images.reshape(n, h * w).astype(np.float64) / 255.0
    image_hw = (h, w)
    if subsample_to is not None:
        if not (1 <= subsample_to <= h * w):
            raise FormatError(f"cannot subsample {h * w} pixels to {subsample_to}")
        stride = (h * w) // subsample_to
        feats = feats[:, ::stride][:, :subsample_to]
        image_hw = None
    return Dataset(feats, labels.astype(np.int64),
                   split=np.full(n, split, dtype=object), image_hw=image_hw)


def save_idx(images, labels, images_path, labels_path):
    """Write uint8 images (n, h, w) and labels (n,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def load_csv_dataset(path, label_column, split="train"):
    """Parse a headered numeric CSV; rows with missing cells are dropped."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if label_column not in header:
            raise FormatError(f"{path}: no column named {label_column!r} in header {header}")
        label_idx = header.index(label_column)
        rows, dropped = [], 0
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}")
            if any(c.strip() == "" or c.strip().lower() in ("na", "nan") for c in cells):
                dropped += 1
                continue
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                bad = next(i for i, c in enumerate(cells)
                           if not _is_number(c))
                raise FormatError(
                    f"{path}:{lineno}: non-numeric cell in column {header[bad]!r}: {cells[bad]!r}"
                ) from exc
    if dropped:
        log.warning("%s: dropped %d rows with missing cells", path, dropped)
    if not rows:
        raise FormatError(f"{path}: no usable rows")
    data = np.asarray(rows)
    labels = data[:, label_idx].astype(np.int64)
    feats = np.delete(data, label_idx, axis=1)
    ds = Dataset(feats, labels, split=np.full(len(labels), split, dtype=object))
    ds.n_dropped = dropped
    return ds


def _is_number(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def standardize(train, test=None, variance_floor=1e-12):
    """Zero-mean unit-variance per column, statistics taken on the train split."""
    mu = train.features.mean(axis=0)
    var = train.features.var(axis=0)
    scale = np.sqrt(np.maximum(var, variance_floor))
    scale[var < variance_floor] = 1.0
    train = Dataset((train.features - mu) / scale, train.labels, train.split,
                    image_hw=train.image_hw)
    train.features[:, var < variance_floor] = 0.0
    if test is None:
        return train
    tf = (test.features - mu) / scale
    tf[:, var < variance_floor] = 0.0
    return train, Dataset(tf, test.labels, test.split, image_hw=test.image_hw)


# ---------------------------------------------------------------------------
# synthetic digit corpus
# ---------------------------------------------------------------------------

# 5x7 bitmap glyphs for the digits 0-9
_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00110 01000 10000 11111",
    "11110 00001 00001 01110 00001 00001 11110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _glyph_array(digit):
    rows = _GLYPHS[digit].split()
    return np.array([[int(c) for c in row] for row in rows], dtype=float)


def _render_digit(digit, rng, hw=(28, 28)):
    """Rasterize one randomly warped glyph onto an hw canvas in [0, 1]."""
    h, w = hw
    glyph = _glyph_array(digit)
    angle = rng.uniform(-0.30, 0.30)
    shear = rng.uniform(-0.25, 0.25)
    sx = rng.uniform(3.0, 4.2)
    sy = rng.uniform(2.6, 3.4)
    tx = w / 2 + rng.uniform(-2.5, 2.5)
    ty = h / 2 + rng.uniform(-2.5, 2.5)
    ca, sa = np.cos(angle), np.sin(angle)
    # canvas pixel -> glyph coordinate (inverse map, bilinear sampling)
    fwd = np.array([[ca, -sa], [sa, ca]]) @ np.array([[1.0, shear], [0.0, 1.0]]) \
        @ np.array([[sy, 0.0], [0.0, sx]])
    inv = np.linalg.inv(fwd)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    rel = np.stack([yy - ty, xx - tx])
    gy = inv[0, 0] * rel[0] + inv[0, 1] * rel[1] + (glyph.shape[0] - 1) / 2
    gx = inv[1, 0] * rel[0] + inv[1, 1] * rel[1] + (glyph.shape[1] - 1) / 2
    y0 = np.floor(gy).astype(int)
    x0 = np.floor(gx).astype(int)
    fy, fx = gy - y0, gx - x0

    def sample(yi, xi):
        ok = (yi >= 0) & (yi < glyph.shape[0]) & (xi >= 0) & (xi < glyph.shape[1])
        out = np.zeros_like(fy)
        out[ok] = glyph[yi[ok], xi[ok]]
        return out

    img = (sample(y0, x0) * (1 - fy) * (1 - fx) + sample(y0 + 1, x0) * fy * (1 - fx)
           + sample(y0, x0 + 1) * (1 - fy) * fx + sample(y0 + 1, x0 + 1) * fy * fx)
    # box blur for softer strokes, then amplitude jitter and speckle
    padded = np.pad(img, 1)
    img = sum(padded[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)) / 9.0
    img *= rng.uniform(0.75, 1.0)
    img += rng.normal(0.0, 0.04, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_digit_corpus(n_train, n_test, seed=0, hw=(28, 28)):
    """Deterministic MNIST-like corpus of warped digit glyphs."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = n_train + n_test
    labels = rng.integers(0, 10, n)
    images = np.stack([_render_digit(int(d), rng, hw) for d in labels])
    split = np.array(["train"] * n_train + ["test"] * n_test, dtype=object)
    return Dataset(images.reshape(n, -1), labels, split=split, image_hw=hw)


def write_digit_corpus_idx(out_dir, n_train, n_test, seed=0):
    """Render the synthetic corpus and store it as standard IDX file pairs."""
    import os
    ds = make_digit_corpus(n_train, n_test, seed=seed)
    train, test = ds.train_test()
    paths = {}
    os.makedirs(out_dir, exist_ok=True)
    for name, part in (("train", train), ("t10k", test)):
        h, w = part.image_hw
        images = np.round(part.features.reshape(-1, h, w) * 255.0).astype(np.uint8)
        ip = os.path.join(out_dir, f"{name}-images-idx3-ubyte")
        lp = os.path.join(out_dir, f"{name}-labels-idx1-ubyte")
        save_idx(images, part.labels, ip, lp)
        paths[name] = (ip, lp)
    return paths


# ---------------------------------------------------------------------------
# synthetic tabular tasks
# ---------------------------------------------------------------------------

def make_binary_task(n, d, seed=0, class_sep=1.6, n_informative=None, noise=1.0):
    """Two-class Gaussian task with a low-dimensional informative subspace."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_informative = n_informative or max(2, d // 3)
    labels = rng.integers(0, 2, n)
    basis = rng.standard_normal((n_informative, d))
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    centers = rng.standard_normal((2, n_informative)) * class_sep
    latent = centers[labels] + rng.standard_normal((n, n_informative))
    feats = latent @ basis + noise * rng.standard_normal((n, d))
    return Dataset(feats, labels)


def train_test_split(ds, test_fraction=0.25, seed=0):
    """Random split, re-tagging the rows."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = len(ds.labels)
    order = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    split = np.full(n, "train", dtype=object)
    split[order[:n_test]] = "test"
    return Dataset(ds.features, ds.labels, split=split, image_hw=ds.image_hw)


def stratified_subset(ds, n_per_split, seed=0):
    """Deterministic class-balanced subset of each split tag."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    keep = np.zeros(len(ds.labels), dtype=bool)
    for tag, want in n_per_split.items():
        idx = np.flatnonzero(ds.split == tag)
        if want >= idx.size:
            keep[idx] = True
            continue
        per_class = {}
        for i in idx:
            per_class.setdefault(ds.labels[i], []).append(i)
        chosen = []
        classes = sorted(per_class)
        quota = {c: want // len(classes) for c in classes}
        for c in classes[:want % len(classes)]:
            quota[c] += 1
        for c in classes:
            pool = np.array(per_class[c])
            take = min(quota[c], pool.size)
            chosen.extend(rng.choice(pool, take, replace=False))
        short = want - len(chosen)
        if short > 0:
            rest = np.setdiff1d(idx, np.array(chosen))
            chosen.extend(rng.choice(rest, short, replace=False))
        keep[np.array(chosen, dtype=int)] = True
    return ds.subset(keep)
