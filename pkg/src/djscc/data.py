"""Image ingestion, normalization, splitting, and synthetic fixtures.

Two on-disk formats are supported: directories of PNG files, and the "DJL1"
binary batch format (see docs/formats.md). Pixels are stored as bytes and
normalized to [0, 1] by division by 255.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadFractions,
    CorruptImage,
    EmptyDataset,
    MissingPath,
    ShapeMismatch,
    UnknownKind,
)

BATCH_MAGIC = b"DJL1"


@dataclass
class ImageTensor:
    """A source image: float pixels of shape (height, width, channels) in [0, 1]."""

    pixels: np.ndarray
    id: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3:
            raise ShapeMismatch(f"image {self.id!r}: expected 3-d pixels, got shape {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError(f"image {self.id!r}: pixel values outside [0, 1]")

    @property
    def shape(self):
        return self.pixels.shape


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        ids = [im.id for part in (self.train, self.validation, self.test) for im in part]
        if len(ids) != len(set(ids)):
            raise ValueError("split parts share image ids")


def _check_shape(pixels, expect_shape, name):
    if expect_shape is not None and tuple(pixels.shape) != tuple(expect_shape):
        raise ShapeMismatch(f"{name}: shape {pixels.shape} != configured {tuple(expect_shape)}")


def load_images(path, limit=None, expect_shape=None):
    """Load images from a PNG directory or a DJL1 batch file, byte values / 255.

    Ordering is deterministic: sorted filename order for directories, record
    order for batch files. `limit` truncates after ordering.
    """
    if not os.path.exists(path):
        raise MissingPath(f"no such path: {path}")
    if os.path.isdir(path):
        images = _load_png_dir(path, expect_shape)
    else:
        images = read_batch(path, expect_shape)
    if not images:
        raise EmptyDataset(f"no images found at {path}")
    if limit is not None:
        images = images[:limit]
    return images


def _load_png_dir(path, expect_shape):
    from PIL import Image, UnidentifiedImageError

    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".png"))
    images = []
    for name in names:
        full = os.path.join(path, name)
        try:
            with Image.open(full) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError) as ex:
            raise CorruptImage(f"cannot decode {full}: {ex}") from ex
        _check_shape(arr, expect_shape, full)
        images.append(ImageTensor(arr / 255.0, id=os.path.splitext(name)[0]))
    return images


def read_batch(path, expect_shape=None):
    """Read a DJL1 batch file: magic, u32 count, per image u16 h, u16 w, u8 c, raw bytes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != BATCH_MAGIC:
        raise CorruptImage(f"{path}: bad magic {blob[:4]!r}")
    try:
        (count,) = struct.unpack_from("<I", blob, 4)
        off = 8
        images = []
        for i in range(count):
            h, w, c = struct.unpack_from("<HHB", blob, off)
            off += 5
            n = h * w * c
            raw = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off)
            if raw.size != n:
                raise CorruptImage(f"{path}: record {i} truncated")
            off += n
            pixels = raw.reshape(h, w, c)
            _check_shape(pixels, expect_shape, f"{path}[{i}]")
            images.append(ImageTensor(pixels / 255.0, id=f"rec{i:06d}"))
    except struct.error as ex:
        raise CorruptImage(f"{path}: truncated header: {ex}") from ex
    return images


def write_batch(path, images):
    """Write images (byte-quantized by round(v*255)) to a DJL1 batch file."""
    parts = [BATCH_MAGIC, struct.pack("<I", len(images))]
    for im in images:
        h, w, c = im.pixels.shape
        raw = np.rint(im.pixels * 255.0).astype(np.uint8)
        parts.append(struct.pack("<HHB", h, w, c))
        parts.append(raw.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def shuffled_order(n, seed):
    """The documented shuffle: Fisher-Yates over [0..n), PCG64(seed), j = integers(0, i+1)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def make_split(images, fractions, seed):
    """Shuffle with the documented PRNG and partition by fractions.

    Validation and test sizes are floor(fraction * n); the remainder goes to
    train. Identical seed gives identical membership.
    """
    if not images:
        raise EmptyDataset("cannot split an empty image list")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise BadFractions(f"fractions {fractions} must be nonnegative and sum to 1")
    n = len(images)
    order = shuffled_order(n, seed)
    n_val = int(fractions[1] * n)
    n_test = int(fractions[2] * n)
    n_train = n - n_val - n_test
    shuffled = [images[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        seed=seed,
    )


def synth_fixture(kind, seed=0, shape=(32, 32, 3)):
    """Deterministic synthetic test images: constant, gradient, checker, noise."""
    h, w, c = shape
    if kind == "constant":
        pixels = np.full(shape, 0.5)
    elif kind == "gradient":
        col = np.linspace(0.0, 1.0, w)
        pixels = np.broadcast_to(col[None, :, None], shape).copy()
    elif kind == "checker":
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        pixels = np.broadcast_to(((yy + xx) % 2)[:, :, None], shape).astype(np.float64).copy()
    elif kind == "noise":
        rng = np.random.Generator(np.random.PCG64(seed))
        pixels = rng.random(shape)
    else:
        raise UnknownKind(f"unknown fixture kind {kind!r}")
    return ImageTensor(pixels, id=f"{kind}-{seed}")


_PHOTO_NAMES = ("astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field", "retina", "colorwheel")


def build_patch_dataset(count, seed, shape=(32, 32, 3), sources=_PHOTO_NAMES):
    """Synthesize a photographic small-image dataset by seeded random crops.

    Crops `count` patches (with random horizontal flips) from the color
    photographs bundled with scikit-image. Stands in for a CIFAR-scale corpus
    when no external dataset is on disk.
    """
    import skimage.data as skd

    h, w, c = shape
    photos = []
    for name in sources:
        arr = getattr(skd, name)()
        if arr.ndim == 3 and arr.shape[2] >= 3 and arr.shape[0] > h and arr.shape[1] > w:
            photos.append(arr[:, :, :3])
    if not photos:
        raise EmptyDataset("no usable source photographs")
    rng = np.random.Generator(np.random.PCG64(seed))
    images = []
    for i in range(count):
        src = photos[int(rng.integers(len(photos)))]
        y = int(rng.integers(0, src.shape[0] - h + 1))
        x = int(rng.integers(0, src.shape[1] - w + 1))
        patch = src[y:y + h, x:x + w].astype(np.float64) / 255.0
        if rng.random() < 0.5:
            patch = patch[:, ::-1].copy()
        images.append(ImageTensor(patch, id=f"patch{i:06d}"))
    return images


def stack_pixels(images):
    """Images -> float array (N, h, w, c). Raises on heterogeneous shapes."""
    shapes = {im.pixels.shape for im in images}
    if len(shapes) != 1:
        raise ShapeMismatch(f"heterogeneous shapes: {sorted(shapes)}")
    return np.stack([im.pixels for im in images])
