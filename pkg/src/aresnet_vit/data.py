"""Dataset ingestion, stratified splitting, training-set augmentation,
resizing, and a deterministic synthetic generator for desk-scale runs.

Two on-disk layouts are understood:

- source layout: class folders ``benign/``, ``malignant/`` (``normal/`` is
  ignored) holding ``<name>.png`` images with ``<name>_mask.png`` (and
  optionally ``<name>_mask_1.png``...) companions; multiple masks are united
  by pixelwise max.
- fixture layout: a flat directory of ``<id>.png`` + ``<id>_mask.png`` pairs
  with a ``labels.csv`` manifest (header ``id,label``).

Images are grayscale rasters scaled to [0, 1]; masks are binarized at 0.5.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .errors import ConfigError, ContractError, DataError
from .imageops import area_resize, bilinear_resize, hflip, rot90

BENIGN, MALIGNANT = 0, 1
CLASS_NAMES = {"benign": BENIGN, "malignant": MALIGNANT}


@dataclass
class Sample:
    """One case: grayscale image in [0,1], aligned binary mask, class label."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    label: int

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DataError(f"{self.id}: image {self.image.shape} and mask {self.mask.shape} differ")
        if self.label not in (BENIGN, MALIGNANT):
            raise DataError(f"{self.id}: label must be 0 or 1, got {self.label}")


@dataclass
class LoadReport:
    """Per-sample load failures and exclusion counts."""

    errors: list = field(default_factory=list)  # (sample id or path, message)
    excluded_normal: int = 0

    def ok(self) -> bool:
        return not self.errors


@dataclass
class DatasetSplit:
    """Disjoint, exhaustive, stratified id lists."""

    train: list
    val: list
    test: list
    seed: int


@dataclass
class Normalizer:
    """Train-split standardization applied to every split at batch time."""

    mean: float
    std: float

    def apply(self, image: np.ndarray) -> np.ndarray:
        return (image - self.mean) / self.std


@dataclass
class PreparedData:
    train: list
    val: list
    test: list
    split: DatasetSplit
    normalizer: Normalizer

    def find(self, sample_id: str):
        for part in (self.train, self.val, self.test):
            for s in part:
                if s.id == sample_id:
                    return s
        return None


# ---------------------------------------------------------------------------
# raster I/O


def _load_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float) / 255.0


def save_gray_png(path: Path, raster: np.ndarray):
    arr = np.clip(np.rint(raster * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_dataset(root) -> tuple:
    """Scan a source-layout directory; returns (samples sorted by id, report)."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    samples, report = [], LoadReport()
    normal_dir = root / "normal"
    if normal_dir.is_dir():
        report.excluded_normal = len([p for p in normal_dir.glob("*.png") if "_mask" not in p.stem])
    for class_name, label in sorted(CLASS_NAMES.items()):
        class_dir = root / class_name
        if not class_dir.is_dir():
            continue
        for img_path in sorted(class_dir.glob("*.png")):
            if "_mask" in img_path.stem:
                continue
            sample_id = f"{class_name}/{img_path.stem}"
            mask_paths = sorted(class_dir.glob(f"{img_path.stem}_mask*.png"))
            if not mask_paths:
                report.errors.append((sample_id, "missing mask file"))
                continue
            try:
                image = _load_gray(img_path)
                mask = np.zeros_like(image)
                for mp in mask_paths:
                    mask = np.maximum(mask, _load_gray(mp))
            except (OSError, ValueError) as exc:
                report.errors.append((sample_id, f"unreadable file: {exc}"))
                continue
            if mask.shape != image.shape:
                report.errors.append((sample_id, "image and mask dimensions differ"))
                continue
            samples.append(Sample(sample_id, image, (mask >= 0.5).astype(float), label))
    samples.sort(key=lambda s: s.id)
    return samples, report


def write_fixture(out_dir, samples):
    """Write the fixture layout; ids are sanitized into filename stems."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        stem = s.id.replace("/", "__")
        save_gray_png(out_dir / f"{stem}.png", s.image)
        save_gray_png(out_dir / f"{stem}_mask.png", s.mask)
        rows.append((stem, s.label))
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        writer.writerows(rows)


def write_split_fixtures(root, prepared: "PreparedData"):
    """Export a prepared dataset as one fixture directory per split."""
    root = Path(root)
    for name in ("train", "val", "test"):
        write_fixture(root / name, getattr(prepared, name))


def load_fixture(fixture_dir) -> tuple:
    """Read the fixture layout back; returns (samples sorted by id, report)."""
    fixture_dir = Path(fixture_dir)
    manifest = fixture_dir / "labels.csv"
    if not manifest.is_file():
        raise DataError(f"{fixture_dir} has no labels.csv manifest")
    samples, report = [], LoadReport()
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "label"]:
            raise DataError(f"labels.csv header must be id,label, got {reader.fieldnames}")
        for row in reader:
            sid = row["id"]
            img_path = fixture_dir / f"{sid}.png"
            mask_path = fixture_dir / f"{sid}_mask.png"
            if not img_path.is_file() or not mask_path.is_file():
                report.errors.append((sid, "missing image or mask file"))
                continue
            try:
                image = _load_gray(img_path)
                mask = (_load_gray(mask_path) >= 0.5).astype(float)
                samples.append(Sample(sid, image, mask, int(row["label"])))
            except (OSError, ValueError) as exc:
                report.errors.append((sid, f"unreadable: {exc}"))
    samples.sort(key=lambda s: s.id)
    return samples, report


# ---------------------------------------------------------------------------
# split / augment / resize


def split(samples, seed: int, test_fraction: float = 0.2, val_fraction: float = 0.1) -> DatasetSplit:
    """Seeded stratified partition: test_fraction held out per class, then
    val_fraction of the remaining training pool per class."""
    by_class = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s.id)
    for label, ids in sorted(by_class.items()):
        if len(ids) < 5:
            name = "benign" if label == BENIGN else "malignant"
            raise DataError(f"class {name!r} has only {len(ids)} samples; need at least 5")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        perm = [ids[i] for i in rng.permutation(len(ids))]
        n_test = int(round(test_fraction * len(ids)))
        if test_fraction > 0:
            n_test = max(1, n_test)  # tiny classes still reach every split
        test.extend(perm[:n_test])
        pool = perm[n_test:]
        n_val = int(round(val_fraction * len(pool)))
        if val_fraction > 0 and len(pool) > 1:
            n_val = max(1, n_val)
        val.extend(pool[:n_val])
        train.extend(pool[n_val:])
    return DatasetSplit(train=sorted(train), val=sorted(val), test=sorted(test), seed=seed)


def augment(samples) -> list:
    """originals + hflip + rot90 + rot180 + rot270, masks transformed
    identically; exactly 5x the input count."""
    for s in samples:
        h, w = s.image.shape
        if h != w:
            raise ContractError(f"{s.id}: augmentation needs square rasters, got {h}x{w}")
    out = list(samples)
    transforms = (
        ("hflip", hflip),
        ("rot90", lambda r: rot90(r, 1)),
        ("rot180", lambda r: rot90(r, 2)),
        ("rot270", lambda r: rot90(r, 3)),
    )
    for tag, fn in transforms:
        for s in samples:
            out.append(Sample(f"{s.id}__{tag}", fn(s.image), fn(s.mask), s.label))
    return out


def resize_bilinear(raster: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Bilinear image resize (half-pixel centers, edge clamped)."""
    if raster.shape[0] < 2 or raster.shape[1] < 2:
        raise ContractError(f"resize needs a source of at least 2x2, got {raster.shape}")
    return bilinear_resize(raster, out_hw)


def resize_mask(mask: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Masks resize by area averaging, then re-binarize at 0.5."""
    return (area_resize(mask, out_hw) >= 0.5).astype(float)


def resize_sample(sample: Sample, size: int) -> Sample:
    if sample.image.shape == (size, size):
        return sample
    return Sample(
        sample.id,
        np.clip(resize_bilinear(sample.image, (size, size)), 0.0, 1.0),
        resize_mask(sample.mask, (size, size)),
        sample.label,
    )


def validate_training_masks(samples):
    empty = [s.id for s in samples if not np.any(s.mask > 0)]
    if empty:
        raise DataError(f"training masks with no positive pixels: {empty[:5]}")


def compute_normalizer(samples) -> Normalizer:
    pixels = np.concatenate([s.image.reshape(-1) for s in samples])
    return Normalizer(mean=float(pixels.mean()), std=float(max(pixels.std(), 1e-6)))


def prepare(samples, seed: int, input_size: int, augment_train: bool = True) -> PreparedData:
    """Split -> resize -> augment (train only) -> normalizer, all seeded.

    Final lists are sorted by id so the result is order-deterministic
    regardless of how loading was scheduled.
    """
    parts = split(samples, seed)
    by_id = {s.id: s for s in samples}
    train = [resize_sample(by_id[i], input_size) for i in parts.train]
    val = [resize_sample(by_id[i], input_size) for i in parts.val]
    test = [resize_sample(by_id[i], input_size) for i in parts.test]
    validate_training_masks(train)
    if augment_train:
        train = augment(train)
    train.sort(key=lambda s: s.id)
    return PreparedData(train=train, val=val, test=test, split=parts,
                        normalizer=compute_normalizer(train))


# ---------------------------------------------------------------------------
# synthetic data


def _box_blur(a: np.ndarray, radius: int = 1) -> np.ndarray:
    k = 2 * radius + 1
    ap = np.pad(a, radius, mode="edge")
    return sliding_window_view(ap, (k, k)).mean(axis=(2, 3))


def _synth_sample(rng: np.random.Generator, size: int, label: int) -> tuple:
    base = rng.uniform(0.40, 0.55)
    speckle = rng.gamma(shape=5.0, scale=0.2, size=(size, size))
    bg = base * _box_blur(speckle, 1)

    cy = size / 2 + rng.uniform(-size / 8, size / 8)
    cx = size / 2 + rng.uniform(-size / 8, size / 8)
    r0 = rng.uniform(0.16, 0.27) * size
    aspect = rng.uniform(0.7, 1.3)
    tilt = rng.uniform(0.0, 2 * np.pi)

    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = np.cos(tilt) * dx + np.sin(tilt) * dy
    v = -np.sin(tilt) * dx + np.cos(tilt) * dy
    rho = np.sqrt(u * u + (v / aspect) ** 2) + 1e-9
    ang = np.arctan2(v, u)

    if label == MALIGNANT:
        # irregular star-perturbed boundary, blurred edge, shallow interior
        harmonics = rng.integers(3, 7, size=3)
        amps = rng.uniform(0.04, 0.11, size=3)
        phases = rng.uniform(0.0, 2 * np.pi, size=3)
        wobble = 1.0
        for k, a, ph in zip(harmonics, amps, phases):
            wobble = wobble + a * np.sin(k * ang + ph)
        edge_width = rng.uniform(1.5, 2.6)
        depth = rng.uniform(0.30, 0.45)
    else:
        # smooth ellipse, crisp (sub-pixel) edge, darker interior
        wobble = 1.0
        edge_width = 0.35
        depth = rng.uniform(0.52, 0.68)

    boundary = r0 * wobble
    signed = boundary - rho  # > 0 inside the lesion
    alpha = 1.0 / (1.0 + np.exp(-signed / edge_width))
    mask = (signed >= 0.0).astype(float)
    image = np.clip(bg * (1.0 - depth * alpha), 0.0, 1.0)
    return image, mask


def synth_generate(seed: int, per_class: int, size: int = 64) -> list:
    """Deterministic speckle-textured two-class set; the mask is the exact
    generated lesion region."""
    if size < 16:
        raise ConfigError(f"size: synthetic rasters must be at least 16, got {size}")
    if per_class < 1:
        raise ConfigError(f"per_class: must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    samples = []
    for label, name in ((BENIGN, "benign"), (MALIGNANT, "malignant")):
        for i in range(per_class):
            image, mask = _synth_sample(rng, size, label)
            samples.append(Sample(f"synth-{name}-{i:04d}", image, mask, label))
    samples.sort(key=lambda s: s.id)
    return samples
