"""Dataset scanning, class splits, and a procedural synthetic dataset.

On-disk layout: one directory per class under a root, images inside.
Class identity comes from the directory name; ordering is lexicographic
everywhere so manifests are reproducible across filesystems.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ImageFormatError, ImageTruncatedError
from .images import (augment, default_augment_ops, encode_ppm, load_image,
                     _read_header_tokens)

# Synthetic texture knobs. Class identity is a fixed oriented grating;
# each image buries it under a strong random low-frequency field plus pixel
# noise, so raw-pixel (and random-projection) similarity is dominated by the
# nuisance while the class signal survives averaging and is learnable.
# Classes share a small grid of frequencies and orientations, so held-out
# classes are unseen combinations of factors the trained filters cover.
SYNTH_CLASS_AMP = 0.18
SYNTH_NUISANCE_AMP = 0.10
SYNTH_PIXEL_NOISE = 0.02
SYNTH_PHASE_JITTER = 0.15
SYNTH_BRIGHT_JITTER = 0.03
SYNTH_FREQS = (3.0, 4.5, 6.0, 8.0)
SYNTH_ORIENTS = (0.0, 36.0, 72.0, 108.0, 144.0)

VALID_EXTENSIONS = (".ppm",)


@dataclass(frozen=True)
class ImageRecord:
    path: str
    class_name: str
    class_id: int
    aug_index: int = 0  # 0 = original file, >0 = deterministic augmented copy


@dataclass(frozen=True)
class SplitSpec:
    base: tuple
    validation: tuple
    test: tuple

    SECTIONS = ("base", "validation", "test")

    def section(self, name: str) -> tuple:
        if name not in self.SECTIONS:
            raise ConfigError(f"unknown split section {name!r}, expected one of {self.SECTIONS}")
        return getattr(self, name)

    def all_names(self) -> tuple:
        return self.base + self.validation + self.test


@dataclass
class DatasetManifest:
    root: str
    classes: list
    records: list
    image_size: int
    split: SplitSpec = None
    skipped: list = field(default_factory=list)

    def by_class(self) -> dict:
        out = {i: [] for i in range(len(self.classes))}
        for rec in self.records:
            out[rec.class_id].append(rec)
        return out

    def counts(self) -> dict:
        out = {name: 0 for name in self.classes}
        for rec in self.records:
            out[rec.class_name] += 1
        return out

    def class_id(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise DataError(f"class {name!r} not present in dataset at {self.root}") from None

    def section_class_ids(self, section: str) -> list:
        if self.split is None:
            raise DataError("manifest has no class split; run split_classes or load a split file")
        return [self.class_id(n) for n in self.split.section(section)]

    def section_records(self, section: str) -> list:
        ids = set(self.section_class_ids(section))
        return [rec for rec in self.records if rec.class_id in ids]


def _validate_image_file(path: str):
    """Cheap readability check: header fields plus payload length."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] != b"P6":
        raise ImageFormatError("not a P6 PPM file")
    (w, h, maxval), pos = _read_header_tokens(blob, 3, 2)
    if w < 1 or h < 1:
        raise ImageFormatError(f"invalid dimensions {w}x{h}")
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images supported, got maxval {maxval}")
    if len(blob) - (pos + 1) < w * h * 3:
        raise ImageTruncatedError(f"payload has {len(blob) - pos - 1} bytes, expected {w * h * 3}")


def scan_dataset(root, image_size: int = 32, allow_png: bool = False) -> DatasetManifest:
    """Walk `root`, one subdirectory per class, and list readable images.

    Unreadable files are skipped and reported in `manifest.skipped` as
    (path, reason) pairs rather than failing the scan.
    """
    root = os.path.abspath(str(root))
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root} is not a directory")
    exts = VALID_EXTENSIONS + ((".png",) if allow_png else ())
    class_names = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not class_names:
        raise DataError(f"dataset root {root} contains no class directories")

    kept_classes, records, skipped = [], [], []
    for name in class_names:
        cdir = os.path.join(root, name)
        files = sorted(f for f in os.listdir(cdir)
                       if f.lower().endswith(exts) and os.path.isfile(os.path.join(cdir, f)))
        class_records = []
        for fname in files:
            fpath = os.path.join(cdir, fname)
            if fname.lower().endswith(".png"):
                class_records.append(fpath)  # validated lazily by Pillow on load
                continue
            try:
                _validate_image_file(fpath)
            except (ImageFormatError, ImageTruncatedError, OSError) as exc:
                skipped.append((fpath, str(exc)))
                continue
            class_records.append(fpath)
        if not class_records:
            skipped.append((cdir, "class directory has no readable images"))
            continue
        class_id = len(kept_classes)
        kept_classes.append(name)
        records.extend(ImageRecord(p, name, class_id) for p in class_records)

    if not kept_classes:
        raise DataError(f"dataset root {root} has no classes with readable images")
    return DatasetManifest(root=root, classes=kept_classes, records=records,
                           image_size=image_size, skipped=skipped)


# -- class splits -------------------------------------------------------------

def split_classes(manifest: DatasetManifest, n_base: int, n_validation: int,
                  n_test: int, seed: int) -> DatasetManifest:
    """Seeded shuffle of class names partitioned base | validation | test."""
    total = n_base + n_validation + n_test
    for label, n in (("base", n_base), ("validation", n_validation), ("test", n_test)):
        if n < 0:
            raise ConfigError(f"split count {label} must be >= 0, got {n}")
    if total != len(manifest.classes):
        raise ConfigError(
            f"split counts {n_base}+{n_validation}+{n_test}={total} "
            f"do not cover the {len(manifest.classes)} dataset classes")
    if n_base < 1 or n_test < 1:
        raise ConfigError("base and test splits each need at least one class")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x5917,)))
    order = [manifest.classes[i] for i in rng.permutation(len(manifest.classes))]
    split = SplitSpec(base=tuple(order[:n_base]),
                      validation=tuple(order[n_base:n_base + n_validation]),
                      test=tuple(order[n_base + n_validation:]))
    manifest.split = split
    return manifest


def write_split_file(split: SplitSpec, path):
    lines = []
    for section in SplitSpec.SECTIONS:
        lines.append(f"[{section}]")
        lines.extend(split.section(section))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_split_file(path) -> SplitSpec:
    sections = {name: [] for name in SplitSpec.SECTIONS}
    current = None
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                name = line[1:-1].strip()
                if name not in sections:
                    raise DataError(f"{path}:{lineno}: unknown split section [{name}]")
                current = name
                continue
            if current is None:
                raise DataError(f"{path}:{lineno}: class name before any [section] header")
            if line in seen:
                raise DataError(f"{path}:{lineno}: class {line!r} listed twice")
            seen.add(line)
            sections[current].append(line)
    if not sections["base"] or not sections["test"]:
        raise DataError(f"split file {path} must list at least one base and one test class")
    return SplitSpec(base=tuple(sections["base"]),
                     validation=tuple(sections["validation"]),
                     test=tuple(sections["test"]))


def apply_split(manifest: DatasetManifest, split: SplitSpec) -> DatasetManifest:
    for name in split.all_names():
        if name not in manifest.classes:
            raise DataError(f"split references class {name!r} not present in dataset")
    manifest.split = split
    return manifest


# -- pixel loading -------------------------------------------------------------

def _record_key(record: ImageRecord) -> int:
    # Key on the root-relative identity so augmented pixels survive the
    # dataset directory being moved or copied.
    rel = f"{record.class_name}/{os.path.basename(record.path)}"
    return zlib.crc32(rel.encode("utf-8"))


def load_pixels(record: ImageRecord, image_size: int, allow_png: bool = False,
                augment_seed: int = 0, augment_ops=None) -> np.ndarray:
    """Load a record's pixels at [3, S, S]. Augmented copies (aug_index > 0)
    are deterministic functions of (class/filename, aug_index, augment_seed)."""
    img = load_image(record.path, image_size, allow_png=allow_png)
    if record.aug_index > 0:
        ops = default_augment_ops() if augment_ops is None else augment_ops
        ss = np.random.SeedSequence(entropy=augment_seed,
                                    spawn_key=(_record_key(record), record.aug_index))
        img = augment(img, ops, np.random.default_rng(ss))
    return img.astype(np.float32)


def expand_with_augments(manifest: DatasetManifest, multiplier: int) -> DatasetManifest:
    """Logically grow the manifest: each record gains multiplier-1 augmented
    copies. Returns a new manifest; the original is untouched."""
    if multiplier < 1:
        raise ConfigError(f"augment multiplier must be >= 1, got {multiplier}")
    records = []
    for rec in manifest.records:
        records.append(rec)
        for k in range(1, multiplier):
            records.append(ImageRecord(rec.path, rec.class_name, rec.class_id, aug_index=k))
    return DatasetManifest(root=manifest.root, classes=list(manifest.classes),
                           records=records, image_size=manifest.image_size,
                           split=manifest.split, skipped=list(manifest.skipped))


# -- synthetic data -------------------------------------------------------------

def _grating(size: int, cycles: float, theta_deg: float, phase: float) -> np.ndarray:
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    theta = np.deg2rad(theta_deg)
    proj = xx * np.cos(theta) + yy * np.sin(theta)
    return np.cos(2.0 * np.pi * cycles * proj + phase)


def _nuisance_field(size: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth random field from a handful of low-frequency cosines, unit RMS."""
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    field = np.zeros((size, size))
    waves = [(u, v) for u in range(-2, 3) for v in range(0, 3) if (u, v) != (0, 0) and not (v == 0 and u < 0)]
    picks = rng.choice(len(waves), size=4, replace=False)
    for idx in picks:
        u, v = waves[idx]
        amp = rng.normal()
        ph = rng.uniform(0, 2 * np.pi)
        field += amp * np.cos(2 * np.pi * (u * xx + v * yy) + ph)
    rms = np.sqrt(np.mean(field ** 2))
    return field / max(rms, 1e-9)


def synth_class_params(class_idx: int):
    """Fixed grating parameters for a synthetic class: one cell of the
    frequency x orientation grid (kept distinct past the grid size by an
    orientation offset)."""
    n_freq, n_orient = len(SYNTH_FREQS), len(SYNTH_ORIENTS)
    cycles = SYNTH_FREQS[class_idx % n_freq]
    theta = SYNTH_ORIENTS[(class_idx // n_freq) % n_orient]
    theta = (theta + 17.0 * (class_idx // (n_freq * n_orient))) % 180.0
    phase = 2.0 * np.pi * ((class_idx * 0.618034) % 1.0)
    return cycles, theta, phase


def synth_image(class_idx: int, image_idx: int, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(class_idx, image_idx)))
    cycles, theta, phase = synth_class_params(class_idx)
    phase = phase + rng.uniform(-SYNTH_PHASE_JITTER, SYNTH_PHASE_JITTER)
    base = 0.5 + SYNTH_CLASS_AMP * _grating(size, cycles, theta, phase)
    base = base + SYNTH_NUISANCE_AMP * _nuisance_field(size, rng)
    img = np.repeat(base[None, :, :], 3, axis=0)
    img = img + rng.normal(0.0, SYNTH_PIXEL_NOISE, size=img.shape)
    img = img * (1.0 + rng.uniform(-SYNTH_BRIGHT_JITTER, SYNTH_BRIGHT_JITTER))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_dataset(root, n_classes: int, per_class: int, image_size: int = 32,
                  seed: int = 0) -> str:
    """Write a procedural PPM dataset under `root` and return its path."""
    if n_classes < 2:
        raise ConfigError(f"synthetic dataset needs >= 2 classes, got {n_classes}")
    if per_class < 1:
        raise ConfigError(f"synthetic dataset needs >= 1 image per class, got {per_class}")
    root = os.path.abspath(str(root))
    os.makedirs(root, exist_ok=True)
    width = max(2, len(str(n_classes - 1)))
    for c in range(n_classes):
        cdir = os.path.join(root, f"class_{c:0{width}d}")
        os.makedirs(cdir, exist_ok=True)
        for i in range(per_class):
            img = synth_image(c, i, image_size, seed)
            with open(os.path.join(cdir, f"img_{i:04d}.ppm"), "wb") as f:
                f.write(encode_ppm(img))
    return root
