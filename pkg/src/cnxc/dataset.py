"""Dataset indexing, splitting, batch iteration, and the synthetic corpus.

Directory convention: a root containing NORMAL/ and PNEUMONIA/ class
directories (case-insensitive), optionally nested under pre-assigned
train/ val/ test/ directories. Only binary PGM files are ingested; see
scripts/convert_to_pgm.py for JPEG sources.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .errors import FormatError, IterationError, LayoutError, ParameterError, SplitError
from .imaging import ClaheParams, GrayImage
from .rng import Rng

LABEL_NAMES = ("NORMAL", "PNEUMONIA")  # label 0, label 1
SPLIT_NAMES = ("train", "val", "test")
UNSPLIT = "unsplit"

PIPELINE_STAGES = ("clahe", "resize", "augment", "normalize")


@dataclass
class Entry:
    path: str
    label: int   # 0 = Normal, 1 = Pneumonia
    split: str   # train | val | test | unsplit


@dataclass
class DatasetIndex:
    entries: list[Entry]
    warnings: int = 0  # unreadable files skipped during the scan

    def split_entries(self, split: str) -> list[Entry]:
        return [e for e in self.entries if e.split == split]


@dataclass
class Batch:
    inputs: np.ndarray  # (b, 1, h, w) in [0, 1]
    labels: np.ndarray  # (b,) of {0, 1}


# ---------------------------------------------------------------- scanning

def _probe_pgm(path: Path) -> bool:
    """Cheap validity check: parse the header, match payload to file size."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(512)
        if head[:2] != b"P5":
            return False
        pos = 2
        fields = []
        for _ in range(3):
            tok, _, pos = imaging._next_token(head, pos)
            fields.append(int(tok))
        width, height, maxval = fields
        if width < 1 or height < 1 or maxval != 255:
            return False
        return path.stat().st_size == pos + 1 + width * height
    except (OSError, ValueError, FormatError):
        return False


def _class_dir(root: Path, name: str) -> Path:
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name.upper() == name:
            return child
    raise LayoutError(f"missing class directory '{name}' under {root}")


def _scan_one(root: Path, split: str):
    entries, skipped = [], 0
    for label, name in enumerate(LABEL_NAMES):
        class_dir = _class_dir(root, name)
        files = sorted(p for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() == ".pgm")
        good = []
        for path in files:
            if _probe_pgm(path):
                good.append(Entry(str(path), label, split))
            else:
                skipped += 1
        if not good:
            raise LayoutError(f"class directory '{class_dir}' contains no readable PGM files")
        entries.extend(good)
    return entries, skipped


def scan_directory(root) -> DatasetIndex:
    """Index a dataset directory; pre-split train/val/test layouts keep their split."""
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"dataset root '{root}' is not a directory")
    split_dirs = {}
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name.lower() in SPLIT_NAMES:
            split_dirs[child.name.lower()] = child
    entries, warnings = [], 0
    if split_dirs:
        for split in SPLIT_NAMES:
            if split not in split_dirs:
                continue
            part, skipped = _scan_one(split_dirs[split], split)
            entries.extend(part)
            warnings += skipped
    else:
        entries, warnings = _scan_one(root, UNSPLIT)
    entries.sort(key=lambda e: e.path)
    return DatasetIndex(entries, warnings)


# ---------------------------------------------------------------- splitting

def split(index: DatasetIndex, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetIndex:
    """Stratified train/val/test assignment with floor-based counts.

    Within each class the entries are shuffled with the seeded generator;
    val and test take floor(n * fraction) entries each and the remainder
    goes to train.
    """
    if any(e.split != UNSPLIT for e in index.entries):
        raise ParameterError("index already carries split assignments")
    f_train, f_val, f_test = fractions
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ParameterError(f"fractions must sum to 1, got {fractions}")
    rng = Rng(seed)
    new_entries = [Entry(e.path, e.label, e.split) for e in index.entries]
    for label in (0, 1):
        positions = [i for i, e in enumerate(new_entries) if e.label == label]
        n = len(positions)
        if n < 3:
            raise SplitError(f"class {LABEL_NAMES[label]} has only {n} entries; need >= 3")
        rng.derive("split", label).shuffle(positions)
        n_val = math.floor(n * f_val)
        n_test = math.floor(n * f_test)
        n_train = n - n_val - n_test
        for j, pos in enumerate(positions):
            if j < n_train:
                new_entries[pos].split = "train"
            elif j < n_train + n_val:
                new_entries[pos].split = "val"
            else:
                new_entries[pos].split = "test"
    return DatasetIndex(new_entries, index.warnings)


# ------------------------------------------------------------ preprocessing

@dataclass
class Pipeline:
    """Per-image preprocessing chain executed by batch_iter.

    The stage order is configurable; 'augment' only runs when an
    augmentation stream is supplied (training batches).
    """

    input_h: int = 150
    input_w: int = 150
    clahe_params: ClaheParams | None = field(default_factory=ClaheParams)
    order: tuple = ("clahe", "resize", "augment", "normalize")
    shear_max: float = imaging.SHEAR_MAX_RAD
    dtype: type = np.float32

    def __post_init__(self):
        stages = tuple(self.order)
        if len(set(stages)) != len(stages) or any(s not in PIPELINE_STAGES for s in stages):
            raise ParameterError(f"bad preprocessing order {stages}")
        if "resize" not in stages or stages[-1] != "normalize":
            raise ParameterError("preprocessing order must contain 'resize' and end with 'normalize'")
        self.order = stages

    def preprocess(self, img: GrayImage, aug_rng: Rng | None = None) -> np.ndarray:
        out = None
        for stage in self.order:
            if stage == "clahe":
                if self.clahe_params is not None:
                    img = imaging.clahe(img, self.clahe_params)
            elif stage == "resize":
                img = imaging.resize_bilinear(img, self.input_w, self.input_h)
            elif stage == "augment":
                if aug_rng is not None:
                    params = imaging.random_augment_params(aug_rng, self.shear_max)
                    img = imaging.apply_augment(img, params)
            else:
                out = imaging.normalize(img, self.dtype)
        return out


def batch_iter(
    index: DatasetIndex,
    split_name: str,
    pipe: Pipeline,
    batch_size: int = 32,
    shuffle: bool = False,
    rng: Rng | None = None,
    augment: bool = False,
    epoch: int = 0,
    threads: int = 1,
):
    """Yield batches covering the split exactly once, in deterministic order.

    Shuffling draws a fresh permutation per (rng, epoch); augmentation
    streams derive from (rng, epoch, stable entry index) so results do not
    depend on batch boundaries or worker threads.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    entries = index.split_entries(split_name)
    if not entries:
        raise IterationError(f"split '{split_name}' is empty")
    if (shuffle or augment) and rng is None:
        raise ParameterError("shuffle/augment need an Rng")
    order = list(range(len(entries)))
    if shuffle:
        rng.derive("shuffle", epoch).shuffle(order)

    def prep(i: int):
        entry = entries[i]
        img = imaging.load_pgm(Path(entry.path).read_bytes())
        aug_rng = rng.derive("augment", epoch, i) if augment else None
        return pipe.preprocess(img, aug_rng), entry.label

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for lo in range(0, len(order), batch_size):
            chunk = order[lo : lo + batch_size]
            results = list(pool.map(prep, chunk)) if pool else [prep(i) for i in chunk]
            inputs = np.stack([r[0] for r in results])
            labels = np.asarray([r[1] for r in results], dtype=pipe.dtype)
            yield Batch(inputs, labels)
    finally:
        if pool:
            pool.shutdown()


def write_manifest(index: DatasetIndex, path) -> None:
    """One line per entry: path, label, split (audit trail for a run)."""
    lines = [f"{e.path}\t{e.label}\t{e.split}" for e in index.entries]
    Path(path).write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------ synthetic data

SYNTH_BG_BASE = 30
SYNTH_BG_NOISE = 26     # uniform noise levels 0..25
SYNTH_BLOB_PEAK = 160.0
SYNTH_SIGMA_RANGE = (0.08, 0.15)  # fraction of image width


@dataclass
class BlobInfo:
    path: str
    cx: float
    cy: float
    sigma: float

    def bbox(self):
        """Blob bounding box (x0, y0, x1, y1) inclusive, at +/- 2 sigma."""
        r = 2.0 * self.sigma
        return (
            int(math.floor(self.cx - r)),
            int(math.floor(self.cy - r)),
            int(math.ceil(self.cx + r)),
            int(math.ceil(self.cy + r)),
        )


def synth_dataset(n_per_class: int, image_size: int, seed: int, out_dir):
    """Write a two-class synthetic corpus of PGMs; returns (index, blobs).

    Class 0 is a low-amplitude noise background; class 1 is the same
    background (paired by index) plus one bright Gaussian blob at a random
    position with sigma in 8..15% of the image width. Generation is
    deterministic under the seed, independent of write order.
    """
    if n_per_class < 4:
        raise ParameterError(f"n_per_class must be >= 4, got {n_per_class}")
    if image_size < 8:
        raise ParameterError(f"image_size must be >= 8, got {image_size}")
    out = Path(out_dir)
    dirs = [out / name for name in LABEL_NAMES]
    for d in dirs:
        d.mkdir(parents=True, exist_ok=True)
    base = Rng(seed)
    size = image_size
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    blobs = []
    for i in range(n_per_class):
        noise = base.derive("synth-bg", i).uniform(size * size)
        bg = SYNTH_BG_BASE + np.floor(noise * SYNTH_BG_NOISE)
        bg = bg.reshape(size, size)
        normal_path = dirs[0] / f"normal_{i:04d}.pgm"
        normal_path.write_bytes(imaging.save_pgm(GrayImage(np.clip(bg, 0, 255).astype(np.uint8))))

        brng = base.derive("synth-blob", i)
        sigma = brng.uniform(lo=SYNTH_SIGMA_RANGE[0] * size, hi=SYNTH_SIGMA_RANGE[1] * size)
        margin = 2.0 * sigma
        cx = brng.uniform(lo=margin, hi=size - 1 - margin)
        cy = brng.uniform(lo=margin, hi=size - 1 - margin)
        blob = SYNTH_BLOB_PEAK * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma**2))
        pneu_path = dirs[1] / f"pneumonia_{i:04d}.pgm"
        pneu = np.clip(np.floor(bg + blob + 0.5), 0, 255).astype(np.uint8)
        pneu_path.write_bytes(imaging.save_pgm(GrayImage(pneu)))
        blobs.append(BlobInfo(str(pneu_path), cx, cy, sigma))

    blob_lines = [f"{b.path}\t{b.cx:.6f}\t{b.cy:.6f}\t{b.sigma:.6f}" for b in blobs]
    (out / "blobs.txt").write_text("\n".join(blob_lines) + "\n")
    index = scan_directory(out)
    write_manifest(index, out / "manifest.txt")
    return index, blobs
