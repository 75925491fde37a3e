"""Datasets and encodings: gray-scale bars, optdigits, amplitude encoding, file I/O.

Images are flat row-major vectors: pixel ``(i, j)`` of an ``m x m`` image sits
at index ``i * m + j``. For amplitude encoding, pixel ``j`` is basis state
``j`` of the data register (qubit 0 least significant).
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np

from .qsim import StateVector

FIXTURE_NAME = "optdigits_01.tra"


@dataclass(frozen=True)
class BarDatasetConfig:
    m: int = 2
    n_examples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("bar images need m >= 2")
        if self.n_examples < 1:
            raise ValueError("need at least one example")


def generate_bar_dataset(config: BarDatasetConfig) -> np.ndarray:
    """``(N_e, m*m)`` array; row ``i`` of each image is ``(u, 1-u, 0, ...)``, u ~ U(0.4, 0.6)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0xBA5])))
    first = rng.uniform(0.4, 0.6, size=(config.n_examples, config.m))
    images = np.zeros((config.n_examples, config.m, config.m))
    images[:, :, 0] = first
    images[:, :, 1] = 1.0 - first
    return images.reshape(config.n_examples, config.m * config.m)


def to_patch_distribution(images, n_patches: int) -> np.ndarray:
    """Normalise each patch to sum 1, the form a patch generator emits.

    An all-zero patch maps to the uniform distribution over that patch.
    """
    x = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n, dim = x.shape
    if dim % n_patches:
        raise ValueError("image length is not a multiple of the patch count")
    patches = x.reshape(n, n_patches, dim // n_patches)
    sums = patches.sum(axis=2, keepdims=True)
    out = np.where(sums > 0, patches / np.where(sums > 0, sums, 1.0), 1.0 / patches.shape[2])
    return out.reshape(n, dim)


def bar_to_distribution(images, m: int) -> np.ndarray:
    return np.asarray(images, dtype=np.float64) / m


def bar_from_distribution(images, m: int) -> np.ndarray:
    return np.asarray(images, dtype=np.float64) * m


# ---------------------------------------------------------------------------
# optdigits

class OptdigitsParseError(ValueError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


@dataclass
class DigitDataset:
    images: np.ndarray  # (n, 64) in [0, 1]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def parse_optdigits(lines: Iterable[str], source="<input>", classes: Optional[Sequence[int]] = (0, 1)) -> DigitDataset:
    images, labels = [], []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 65:
            raise OptdigitsParseError(source, line_no, f"expected 65 fields, found {len(fields)}")
        try:
            values = [int(f) for f in fields]
        except ValueError:
            raise OptdigitsParseError(source, line_no, "non-integer field") from None
        pixels, label = values[:64], values[64]
        if any(v < 0 or v > 16 for v in pixels):
            raise OptdigitsParseError(source, line_no, "pixel value outside 0..16")
        if not 0 <= label <= 9:
            raise OptdigitsParseError(source, line_no, f"bad class label {label}")
        if classes is not None and label not in classes:
            continue
        images.append(pixels)
        labels.append(label)
    if not labels:
        raise ValueError(f"{source}: no examples left after filtering to classes {classes}")
    return DigitDataset(np.asarray(images, dtype=np.float64) / 16.0, np.asarray(labels, dtype=np.int64))


def load_optdigits(path=None, classes: Optional[Sequence[int]] = (0, 1)) -> DigitDataset:
    """Load a UCI optdigits file; ``path=None`` reads the bundled 0/1 subset."""
    if path is None:
        text = resources.files("qganlab").joinpath("fixtures", FIXTURE_NAME).read_text()
        return parse_optdigits(text.splitlines(), FIXTURE_NAME, classes)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        return parse_optdigits(fh, path, classes)


# ---------------------------------------------------------------------------
# amplitude encoding

def amplitude_encode(image, n_qubits: int) -> StateVector:
    """Amplitude ``sqrt(x_j / sum(x))`` on basis ``j``, zero-padded to ``2**n_qubits``."""
    x = np.asarray(image, dtype=np.float64).reshape(-1)
    if x.shape[0] > 2**n_qubits:
        raise ValueError(f"{x.shape[0]} pixels do not fit in {n_qubits} qubits")
    if np.any(x < 0):
        raise ValueError("amplitude encoding needs nonnegative pixels")
    total = x.sum()
    if total <= 0:
        raise ValueError("cannot encode an all-zero image")
    amps = np.zeros(2**n_qubits)
    amps[: x.shape[0]] = np.sqrt(x / total)
    return StateVector(n_qubits, amps)


def encode_rows(images, n_data: int) -> np.ndarray:
    """Real amplitude rows for a batch of images on an ``n_data``-qubit register."""
    x = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if x.shape[1] > 2**n_data:
        raise ValueError("image does not fit in the data register")
    if np.any(x < 0):
        raise ValueError("amplitude encoding needs nonnegative pixels")
    totals = x.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("cannot encode an all-zero image")
    out = np.zeros((x.shape[0], 2**n_data))
    out[:, : x.shape[1]] = np.sqrt(x / totals)
    return out


def batch_feature_rows(images, config) -> np.ndarray:
    """Feature-register rows (one per image) with all ancillas at |0>."""
    enc = encode_rows(images, config.n_data)
    rows = np.zeros((enc.shape[0], 2**config.n_feature))
    rows[:, : enc.shape[1]] = enc
    return rows


def batch_amplitude_encode(images, config) -> StateVector:
    """``2**N_I`` images in superposition over the index register."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if images.shape[0] != config.batch_size:
        raise ValueError(f"expected {config.batch_size} images, got {images.shape[0]}")
    rows = batch_feature_rows(images, config)
    return StateVector(config.n_qubits, rows.reshape(-1) / np.sqrt(config.batch_size))


# ---------------------------------------------------------------------------
# files

def write_images_csv(path, images) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(images):
            writer.writerow([repr(float(v)) for v in row])


def read_images_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: no samples")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have unequal length")
    return np.asarray(rows)


def write_pgm(path, image, side: int, scale: float = 1.0) -> None:
    """8-bit binary PGM (P5); pixel byte = round(255 * clip(value * scale, 0, 1))."""
    x = np.asarray(image, dtype=np.float64).reshape(side, side) * scale
    data = np.round(255 * np.clip(x, 0.0, 1.0)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w) / maxval
