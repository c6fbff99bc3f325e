"""Feature-file ingestion, synthetic data, and batching.

Model inputs are pre-extracted per-utterance feature matrices, one per
modality (visual, text, audio), stored in the MCIH binary format:

    magic "MCIH" | version u16 | T_v D_v T_t D_t T_a D_a u32 | count u32 |
    scheme u32 | per sample: label f32, then x_v, x_t, x_a as f32 row-major

All integers are little-endian. Samples hold float32 payloads so a file
round trip is bit-exact. The synthetic generator plants a rank-1,
label-proportional component in every modality with a tunable
signal-to-noise ratio, standing in for real extracted features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional, Sequence

import numpy as np

MAGIC = b"MCIH"
FORMAT_VERSION = 1
MODALITIES = ("v", "t", "a")
LABEL_SCHEMES = ("mosi7", "sims5")

# (T, D) per modality at the full working scale and the small test scale.
PAPER_SHAPES = {"v": (10, 512), "t": (36, 768), "a": (128, 512)}
DESK_SHAPES = {"v": (4, 12), "t": (6, 16), "a": (8, 12)}


class FeatureFileError(ValueError):
    """Base class for MCIH file problems."""


class BadMagicError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class LabelRangeError(FeatureFileError):
    pass


@dataclass
class ModalSample:
    """One utterance: three feature matrices plus a sentiment score in [-1, 1]."""

    x_v: np.ndarray
    x_t: np.ndarray
    x_a: np.ndarray
    label: float

    def __post_init__(self):
        self.x_v = np.ascontiguousarray(self.x_v, dtype=np.float32)
        self.x_t = np.ascontiguousarray(self.x_t, dtype=np.float32)
        self.x_a = np.ascontiguousarray(self.x_a, dtype=np.float32)
        self.label = float(np.float32(self.label))
        if not -1.0 <= self.label <= 1.0:
            raise LabelRangeError(f"label {self.label} outside [-1, 1]")

    def feature(self, modality: str) -> np.ndarray:
        return {"v": self.x_v, "t": self.x_t, "a": self.x_a}[modality]

    def shapes(self) -> dict[str, tuple[int, int]]:
        return {m: tuple(self.feature(m).shape) for m in MODALITIES}


@dataclass
class DatasetHeader:
    """Shape and labelling metadata stored at the front of an MCIH file."""

    shapes: dict[str, tuple[int, int]]
    count: int
    scheme: str = "mosi7"
    version: int = FORMAT_VERSION

    def __post_init__(self):
        for m in MODALITIES:
            t, d = self.shapes[m]
            if t < 1 or d < 1:
                raise ValueError(f"modality {m} needs positive extents, got ({t}, {d})")
        if self.count < 1:
            raise ValueError(f"sample count must be >= 1, got {self.count}")
        if self.scheme not in LABEL_SCHEMES:
            raise ValueError(f"unknown label scheme {self.scheme!r}")

    def sample_floats(self) -> int:
        return 1 + sum(t * d for t, d in self.shapes.values())

    def to_dict(self) -> dict:
        return {
            "magic": MAGIC.decode(),
            "version": self.version,
            "shapes": {m: list(self.shapes[m]) for m in MODALITIES},
            "count": self.count,
            "scheme": self.scheme,
        }


@dataclass
class SyntheticSpec:
    """Recipe for a planted-signal synthetic dataset.

    Every modality's feature matrix is ``rho * label * (profile x direction)``
    plus ``(1 - rho)``-scaled isotropic noise, so the label is linearly
    recoverable from any modality at high rho and drowned at rho = 0.

    ``geometry_seed`` fixes the planted directions and temporal profiles
    independently of the sampling seed; give train and held-out files the
    same geometry seed so they share a signal subspace.
    """

    count: int
    shapes: dict[str, tuple[int, int]] = field(default_factory=lambda: dict(DESK_SHAPES))
    rho: float = 0.5
    label_dist: str = "uniform"  # uniform | mosi7 | sims5
    scheme: str = "mosi7"
    seed: int = 0
    geometry_seed: Optional[int] = None
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.label_dist not in ("uniform", "mosi7", "sims5"):
            raise ValueError(f"unknown label distribution {self.label_dist!r}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")


def _pack_header(header: DatasetHeader, out: BinaryIO) -> None:
    out.write(MAGIC)
    out.write(struct.pack("<H", header.version))
    for m in MODALITIES:
        t, d = header.shapes[m]
        out.write(struct.pack("<II", t, d))
    out.write(struct.pack("<I", header.count))
    out.write(struct.pack("<I", LABEL_SCHEMES.index(header.scheme)))


def write_feature_file(path, header: DatasetHeader, samples: Sequence[ModalSample]) -> None:
    """Serialize samples under the given header; round trips bit-exactly."""
    if header.count != len(samples):
        raise FeatureFileError(
            f"header declares {header.count} samples but {len(samples)} were given"
        )
    for i, s in enumerate(samples):
        for m in MODALITIES:
            got = tuple(s.feature(m).shape)
            want = tuple(header.shapes[m])
            if got != want:
                raise FeatureFileError(
                    f"sample {i} modality {m!r}: expected shape {want}, got {got}"
                )
    with open(path, "wb") as out:
        _pack_header(header, out)
        for s in samples:
            out.write(struct.pack("<f", np.float32(s.label)))
            for m in MODALITIES:
                out.write(s.feature(m).astype("<f4", copy=False).tobytes(order="C"))


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"file ends inside {what}")
    return buf


def read_feature_file(path) -> tuple[DatasetHeader, list[ModalSample]]:
    """Parse an MCIH file, validating shapes and label range per sample."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagicError(f"expected magic {MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "header"))
        shapes = {}
        for m in MODALITIES:
            t, d = struct.unpack("<II", _read_exact(f, 8, "header"))
            shapes[m] = (t, d)
        (count,) = struct.unpack("<I", _read_exact(f, 4, "header"))
        (scheme_idx,) = struct.unpack("<I", _read_exact(f, 4, "header"))
        if scheme_idx >= len(LABEL_SCHEMES):
            raise FeatureFileError(f"unknown label scheme index {scheme_idx}")
        header = DatasetHeader(shapes, count, LABEL_SCHEMES[scheme_idx], version)
        samples = []
        for i in range(count):
            (label,) = struct.unpack("<f", _read_exact(f, 4, f"sample {i}"))
            mats = {}
            for m in MODALITIES:
                t, d = shapes[m]
                raw = _read_exact(f, 4 * t * d, f"sample {i}")
                mats[m] = np.frombuffer(raw, dtype="<f4").reshape(t, d)
            try:
                samples.append(ModalSample(mats["v"], mats["t"], mats["a"], label))
            except LabelRangeError as e:
                raise LabelRangeError(f"sample {i}: {e}") from None
    return header, samples


def _draw_labels(rng: np.random.Generator, n: int, dist: str) -> np.ndarray:
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, size=n)
    levels = {"mosi7": np.linspace(-1.0, 1.0, 7), "sims5": np.linspace(-1.0, 1.0, 5)}[dist]
    return rng.choice(levels, size=n)


def generate_synthetic(spec: SyntheticSpec) -> list[ModalSample]:
    """Deterministic planted-signal samples for the given spec."""
    geo_seed = spec.seed if spec.geometry_seed is None else spec.geometry_seed
    geo_rng = np.random.default_rng(geo_seed)
    directions = {}
    profiles = {}
    for m in MODALITIES:
        t, d = spec.shapes[m]
        u = geo_rng.standard_normal(d)
        directions[m] = u / np.linalg.norm(u)
        # Mean kept away from zero so temporal pooling preserves the signal.
        profiles[m] = 1.0 + 0.25 * geo_rng.standard_normal(t)
    rng = np.random.default_rng(spec.seed)
    labels = _draw_labels(rng, spec.count, spec.label_dist)
    sigma = spec.noise_scale * (1.0 - spec.rho)
    samples = []
    for y in labels:
        mats = {}
        for m in MODALITIES:
            t, d = spec.shapes[m]
            signal = np.outer(profiles[m], directions[m]) * (spec.rho * y)
            mats[m] = signal + sigma * rng.standard_normal((t, d))
        samples.append(ModalSample(mats["v"], mats["t"], mats["a"], float(y)))
    return samples


def make_batches(
    samples: Sequence[ModalSample],
    batch_size: int,
    seed: int = 0,
    shuffle: bool = False,
) -> list[list[ModalSample]]:
    """Partition samples into batches; the last batch may be short."""
    if not samples:
        raise ValueError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = list(range(len(samples)))
    if shuffle:
        np.random.default_rng(seed).shuffle(order)
    return [
        [samples[j] for j in order[i : i + batch_size]]
        for i in range(0, len(order), batch_size)
    ]


def batch_arrays(batch: Sequence[ModalSample], modalities=MODALITIES) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Stack a batch into float64 (B, T, D) arrays plus a label vector."""
    feats = {
        m: np.stack([s.feature(m) for s in batch]).astype(np.float64)
        for m in modalities
    }
    labels = np.array([s.label for s in batch], dtype=np.float64)
    return feats, labels
