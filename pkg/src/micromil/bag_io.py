"""Feature bags on disk: the MILB binary format and CSV manifests.

MILB layout (all little-endian)::

    bytes 0-3    magic b"MILB"
    bytes 4-7    uint32 version (= 1)
    bytes 8-11   uint32 S, number of instances
    bytes 12-15  uint32 d, feature dimension
    bytes 16-    S*d float32 values, row-major

Labels are not stored in bag files; they live in the manifest, a CSV file
with header ``bag_id,label,path`` whose paths are relative to the manifest's
directory.  Files ending in ``.csv`` are read as plain text, one instance per
line, for hand-written fixtures.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, ManifestError

MAGIC = b"MILB"
VERSION = 1
HEADER = struct.Struct("<4sIII")
MANIFEST_HEADER = ["bag_id", "label", "path"]


@dataclass
class FeatureBag:
    bag_id: str
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise ContractError(f"bag {self.bag_id!r}: features must be 2-D, got {self.features.shape}")
        if self.label is not None and self.label not in (0, 1):
            raise ContractError(f"bag {self.bag_id!r}: label must be 0 or 1, got {self.label!r}")

    @property
    def S(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass
class ManifestEntry:
    bag_id: str
    label: int
    path: str


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    split_name: str = ""
    base_dir: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def labels(self) -> list[int]:
        return [e.label for e in self.entries]

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.base_dir) / entry.path

    def subset(self, bag_ids, split_name: str = "") -> "Manifest":
        """Entries whose id is in ``bag_ids``, in the order given."""
        by_id = {e.bag_id: e for e in self.entries}
        return Manifest([by_id[b] for b in bag_ids], split_name or self.split_name, self.base_dir)

    def load_bags(self, expected_d: int | None = None) -> list[FeatureBag]:
        bags = []
        for entry in self.entries:
            bag = read_bag(self.resolve(entry), expected_d=expected_d, bag_id=entry.bag_id)
            bag.label = entry.label
            if expected_d is None:
                expected_d = bag.d
            bags.append(bag)
        return bags


def _check_finite(features: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(features)):
        raise FormatError(f"{where}: NaN or Inf entry")


def write_bag(bag: FeatureBag, path) -> None:
    feats = np.asarray(bag.features)
    if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
        raise ContractError(f"bag {bag.bag_id!r}: need S >= 1 and d >= 1, got shape {feats.shape}")
    _check_finite(feats, f"bag {bag.bag_id!r}")
    S, d = feats.shape
    payload = np.ascontiguousarray(feats, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, S, d))
        fh.write(payload)


def read_bag(path, expected_d: int | None = None, bag_id: str | None = None) -> FeatureBag:
    path = Path(path)
    bag_id = bag_id if bag_id is not None else path.stem
    if path.suffix.lower() == ".csv":
        features = _read_csv_bag(path)
    else:
        raw = path.read_bytes()
        if len(raw) < HEADER.size:
            raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
        magic, version, S, d = HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if S < 1 or d < 1:
            raise FormatError(f"{path}: empty bag (S={S}, d={d})")
        expected = HEADER.size + 4 * S * d
        if len(raw) < expected:
            raise FormatError(f"{path}: truncated payload ({len(raw)} of {expected} bytes)")
        if len(raw) > expected:
            raise FormatError(f"{path}: {len(raw) - expected} trailing bytes")
        features = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(S, d).astype(np.float32)
    _check_finite(features, str(path))
    if expected_d is not None and features.shape[1] != expected_d:
        raise FormatError(f"{path}: feature dimension {features.shape[1]}, expected {expected_d}")
    return FeatureBag(bag_id, features)


def _read_csv_bag(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: non-numeric value") from None
    if not rows:
        raise FormatError(f"{path}: no instances")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: rows have different lengths")
    return np.asarray(rows, dtype=np.float32)


def read_manifest(path) -> Manifest:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(f"{path}: missing header {','.join(MANIFEST_HEADER)}", line=1)
        entries: list[ManifestEntry] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ManifestError(f"expected 3 fields, got {len(row)}", line=lineno)
            bag_id, label, rel = (c.strip() for c in row)
            if label not in ("0", "1"):
                raise ManifestError(f"bad label {label!r} (must be 0 or 1)", line=lineno)
            if bag_id in seen:
                raise ManifestError(f"duplicate bag_id {bag_id!r}", line=lineno)
            seen.add(bag_id)
            entries.append(ManifestEntry(bag_id, int(label), rel))
    return Manifest(entries, split_name=path.stem, base_dir=path.parent)


def write_manifest(manifest: Manifest, path) -> None:
    """Write ``manifest``; entry paths are rewritten relative to the new location."""
    path = Path(path)
    out_dir = path.parent.resolve()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            target = (Path(manifest.base_dir) / e.path).resolve()
            rel = os.path.relpath(target, out_dir)
            writer.writerow([e.bag_id, e.label, Path(rel).as_posix()])


def holdout_split(manifest: Manifest, test_fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Stratified random train/test split; each class keeps its proportion."""
    if not 0 < test_fraction < 1:
        raise ContractError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_ids: set[str] = set()
    for label in (0, 1):
        ids = [e.bag_id for e in manifest.entries if e.label == label]
        n_test = int(round(test_fraction * len(ids)))
        for i in rng.permutation(len(ids))[:n_test]:
            test_ids.add(ids[i])
    train = [e.bag_id for e in manifest.entries if e.bag_id not in test_ids]
    test = [e.bag_id for e in manifest.entries if e.bag_id in test_ids]
    return manifest.subset(train, "train"), manifest.subset(test, "test")
