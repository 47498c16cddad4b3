"""Bit-exact persistence for features, labels, caches and dataset manifests.

Binary layouts (all little-endian, fixed width; single precision on disk,
double precision once loaded):

  feature file:  "TIPF" | u32 version=1 | u64 rows | u64 cols
                 | u8 normalized | rows*cols float32, row-major
  label file:    "TIPL" | u32 version=1 | u64 rows | u64 num_classes
                 | rows u32 class indices
  cache file:    "TIPC" | u32 version=1 | feature section | label section

A dataset manifest is a human-editable JSON document binding a feature file,
a label file, a class-name list, a split role and a shot count; relative
paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from .core import CacheModel, FeatureMatrix, LabelMatrix
from .errors import FormatError, LabelRangeError, ManifestError

FEATURE_MAGIC = b"TIPF"
LABEL_MAGIC = b"TIPL"
CACHE_MAGIC = b"TIPC"
FORMAT_VERSION = 1

_FEATURE_HEADER = struct.Struct("<4sIQQB")
_LABEL_HEADER = struct.Struct("<4sIQQ")
_CACHE_HEADER = struct.Struct("<4sI")


def _check_magic_version(magic: bytes, version: int, expected: bytes) -> None:
    if magic != expected:
        raise FormatError(
            f"bad magic: expected {expected.decode()}, got {magic!r}"
        )
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version} (expected {FORMAT_VERSION})")


def feature_bytes(matrix: FeatureMatrix) -> bytes:
    """Encode a feature matrix; float64 entries are rounded to float32."""
    header = _FEATURE_HEADER.pack(
        FEATURE_MAGIC,
        FORMAT_VERSION,
        matrix.rows,
        matrix.cols,
        1 if matrix.normalized else 0,
    )
    payload = matrix.data.astype("<f4").tobytes(order="C")
    return header + payload


def _parse_features(buf: bytes, offset: int) -> Tuple[FeatureMatrix, int]:
    end = offset + _FEATURE_HEADER.size
    if len(buf) < end:
        raise FormatError("truncated feature header")
    magic, version, rows, cols, flag = _FEATURE_HEADER.unpack_from(buf, offset)
    _check_magic_version(magic, version, FEATURE_MAGIC)
    if flag not in (0, 1):
        raise FormatError(f"invalid normalized flag {flag}")
    payload_len = rows * cols * 4
    if len(buf) < end + payload_len:
        raise FormatError(
            f"truncated payload: header declares {rows}x{cols} "
            f"({payload_len} bytes), {len(buf) - end} available"
        )
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=end)
    matrix = FeatureMatrix(
        data.astype(np.float64).reshape(rows, cols), normalized=bool(flag)
    )
    return matrix, end + payload_len


def write_features(matrix: FeatureMatrix, path) -> None:
    Path(path).write_bytes(feature_bytes(matrix))


def read_features(path) -> FeatureMatrix:
    buf = Path(path).read_bytes()
    matrix, end = _parse_features(buf, 0)
    if end != len(buf):
        raise FormatError(f"trailing data: {len(buf) - end} unexpected bytes")
    return matrix


def label_bytes(labels: Sequence[int], num_classes: int) -> bytes:
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if num_classes < 1:
        raise LabelRangeError("num_classes must be >= 1")
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise LabelRangeError(f"label out of range for {num_classes} classes")
    header = _LABEL_HEADER.pack(LABEL_MAGIC, FORMAT_VERSION, idx.size, num_classes)
    return header + idx.astype("<u4").tobytes()


def _parse_labels(buf: bytes, offset: int) -> Tuple[np.ndarray, int, int]:
    end = offset + _LABEL_HEADER.size
    if len(buf) < end:
        raise FormatError("truncated label header")
    magic, version, rows, num_classes = _LABEL_HEADER.unpack_from(buf, offset)
    _check_magic_version(magic, version, LABEL_MAGIC)
    payload_len = rows * 4
    if len(buf) < end + payload_len:
        raise FormatError(
            f"truncated payload: header declares {rows} labels, "
            f"{(len(buf) - end) // 4} available"
        )
    idx = np.frombuffer(buf, dtype="<u4", count=rows, offset=end).astype(np.int64)
    if idx.size and idx.max() >= num_classes:
        raise LabelRangeError(
            f"label out of range: index {int(idx.max())} with "
            f"{num_classes} classes"
        )
    return idx, int(num_classes), end + payload_len


def write_labels(labels: Sequence[int], num_classes: int, path) -> None:
    Path(path).write_bytes(label_bytes(labels, num_classes))


def read_labels(path) -> Tuple[np.ndarray, int]:
    """Returns (class indices, num_classes)."""
    buf = Path(path).read_bytes()
    idx, num_classes, end = _parse_labels(buf, 0)
    if end != len(buf):
        raise FormatError(f"trailing data: {len(buf) - end} unexpected bytes")
    return idx, num_classes


def _derive_shots(values: LabelMatrix) -> int:
    counts = values.data.sum(axis=0)
    if counts.size and np.all(counts == counts[0]) and counts[0] > 0:
        return int(counts[0])
    return 0


def write_cache(cache: CacheModel, path) -> None:
    blob = (
        _CACHE_HEADER.pack(CACHE_MAGIC, FORMAT_VERSION)
        + feature_bytes(cache.keys)
        + label_bytes(cache.values.class_indices(), cache.num_classes)
    )
    Path(path).write_bytes(blob)


def read_cache(path) -> CacheModel:
    buf = Path(path).read_bytes()
    if len(buf) < _CACHE_HEADER.size:
        raise FormatError("truncated cache header")
    magic, version = _CACHE_HEADER.unpack_from(buf, 0)
    _check_magic_version(magic, version, CACHE_MAGIC)
    keys, offset = _parse_features(buf, _CACHE_HEADER.size)
    idx, num_classes, offset = _parse_labels(buf, offset)
    if offset != len(buf):
        raise FormatError(f"trailing data: {len(buf) - offset} unexpected bytes")
    values = LabelMatrix.from_indices(idx, num_classes)
    if keys.rows != values.rows:
        raise FormatError(
            f"row mismatch inside cache file: {keys.rows} keys, {values.rows} labels"
        )
    return CacheModel(
        keys=keys,
        values=values,
        num_classes=num_classes,
        shots=_derive_shots(values),
    )


def _peek_rows(path: Path, expected_magic: bytes, header: struct.Struct) -> int:
    with open(path, "rb") as fh:
        head = fh.read(header.size)
    if len(head) < header.size:
        raise FormatError(f"truncated header in {path}")
    fields = header.unpack(head)
    _check_magic_version(fields[0], fields[1], expected_magic)
    return int(fields[2])


@dataclass(frozen=True)
class DatasetManifest:
    """Binding of a feature file, label file and class names for one split."""

    features_path: Path
    labels_path: Path
    class_names: Tuple[str, ...]
    split: str
    shots: int

    def load(self) -> Tuple[FeatureMatrix, np.ndarray, Tuple[str, ...]]:
        """Read both files, enforcing row and class-count agreement."""
        feats = read_features(self.features_path)
        idx, num_classes = read_labels(self.labels_path)
        if feats.rows != idx.size:
            raise ManifestError(
                f"row mismatch: {self.features_path} has {feats.rows} rows, "
                f"{self.labels_path} has {idx.size}"
            )
        if num_classes != len(self.class_names):
            raise ManifestError(
                f"class count mismatch: label file declares {num_classes}, "
                f"manifest names {len(self.class_names)} classes"
            )
        return feats, idx, self.class_names


_SPLITS = ("train", "val", "test")


def read_manifest(path) -> DatasetManifest:
    """Parse and validate a JSON manifest; checks files exist and rows agree."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    try:
        features = doc["features"]
        labels = doc["labels"]
        class_names = doc["class_names"]
        split = doc["split"]
        shots = doc["shots"]
    except KeyError as exc:
        raise ManifestError(f"manifest missing field {exc.args[0]!r}") from exc
    if split not in _SPLITS:
        raise ManifestError(f"split must be one of {_SPLITS}, got {split!r}")
    if (
        not isinstance(class_names, list)
        or not class_names
        or not all(isinstance(n, str) for n in class_names)
    ):
        raise ManifestError("class_names must be a non-empty list of strings")
    if not isinstance(shots, int) or shots < 0:
        raise ManifestError("shots must be a non-negative integer")

    base = path.parent
    features_path = (base / features).resolve()
    labels_path = (base / labels).resolve()
    for p in (features_path, labels_path):
        if not p.is_file():
            raise ManifestError(f"missing file: {p}")
    feat_rows = _peek_rows(features_path, FEATURE_MAGIC, _FEATURE_HEADER)
    label_rows = _peek_rows(labels_path, LABEL_MAGIC, _LABEL_HEADER)
    if feat_rows != label_rows:
        raise ManifestError(
            f"row mismatch: {features_path} has {feat_rows} rows, "
            f"{labels_path} has {label_rows}"
        )
    return DatasetManifest(
        features_path=features_path,
        labels_path=labels_path,
        class_names=tuple(class_names),
        split=split,
        shots=shots,
    )
