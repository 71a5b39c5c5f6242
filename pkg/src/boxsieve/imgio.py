"""Binary image-stack and tabular I/O shared by all other modules.

Stacks use a deliberately small subset of the MRC-2014 format: mode 2
(32-bit reals), little-endian, 1024-byte header, optional extended header
honored as a skip count on read. Feature and label tables are plain CSV
with a fixed column contract.

Images are 2D float32 arrays (row-major, shape ``(ny, nx)``); a stack is a
3D array ``(nz, ny, nx)`` plus one pixel size in Angstrom per pixel.
"""
from __future__ import annotations

import csv
import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import FEATURE_NAMES

__all__ = [
    "ImageStack",
    "LabelTable",
    "MrcFormatError",
    "CsvFormatError",
    "read_stack",
    "write_stack",
    "read_feature_csv",
    "write_feature_csv",
    "read_label_csv",
    "write_label_csv",
    "PARTICLE",
    "NON_PARTICLE",
    "UNLABELED",
]

# Label encoding used throughout: +1 particle, -1 non-particle, 0 unlabeled.
PARTICLE = 1
NON_PARTICLE = -1
UNLABELED = 0

_LABEL_TOKENS = {PARTICLE: "+", NON_PARTICLE: "-"}
_TOKEN_LABELS = {"+": PARTICLE, "-": NON_PARTICLE}

HEADER_SIZE = 1024
DEFAULT_PIXEL_SIZE = 2.0


class MrcFormatError(ValueError):
    """Raised on malformed/unsupported stack files; message names the field."""


class CsvFormatError(ValueError):
    """Raised on malformed feature/label tables; message names the problem."""


@dataclass
class ImageStack:
    """Ordered stack of same-size images sharing one pixel size."""

    data: np.ndarray  # (nz, ny, nx) float32
    pixel_size: float = DEFAULT_PIXEL_SIZE

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.validate()

    def validate(self) -> None:
        if self.data.ndim != 3:
            raise ValueError(f"stack data must be 3D (nz, ny, nx), got {self.data.ndim}D")
        if self.data.shape[0] < 1:
            raise ValueError("stack must contain at least one image")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        if not np.isfinite(self.data).all():
            raise ValueError("stack contains non-finite values")

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.data[i]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]


@dataclass
class LabelTable:
    """Sparse map of image id to label; ids absent from the map are unlabeled."""

    labels: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for i, lab in self.labels.items():
            if i < 0:
                raise ValueError(f"negative image id {i}")
            if lab not in (PARTICLE, NON_PARTICLE):
                raise ValueError(f"label for id {i} must be +1/-1, got {lab}")

    def label_of(self, image_id: int) -> int:
        return self.labels.get(image_id, UNLABELED)

    def set_label(self, image_id: int, label: int) -> None:
        if label == UNLABELED:
            self.labels.pop(image_id, None)
        elif label in (PARTICLE, NON_PARTICLE):
            self.labels[image_id] = label
        else:
            raise ValueError(f"label must be +1/-1/0, got {label}")

    def labeled_ids(self) -> list[int]:
        return sorted(self.labels)

    def counts(self) -> tuple[int, int]:
        """(particles, non-particles) among labeled rows."""
        pos = sum(1 for v in self.labels.values() if v == PARTICLE)
        return pos, len(self.labels) - pos

    def validate_against(self, stack: ImageStack) -> None:
        for i in self.labels:
            if i >= len(stack):
                raise ValueError(f"image id {i} out of bounds for stack of {len(stack)}")


# ---------------------------------------------------------------------------
# MRC-2014 mode-2 subset
# ---------------------------------------------------------------------------

def read_stack(path: str | os.PathLike) -> ImageStack:
    """Read a little-endian MRC-2014 mode-2 stack.

    The pixel size is cell_a / nx; zero cell dimensions fall back to
    2.0 A/pixel with a warning. An extended header (nsymbt) is skipped.
    """
    with open(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
        if len(header) < HEADER_SIZE:
            raise MrcFormatError(
                f"header: file holds {len(header)} bytes, need {HEADER_SIZE}"
            )
        nx, ny, nz, mode = struct.unpack_from("<4i", header, 0)
        mx, my, mz = struct.unpack_from("<3i", header, 28)
        cell_a, cell_b, cell_c = struct.unpack_from("<3f", header, 40)
        nsymbt = struct.unpack_from("<i", header, 92)[0]
        map_id = header[208:212]
        stamp = header[212:216]

        if map_id != b"MAP ":
            raise MrcFormatError(f"map id: expected 'MAP ', found {map_id!r}")
        if stamp[0] == 0x11:
            raise MrcFormatError("machine stamp: big-endian data is not supported")
        if mode != 2:
            raise MrcFormatError(f"mode: only mode 2 (32-bit real) supported, found {mode}")
        for name, v in (("nx", nx), ("ny", ny), ("nz", nz)):
            if v <= 0:
                raise MrcFormatError(f"{name}: must be positive, found {v}")
        if nsymbt < 0:
            raise MrcFormatError(f"nsymbt: must be non-negative, found {nsymbt}")

        if nsymbt:
            skipped = fh.read(nsymbt)
            if len(skipped) < nsymbt:
                raise MrcFormatError(
                    f"nsymbt: extended header claims {nsymbt} bytes, file holds {len(skipped)}"
                )
        want = nx * ny * nz * 4
        payload = fh.read(want)
        if len(payload) < want:
            raise MrcFormatError(f"data: expected {want} bytes, file holds {len(payload)}")

    data = np.frombuffer(payload, dtype="<f4").reshape(nz, ny, nx)
    if not np.isfinite(data).all():
        raise MrcFormatError("data: stack contains non-finite values")

    if cell_a > 0:
        pixel_size = cell_a / nx
    else:
        warnings.warn(
            f"{path}: cell dimensions unset; assuming {DEFAULT_PIXEL_SIZE} A/pixel",
            stacklevel=2,
        )
        pixel_size = DEFAULT_PIXEL_SIZE
    return ImageStack(data=data.copy(), pixel_size=pixel_size)


def write_stack(stack: ImageStack, path: str | os.PathLike) -> None:
    """Write a little-endian MRC-2014 mode-2 file readable by :func:`read_stack`."""
    stack.validate()
    nz, ny, nx = stack.data.shape
    data = np.ascontiguousarray(stack.data, dtype="<f4")

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<4i", header, 0, nx, ny, nz, 2)
    struct.pack_into("<3i", header, 28, nx, ny, nz)  # mx, my, mz
    cell = (nx * stack.pixel_size, ny * stack.pixel_size, nz * stack.pixel_size)
    struct.pack_into("<3f", header, 40, *cell)
    struct.pack_into("<3f", header, 52, 90.0, 90.0, 90.0)  # cell angles
    struct.pack_into("<3i", header, 64, 1, 2, 3)  # mapc, mapr, maps
    struct.pack_into(
        "<3f", header, 76, float(data.min()), float(data.max()), float(data.mean())
    )
    struct.pack_into("<i", header, 92, 0)  # nsymbt
    header[208:212] = b"MAP "
    header[212:216] = bytes((0x44, 0x44, 0x00, 0x00))

    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# Feature CSV
# ---------------------------------------------------------------------------

def _fmt9(v: float) -> str:
    """Format a finite value with 9 significant digits."""
    return format(float(v), ".9g")


def write_feature_csv(path, ids, features, labels=None) -> None:
    """Write the feature matrix; optional labels add a +/- column."""
    ids = np.asarray(ids, dtype=int)
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(FEATURE_NAMES):
        raise CsvFormatError(
            f"feature matrix must have {len(FEATURE_NAMES)} columns, got shape {X.shape}"
        )
    if ids.shape[0] != X.shape[0]:
        raise CsvFormatError("id count does not match feature row count")
    if not np.isfinite(X).all():
        raise CsvFormatError("feature matrix contains non-finite values")
    header = ["id", *FEATURE_NAMES]
    if labels is not None:
        labels = np.asarray(labels, dtype=int)
        if labels.shape[0] != ids.shape[0]:
            raise CsvFormatError("label count does not match id count")
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(ids.shape[0]):
            row = [str(int(ids[r]))] + [_fmt9(v) for v in X[r]]
            if labels is not None:
                if labels[r] not in _LABEL_TOKENS:
                    raise CsvFormatError(f"row {r}: label must be +1/-1, got {labels[r]}")
                row.append(_LABEL_TOKENS[int(labels[r])])
            w.writerow(row)


def read_feature_csv(path):
    """Read a feature table.

    Returns (ids, features, labels) where labels is None when the file has
    no label column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file: missing header row") from None
        expected = ["id", *FEATURE_NAMES]
        has_labels = header == expected + ["label"]
        if not has_labels and header != expected:
            if not header or header[0] != "id":
                raise CsvFormatError("header: first column must be 'id'")
            raise CsvFormatError(
                f"header: expected canonical feature columns {expected}, got {header}"
            )
        ncol = len(header)
        ids: list[int] = []
        rows: list[list[float]] = []
        labels: list[int] = []
        seen: set[int] = set()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != ncol:
                raise CsvFormatError(f"line {lineno}: expected {ncol} columns, got {len(row)}")
            try:
                image_id = int(row[0])
            except ValueError:
                raise CsvFormatError(f"line {lineno}: non-integer id {row[0]!r}") from None
            if image_id in seen:
                raise CsvFormatError(f"line {lineno}: duplicate id {image_id}")
            seen.add(image_id)
            try:
                values = [float(v) for v in row[1 : 1 + len(FEATURE_NAMES)]]
            except ValueError:
                raise CsvFormatError(f"line {lineno}: non-numeric feature cell") from None
            if has_labels:
                token = row[-1]
                if token not in _TOKEN_LABELS:
                    raise CsvFormatError(f"line {lineno}: unknown label token {token!r}")
                labels.append(_TOKEN_LABELS[token])
            ids.append(image_id)
            rows.append(values)
    X = np.asarray(rows, dtype=float).reshape(len(rows), len(FEATURE_NAMES))
    if rows and not np.isfinite(X).all():
        raise CsvFormatError("feature matrix contains non-finite values")
    return (
        np.asarray(ids, dtype=int),
        X,
        np.asarray(labels, dtype=int) if has_labels else None,
    )


# ---------------------------------------------------------------------------
# Label CSV
# ---------------------------------------------------------------------------

def write_label_csv(table: LabelTable, path, atomic: bool = False) -> None:
    """Write labeled rows as `id,label` with +/- tokens, sorted by id.

    With ``atomic=True`` the file is written to a temp path in the same
    directory and renamed into place, so readers never see a partial table.
    """
    target = os.fspath(path)
    tmp = target + ".tmp" if atomic else target
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"])
        for i in table.labeled_ids():
            w.writerow([str(i), _LABEL_TOKENS[table.labels[i]]])
    if atomic:
        os.replace(tmp, target)


def read_label_csv(path) -> LabelTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file: missing header row") from None
        if header != ["id", "label"]:
            raise CsvFormatError(f"header: expected ['id', 'label'], got {header}")
        labels: dict[int, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise CsvFormatError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                image_id = int(row[0])
            except ValueError:
                raise CsvFormatError(f"line {lineno}: non-integer id {row[0]!r}") from None
            if image_id in labels:
                raise CsvFormatError(f"line {lineno}: duplicate id {image_id}")
            if row[1] not in _TOKEN_LABELS:
                raise CsvFormatError(f"line {lineno}: unknown label token {row[1]!r}")
            labels[image_id] = _TOKEN_LABELS[row[1]]
    return LabelTable(labels=labels)
