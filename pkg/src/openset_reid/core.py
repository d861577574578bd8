"""Domain types, manifest ingestion and the binary feature cache."""

from __future__ import annotations

import csv
import enum
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateKey,
    MalformedRow,
    MissingFile,
    NonPositiveId,
    TruncatedFile,
    VersionUnsupported,
)

MANIFEST_HEADER = ("person_id", "camera_id", "session", "frame", "path")

CACHE_MAGIC = b"OPRD"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")
_CACHE_INDEX = struct.Struct("<IIBI")


class Session(enum.IntEnum):
    TRAIN = 0
    TEST = 1

    @classmethod
    def parse(cls, text: str) -> "Session":
        try:
            return {"train": cls.TRAIN, "test": cls.TEST}[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown session {text!r}") from None

    def __str__(self) -> str:
        return "train" if self is Session.TRAIN else "test"


RecordKey = tuple[int, int, Session, int]


@dataclass(frozen=True)
class ImageRecord:
    """One labeled pedestrian crop.

    ``source`` is either a path string or an in-memory image; it does not take
    part in equality, which is defined by the record key alone.
    """

    person_id: int
    camera_id: int
    session: Session
    frame: int
    source: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.person_id < 1 or self.camera_id < 1:
            raise ValueError(f"ids must be positive: {self.key}")
        if self.frame < 0:
            raise ValueError(f"frame must be non-negative: {self.key}")
        object.__setattr__(self, "session", Session(self.session))

    @property
    def key(self) -> RecordKey:
        return (self.person_id, self.camera_id, self.session, self.frame)

    def key_json(self) -> list:
        return [self.person_id, self.camera_id, str(self.session), self.frame]


def same_identity(g: ImageRecord, p: ImageRecord) -> bool:
    return g.person_id == p.person_id


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of records with an optional aligned feature table.

    Row ``i`` of ``features`` describes ``records[i]``.
    """

    records: tuple[ImageRecord, ...]
    features: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[RecordKey] = set()
        for r in self.records:
            if r.key in seen:
                raise DuplicateKey(f"duplicate record {r.key}")
            seen.add(r.key)
        if self.features is not None:
            feats = np.asarray(self.features)
            if feats.ndim != 2 or feats.shape[0] != len(self.records):
                raise DimensionMismatch(
                    f"feature table {feats.shape} does not match {len(self.records)} records"
                )
            feats.setflags(write=False)
            object.__setattr__(self, "features", feats)
        persons = np.array([r.person_id for r in self.records], dtype=np.int64)
        cameras = np.array([r.camera_id for r in self.records], dtype=np.int64)
        sessions = np.array([int(r.session) for r in self.records], dtype=np.int64)
        for a in (persons, cameras, sessions):
            a.setflags(write=False)
        object.__setattr__(self, "persons", persons)
        object.__setattr__(self, "cameras", cameras)
        object.__setattr__(self, "sessions", sessions)

    persons: np.ndarray = field(init=False, repr=False)
    cameras: np.ndarray = field(init=False, repr=False)
    sessions: np.ndarray = field(init=False, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.records != other.records:
            return False
        if (self.features is None) != (other.features is None):
            return False
        if self.features is None:
            return True
        return (
            self.features.dtype == other.features.dtype
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )

    @property
    def dim(self) -> int | None:
        return None if self.features is None else int(self.features.shape[1])

    def select(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        feats = None if self.features is None else self.features[idx]
        return Dataset(tuple(self.records[i] for i in idx), feats)

    def session_indices(self, session: Session) -> np.ndarray:
        return np.flatnonzero(self.sessions == int(session))

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(self.records, features)


# -- manifest ------------------------------------------------------------------


def _parse_int(text: str, line: int, name: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise MalformedRow(line, f"{name} is not an integer: {text!r}") from None


def load_manifest(path: str | Path) -> Dataset:
    """Read a manifest CSV into a :class:`Dataset` (no features attached)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    records: list[ImageRecord] = []
    seen: set[RecordKey] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise MalformedRow(1, f"header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise MalformedRow(line, f"expected 5 columns, got {len(row)}")
            person = _parse_int(row[0], line, "person_id")
            camera = _parse_int(row[1], line, "camera_id")
            frame = _parse_int(row[3], line, "frame")
            if person < 1 or camera < 1:
                raise NonPositiveId(line, "person_id and camera_id must be >= 1")
            if frame < 0:
                raise MalformedRow(line, "frame must be non-negative")
            try:
                session = Session.parse(row[2])
            except ValueError as exc:
                raise MalformedRow(line, str(exc)) from None
            rec = ImageRecord(person, camera, session, frame, row[4])
            if rec.key in seen:
                raise DuplicateKey(f"line {line}: duplicate record {rec.key}")
            seen.add(rec.key)
            records.append(rec)
    return Dataset(tuple(records))


def save_manifest(dataset: Dataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in dataset.records:
            src = r.source if isinstance(r.source, (str, Path)) else ""
            writer.writerow([r.person_id, r.camera_id, str(r.session), r.frame, str(src)])


_RELEASE_NAME = re.compile(r"^(\d+)-(\d+)-(\d+)-(\d+)$")


def manifest_from_directory(
    root: str | Path,
    session_codes: dict[int, Session] | None = None,
    suffixes: Iterable[str] = (".png", ".jpg", ".jpeg", ".bmp"),
) -> Dataset:
    """Build records from files named ``PPPP-CC-SS-FFFFF.ext``.

    Fields are person, camera, session code, frame. ``session_codes`` maps the
    numeric session code to a :class:`Session`; the default treats code 1 as
    the test session and code 2 as the training session.
    """
    codes = session_codes or {1: Session.TEST, 2: Session.TRAIN}
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(str(root))
    suffixes = {s.lower() for s in suffixes}
    records = []
    for p in sorted(root.rglob("*")):
        if p.suffix.lower() not in suffixes:
            continue
        m = _RELEASE_NAME.match(p.stem)
        if not m:
            continue
        person, camera, code, frame = (int(g) for g in m.groups())
        if code not in codes:
            raise ValueError(f"{p.name}: unknown session code {code}")
        records.append(ImageRecord(person, camera, codes[code], frame, str(p.relative_to(root))))
    return Dataset(tuple(records))


# -- feature cache -------------------------------------------------------------


def write_feature_cache(dataset: Dataset, path: str | Path) -> None:
    """Write records and their feature table as little-endian float32."""
    if dataset.features is None:
        raise DimensionMismatch("dataset has no feature table")
    feats = np.ascontiguousarray(dataset.features, dtype="<f4")
    n, d = feats.shape
    with Path(path).open("wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, d))
        fh.write(feats.tobytes())
        for r in dataset.records:
            fh.write(_CACHE_INDEX.pack(r.person_id, r.camera_id, int(r.session), r.frame))


def cache_size(n: int, d: int) -> int:
    """Byte size of a cache holding ``n`` rows of ``d`` features."""
    return _CACHE_HEADER.size + 4 * n * d + _CACHE_INDEX.size * n


def read_feature_cache(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    blob = path.read_bytes()
    if len(blob) < _CACHE_HEADER.size:
        raise TruncatedFile(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, version, n, d = _CACHE_HEADER.unpack_from(blob, 0)
    if magic != CACHE_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}")
    if version != CACHE_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    if len(blob) < cache_size(n, d):
        raise TruncatedFile(f"{path}: expected {cache_size(n, d)} bytes, got {len(blob)}")
    off = _CACHE_HEADER.size
    feats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=off).reshape(n, d).copy()
    off += 4 * n * d
    records = []
    for _ in range(n):
        person, camera, session, frame = _CACHE_INDEX.unpack_from(blob, off)
        off += _CACHE_INDEX.size
        records.append(ImageRecord(person, camera, Session(session), frame))
    return Dataset(tuple(records), feats)
