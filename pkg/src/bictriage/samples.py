"""Sample data model and the daily JSONL file format.

A daily file holds one JSON record per line::

    {"id": "<string>", "label": 0 | 1 | null, "bics": [<int>, ...]}

``bics`` lists the triggered indicator indices in strictly ascending order.
A data directory contains ``YYYY-MM-DD.jsonl`` files plus ``meta.json`` with
``{"m_count": <int>}``.
"""

from __future__ import annotations

import datetime as dt
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

MALICIOUS = 1
BENIGN = 0

DAY_FILE_RE = re.compile(r"^(\d{4}-\d{2}-\d{2})\.jsonl$")
META_FILE = "meta.json"


class SampleFormatError(ValueError):
    """Raised for any malformed or invalid daily-file content."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


@dataclass(frozen=True)
class FeatureSpace:
    m_count: int

    def __post_init__(self) -> None:
        if isinstance(self.m_count, bool) or not isinstance(self.m_count, int) or self.m_count < 1:
            raise ValueError(f"m_count must be a positive integer, got {self.m_count!r}")


@dataclass(frozen=True)
class LabeledSample:
    id: str
    bics: tuple[int, ...] = ()
    label: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("sample id must be a non-empty string")
        if self.label not in (None, 0, 1) or isinstance(self.label, bool):
            raise ValueError(f"label must be 0, 1 or None, got {self.label!r}")
        bics = tuple(self.bics)
        object.__setattr__(self, "bics", bics)
        for a, b in zip(bics, bics[1:]):
            if b <= a:
                raise ValueError("non-ascending BIC list")

    @property
    def labeled(self) -> bool:
        return self.label is not None

    def check(self, space: FeatureSpace) -> None:
        if self.bics and (self.bics[0] < 0 or self.bics[-1] >= space.m_count):
            raise ValueError(f"BIC index out of range [0, {space.m_count})")


@dataclass(frozen=True)
class DailyBatch:
    day: dt.date | None
    samples: tuple[LabeledSample, ...]

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        seen: set[str] = set()
        for s in samples:
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def labeled(self) -> list[LabeledSample]:
        return [s for s in self.samples if s.label is not None]


def _parse_record(line: bytes, lineno: int, space: FeatureSpace, source: str | None) -> LabeledSample:
    def fail(msg: str) -> SampleFormatError:
        return SampleFormatError(msg, lineno, source)

    try:
        rec = json.loads(line)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise fail(f"malformed record: {exc}") from None
    if not isinstance(rec, dict):
        raise fail("malformed record: expected a JSON object")
    extra = set(rec) - {"id", "label", "bics"}
    if extra:
        raise fail(f"malformed record: unexpected keys {sorted(extra)}")
    if "id" not in rec or "bics" not in rec:
        raise fail("malformed record: missing 'id' or 'bics'")

    sid, label, bics = rec["id"], rec.get("label"), rec["bics"]
    if not isinstance(sid, str) or not sid:
        raise fail("malformed record: 'id' must be a non-empty string")
    if label is not None and (isinstance(label, bool) or label not in (0, 1)):
        raise fail("malformed record: 'label' must be 0, 1 or null")
    if not isinstance(bics, list) or any(isinstance(b, bool) or not isinstance(b, int) for b in bics):
        raise fail("malformed record: 'bics' must be a list of integers")
    for a, b in zip(bics, bics[1:]):
        if b <= a:
            raise fail("non-ascending BIC list")
    if bics and (bics[0] < 0 or bics[-1] >= space.m_count):
        raise fail(f"BIC index out of range [0, {space.m_count})")
    return LabeledSample(sid, tuple(bics), label)


def parse_daily_file(
    stream: bytes | BinaryIO | Iterable[bytes],
    feature_space: FeatureSpace,
    day: dt.date | None = None,
    source: str | None = None,
) -> DailyBatch:
    """Parse a daily JSONL stream, failing on the first invalid record.

    Record order is preserved. Line numbers in errors are 1-based.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    samples = []
    seen: set[str] = set()
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, str):
            line = line.encode("utf-8")
        sample = _parse_record(line, lineno, feature_space, source)
        if sample.id in seen:
            raise SampleFormatError(f"duplicate id {sample.id!r}", lineno, source)
        seen.add(sample.id)
        samples.append(sample)
    return DailyBatch(day, tuple(samples))


def encode_sample(sample: LabeledSample) -> bytes:
    rec = {"id": sample.id, "label": sample.label, "bics": list(sample.bics)}
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"


def write_daily_file(batch: DailyBatch) -> bytes:
    """Serialize a batch to canonical JSONL bytes, one line per sample."""
    return b"".join(encode_sample(s) for s in batch.samples)


def dense_vector(sample: LabeledSample, feature_space: FeatureSpace) -> np.ndarray:
    x = np.zeros(feature_space.m_count, dtype=np.uint8)
    x[list(sample.bics)] = 1
    return x


# -- directories -------------------------------------------------------------


def day_from_filename(path: str | Path) -> dt.date:
    m = DAY_FILE_RE.match(Path(path).name)
    if not m:
        raise SampleFormatError("file name is not YYYY-MM-DD.jsonl", source=str(path))
    try:
        return dt.date.fromisoformat(m.group(1))
    except ValueError as exc:
        raise SampleFormatError(f"invalid date: {exc}", source=str(path)) from None


def read_meta(data_dir: str | Path) -> FeatureSpace:
    path = Path(data_dir) / META_FILE
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
        return FeatureSpace(meta["m_count"])
    except FileNotFoundError:
        raise SampleFormatError("missing meta.json", source=str(path)) from None
    except (ValueError, KeyError, TypeError) as exc:
        raise SampleFormatError(f"invalid meta.json: {exc}", source=str(path)) from None


def write_meta(data_dir: str | Path, feature_space: FeatureSpace) -> None:
    path = Path(data_dir) / META_FILE
    path.write_text(json.dumps({"m_count": feature_space.m_count}) + "\n", encoding="utf-8")


def list_day_files(data_dir: str | Path) -> list[Path]:
    """Daily files in chronological (= lexicographic) order."""
    return sorted(p for p in Path(data_dir).iterdir() if DAY_FILE_RE.match(p.name))


def read_daily_file(path: str | Path, feature_space: FeatureSpace) -> DailyBatch:
    path = Path(path)
    day = day_from_filename(path)
    try:
        with path.open("rb") as fh:
            return parse_daily_file(fh, feature_space, day=day, source=str(path))
    except OSError as exc:
        raise SampleFormatError(f"cannot read file: {exc}", source=str(path)) from None


def save_daily_file(data_dir: str | Path, batch: DailyBatch) -> Path:
    if batch.day is None:
        raise ValueError("batch has no day")
    path = Path(data_dir) / f"{batch.day.isoformat()}.jsonl"
    path.write_bytes(write_daily_file(batch))
    return path


# -- sparse design matrices ----------------------------------------------------


@dataclass(frozen=True)
class SparseBatch:
    """CSR view of a list of samples: row n owns indices[indptr[n]:indptr[n+1]]."""

    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray  # -1 marks unlabeled
    m_count: int

    def __len__(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row(self, n: int) -> np.ndarray:
        return self.indices[self.indptr[n] : self.indptr[n + 1]]

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], m_count: int) -> "SparseBatch":
        lengths = np.fromiter((len(s.bics) for s in samples), dtype=np.int64, count=len(samples))
        indptr = np.zeros(len(samples) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        indices = np.fromiter(
            (b for s in samples for b in s.bics), dtype=np.int64, count=int(indptr[-1])
        )
        labels = np.fromiter(
            (-1 if s.label is None else s.label for s in samples), dtype=np.int8, count=len(samples)
        )
        if indices.size and (indices.min() < 0 or indices.max() >= m_count):
            raise ValueError(f"BIC index out of range [0, {m_count})")
        return cls(indptr, indices, labels, m_count)

    @classmethod
    def concat(cls, parts: Sequence["SparseBatch"]) -> "SparseBatch":
        if not parts:
            raise ValueError("nothing to concatenate")
        m_count = parts[0].m_count
        offsets = np.cumsum([0] + [p.indptr[-1] for p in parts[:-1]])
        indptr = np.concatenate([[0]] + [p.indptr[1:] + off for p, off in zip(parts, offsets)])
        return cls(
            indptr.astype(np.int64),
            np.concatenate([p.indices for p in parts]),
            np.concatenate([p.labels for p in parts]),
            m_count,
        )

    def select(self, mask: np.ndarray) -> "SparseBatch":
        rows = np.flatnonzero(mask)
        lengths = self.nnz[rows]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        keep = np.asarray(mask, dtype=bool)[self.row_ids()]
        return SparseBatch(indptr, self.indices[keep], self.labels[rows], self.m_count)

    def row_ids(self) -> np.ndarray:
        """Row number of every stored index."""
        return np.repeat(np.arange(len(self), dtype=np.int64), self.nnz)
