"""Prototype storage, CSV ingestion, binary persistence and exact KNN queries."""
import csv
import io
import struct
import zlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._knn import NeighborIndex, sq_dist_rows
from .errors import (
    ContractViolation,
    EmptyInputError,
    EmptySetError,
    FormatError,
    LoadError,
)

METRICS = {"l2": "Euclidean distance"}
MAGIC = b"PDB1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQI")  # magic, version, M, J


@dataclass(frozen=True)
class Prototype:
    id: int
    features: np.ndarray
    class_code: int


@dataclass(frozen=True)
class NeighborResult:
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.ids)


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


class PrototypeDatabase:
    """Immutable, ordered collection of labelled feature vectors.

    Arrays are stored at double precision and flagged read-only. Row order is
    insertion order; ``ids`` need not be contiguous (sparsified subsets keep
    their parent's ids).
    """

    def __init__(self, features, classes, ids=None, metric="l2"):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ContractViolation("features must be a 2-D array")
        m, j = features.shape
        if j < 1:
            raise ContractViolation("dimension J must be >= 1")
        if ids is None:
            ids = np.arange(m)
        ids = np.asarray(ids)
        classes = np.asarray(classes)
        if ids.shape != (m,) or classes.shape != (m,):
            raise ContractViolation("ids and classes must have one entry per prototype")
        if m and (ids.min() < 0 or classes.min() < 0):
            raise ContractViolation("ids and class codes must be non-negative")
        if len(np.unique(ids)) != m:
            raise ContractViolation("prototype ids must be unique")
        if not np.all(np.isfinite(features)):
            raise ContractViolation("features must be finite")
        if metric not in METRICS:
            raise ContractViolation(f"unknown metric {metric!r}; known: {sorted(METRICS)}")
        self.features = _readonly(features, np.float64)
        self.classes = _readonly(classes, np.int64)
        self.ids = _readonly(ids, np.int64)
        self.metric = metric

    def __len__(self):
        return len(self.ids)

    def __repr__(self):
        return (f"PrototypeDatabase(M={len(self)}, J={self.dimension}, "
                f"classes={self.class_registry.tolist()}, metric={self.metric!r})")

    def __eq__(self, other):
        if not isinstance(other, PrototypeDatabase):
            return NotImplemented
        return (self.metric == other.metric
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.classes, other.classes)
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes())

    __hash__ = None

    @property
    def dimension(self):
        return self.features.shape[1]

    @cached_property
    def class_registry(self):
        return np.unique(self.classes)

    @cached_property
    def _row_of(self):
        return {int(i): r for r, i in enumerate(self.ids)}

    def rows(self, ids):
        """Row positions of the given ids."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if len(self) and np.array_equal(self.ids, np.arange(len(self))):
            if len(ids) and (ids.min() < 0 or ids.max() >= len(self)):
                raise ContractViolation("unknown prototype id")
            return ids
        try:
            return np.array([self._row_of[int(i)] for i in ids], dtype=np.int64)
        except KeyError as e:
            raise ContractViolation(f"unknown prototype id {e.args[0]}") from None

    def prototype(self, id):
        r = self.rows([id])[0]
        return Prototype(int(self.ids[r]), self.features[r], int(self.classes[r]))

    def __iter__(self):
        for r in range(len(self)):
            yield Prototype(int(self.ids[r]), self.features[r], int(self.classes[r]))

    def subset(self, ids):
        """New database holding ``ids`` in the parent's row order."""
        rows = np.sort(self.rows(ids))
        return PrototypeDatabase(self.features[rows], self.classes[rows], self.ids[rows], self.metric)

    def index(self, n_jobs=1):
        return NeighborIndex(self.features, self.ids, n_jobs=n_jobs)


def distance(a, b):
    """Euclidean distance between two prototypes or feature vectors."""
    fa = a.features if isinstance(a, Prototype) else a
    fb = b.features if isinstance(b, Prototype) else b
    fa = np.asarray(fa, dtype=np.float64).reshape(1, -1)
    fb = np.asarray(fb, dtype=np.float64).reshape(1, -1)
    if fa.shape != fb.shape:
        raise ContractViolation(f"dimension mismatch: {fa.shape[1]} vs {fb.shape[1]}")
    return float(np.sqrt(sq_dist_rows(fa, fb))[0])


def knn_query(db, query, k, subset=None, exclude_ids=(), n_jobs=1):
    """Exact K nearest members of ``subset`` (default: all) minus ``exclude_ids``.

    Ordered by (distance, id). Fewer than ``k`` entries come back only when the
    searchable set is smaller than ``k``.
    """
    if k < 1:
        raise ContractViolation("K must be a positive integer")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if len(query) != db.dimension:
        raise ContractViolation(f"query dimension {len(query)} != {db.dimension}")
    rows = np.arange(len(db)) if subset is None else np.unique(db.rows(subset))
    if len(exclude_ids):
        rows = rows[~np.isin(db.ids[rows], np.asarray(list(exclude_ids), dtype=np.int64))]
    if len(rows) == 0:
        raise EmptySetError("no prototypes left to search")
    index = NeighborIndex(db.features[rows], db.ids[rows], n_jobs=n_jobs)
    pos, dist = index.query(query, k)
    valid = pos[0] >= 0
    return NeighborResult(db.ids[rows][pos[0][valid]], dist[0][valid])


def ingest(source, metric="l2"):
    """Stream a prototype CSV (``id,class,f0,...``) into a database.

    ``source`` is a path or an open text stream. Rows get ids by file order
    starting at 0; the id column must be an integer but is not otherwise
    used. Lines starting with ``#`` are comments.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return ingest(fh, metric)
    if metric not in METRICS:
        raise ContractViolation(f"unknown metric {metric!r}")

    reader = csv.reader(source)
    header = None
    for row in reader:
        if row and not row[0].lstrip().startswith("#"):
            header = [h.strip() for h in row]
            break
    if header is None:
        raise EmptyInputError("input stream is empty")
    j = len(header) - 2
    if j < 1 or header[:2] != ["id", "class"] or header[2:] != [f"f{i}" for i in range(j)]:
        raise FormatError("header must be id,class,f0,...,f{J-1}", line=reader.line_num)

    block = 65536
    feats, classes = [], []
    fbuf = np.empty((block, j))
    cbuf = np.empty(block, dtype=np.int64)
    n = 0
    for row in reader:
        if not row or row[0].lstrip().startswith("#"):
            continue
        line = reader.line_num
        if len(row) != j + 2:
            raise FormatError(f"expected {j + 2} fields, got {len(row)}", line=line)
        try:
            int(row[0])
            code = int(row[1])
        except ValueError:
            raise FormatError("id and class must be integers", line=line) from None
        if code < 0:
            raise FormatError("class code must be non-negative", line=line)
        try:
            fbuf[n] = np.array(row[2:], dtype=np.float64)
        except ValueError:
            raise FormatError("non-numeric feature value", line=line) from None
        if not np.all(np.isfinite(fbuf[n])):
            raise FormatError("non-finite feature value", line=line)
        cbuf[n] = code
        n += 1
        if n == block:
            feats.append(fbuf)
            classes.append(cbuf)
            fbuf = np.empty((block, j))
            cbuf = np.empty(block, dtype=np.int64)
            n = 0
    feats.append(fbuf[:n])
    classes.append(cbuf[:n])
    features = np.concatenate(feats)
    if len(features) == 0:
        raise EmptyInputError("input has a header but no prototype rows")
    return PrototypeDatabase(features, np.concatenate(classes), metric=metric)


def write_csv(db, destination, comment=None):
    """Write ``db`` in the prototype CSV schema with round-trip float precision."""
    if isinstance(destination, (str, bytes)) or hasattr(destination, "__fspath__"):
        with open(destination, "w", newline="", encoding="utf-8") as fh:
            return write_csv(db, fh, comment)
    if comment:
        destination.write(f"# {comment}\n")
    destination.write(",".join(["id", "class"] + [f"f{i}" for i in range(db.dimension)]) + "\n")
    buf = io.StringIO()
    for i, c, f in zip(db.ids.tolist(), db.classes.tolist(), db.features.tolist()):
        buf.write(f"{i},{c}," + ",".join(map(repr, f)) + "\n")
        if buf.tell() > 1 << 20:
            destination.write(buf.getvalue())
            buf = io.StringIO()
    destination.write(buf.getvalue())


def save(db, destination):
    """Binary little-endian dump: header, metric, ids, classes, features, CRC32."""
    metric = db.metric.encode("utf-8")
    body = b"".join([
        _HEADER.pack(MAGIC, FORMAT_VERSION, len(db), db.dimension),
        struct.pack("<H", len(metric)),
        metric,
        db.ids.astype("<i8").tobytes(),
        db.classes.astype("<i8").tobytes(),
        db.features.astype("<f8").tobytes(),
    ])
    payload = body + struct.pack("<I", zlib.crc32(body))
    if hasattr(destination, "write"):
        destination.write(payload)
    else:
        with open(destination, "wb") as fh:
            fh.write(payload)


def load(source):
    if hasattr(source, "read"):
        data = source.read()
    else:
        try:
            with open(source, "rb") as fh:
                data = fh.read()
        except OSError as e:
            raise LoadError(f"cannot read {source}: {e}") from e
    if len(data) < _HEADER.size + 6:
        raise LoadError("file too short for a PDB1 header")
    magic, version, m, j = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise LoadError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported format version {version}")
    off = _HEADER.size
    (mlen,) = struct.unpack_from("<H", data, off)
    off += 2
    expected = off + mlen + 16 * m + 8 * m * j + 4
    if len(data) != expected:
        raise LoadError(f"truncated or padded file: {len(data)} bytes, expected {expected}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise LoadError("checksum mismatch")
    metric = data[off:off + mlen].decode("utf-8")
    off += mlen
    ids = np.frombuffer(data, "<i8", m, off)
    off += 8 * m
    classes = np.frombuffer(data, "<i8", m, off)
    off += 8 * m
    features = np.frombuffer(data, "<f8", m * j, off).reshape(m, j)
    try:
        return PrototypeDatabase(features, classes, ids, metric)
    except ContractViolation as e:
        raise LoadError(str(e)) from e


def read_database(path, metric="l2"):
    """Load a ``.pdb`` binary or ingest a CSV, chosen by file content."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return load(path)
    return ingest(path, metric)
