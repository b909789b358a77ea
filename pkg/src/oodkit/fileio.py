"""On-disk formats: gradient records, model/summary/null containers, CSV, IDX.

Gradient record file (little-endian)::

    b"OODK" | u32 version | u32 P | u8 flags (bit 0: has_gradient)
    rows of: u64 id | f64 log_density | P x f64 gradient (when flagged)

Containers for models, training summaries and null eCDFs share one layout::

    4-byte magic | u32 version | u32 header length | UTF-8 JSON header | f64 payload

where the JSON header lists named array blocks (name, shape) stored in order.
"""

import csv
import gzip
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .calibration import EmpiricalCdf
from .errors import RecordFormatError, ValidationError
from .fisher import DiagonalFim
from .models import DiagonalGaussianModel, GmmModel, PpcaModel, check_data
from .statistics import GradientRecord, RecordSet, TrainingSummary, as_kind

RECORD_MAGIC = b"OODK"
RECORD_VERSION = 1
_RECORD_HEADER = struct.Struct("<4sIIB")
FLAG_HAS_GRADIENT = 0x01

MODEL_MAGIC = b"OODM"
SUMMARY_MAGIC = b"OODF"
NULL_MAGIC = b"OODN"
CONTAINER_VERSION = 1
_CONTAINER_HEADER = struct.Struct("<4sII")


# -- gradient records ----------------------------------------------------------

class RecordWriter:
    """Streaming writer; use as a context manager."""

    def __init__(self, path, n_params, has_gradient=True):
        self.path = Path(path)
        self.n_params = int(n_params) if has_gradient else 0
        self.has_gradient = has_gradient
        self._fh = open(self.path, "wb")
        flags = FLAG_HAS_GRADIENT if has_gradient else 0
        self._fh.write(_RECORD_HEADER.pack(RECORD_MAGIC, RECORD_VERSION, self.n_params, flags))
        self._row = np.dtype(_row_dtype(self.n_params, has_gradient))

    def write(self, records):
        if isinstance(records, GradientRecord):
            records = [records]
        if not isinstance(records, RecordSet):
            records = RecordSet.from_records(records)
        if records.has_gradient != self.has_gradient:
            raise ValidationError("record gradient presence does not match the file header")
        if self.has_gradient and records.n_params != self.n_params:
            raise ValidationError(f"gradient length {records.n_params} != header P {self.n_params}")
        rows = np.empty(len(records), dtype=self._row)
        rows["id"] = records.ids
        rows["log_density"] = records.log_density
        if self.has_gradient:
            rows["gradient"] = records.gradients
        self._fh.write(rows.tobytes())

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _row_dtype(n_params, has_gradient):
    fields = [("id", "<u8"), ("log_density", "<f8")]
    if has_gradient:
        fields.append(("gradient", "<f8", (n_params,)))
    return fields


def write_gradient_records(path, records, n_params=None):
    records = records if isinstance(records, RecordSet) else RecordSet.from_records(records)
    p = records.n_params if records.has_gradient else 0
    with RecordWriter(path, p if n_params is None else n_params, records.has_gradient) as w:
        w.write(records)


class RecordReader:
    """Streaming reader yielding :class:`RecordSet` chunks in constant memory."""

    def __init__(self, path, expected_params=None):
        self.path = Path(path)
        self._fh = open(self.path, "rb")
        head = self._fh.read(_RECORD_HEADER.size)
        if len(head) < _RECORD_HEADER.size:
            self._fh.close()
            raise RecordFormatError(f"{self.path}: truncated header ({len(head)} bytes)")
        magic, version, n_params, flags = _RECORD_HEADER.unpack(head)
        if magic != RECORD_MAGIC:
            self._fh.close()
            raise RecordFormatError(f"{self.path}: bad magic {magic!r}, expected {RECORD_MAGIC!r}")
        if version != RECORD_VERSION:
            self._fh.close()
            raise RecordFormatError(f"{self.path}: unsupported record format version {version}")
        self.has_gradient = bool(flags & FLAG_HAS_GRADIENT)
        self.n_params = n_params if self.has_gradient else None
        if self.has_gradient and expected_params is not None and n_params != expected_params:
            self._fh.close()
            raise RecordFormatError(
                f"{self.path}: layout length {n_params} does not match the active model ({expected_params})"
            )
        self._dtype = np.dtype(_row_dtype(n_params, self.has_gradient))
        size = self.path.stat().st_size - _RECORD_HEADER.size
        if size % self._dtype.itemsize:
            full = size // self._dtype.itemsize
            offset = _RECORD_HEADER.size + full * self._dtype.itemsize
            self._fh.close()
            raise RecordFormatError(
                f"{self.path}: truncated payload, partial row starting at byte offset {offset} "
                f"(row size {self._dtype.itemsize})"
            )
        self.n_rows = size // self._dtype.itemsize

    def chunks(self, chunk_rows=8192):
        offset = _RECORD_HEADER.size
        while True:
            buf = self._fh.read(chunk_rows * self._dtype.itemsize)
            if not buf:
                break
            if len(buf) % self._dtype.itemsize:
                raise RecordFormatError(f"{self.path}: truncated payload at byte offset {offset}")
            rows = np.frombuffer(buf, dtype=self._dtype)
            bad = ~np.isfinite(rows["log_density"])
            if self.has_gradient:
                bad |= ~np.all(np.isfinite(rows["gradient"]), axis=1)
            if np.any(bad):
                first = int(np.flatnonzero(bad)[0])
                raise RecordFormatError(
                    f"{self.path}: non-finite value in row at byte offset {offset + first * self._dtype.itemsize}"
                )
            grads = np.array(rows["gradient"]) if self.has_gradient else None
            yield RecordSet(np.array(rows["id"]), np.array(rows["log_density"]), grads)
            offset += len(buf)

    def __iter__(self):
        for chunk in self.chunks():
            yield from chunk

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_gradient_records(path, expected_params=None):
    """Read a whole record file into one :class:`RecordSet`."""
    with RecordReader(path, expected_params) as reader:
        parts = list(reader.chunks())
        has_gradient = reader.has_gradient
        n_params = reader.n_params
    if not parts:
        return RecordSet(np.empty(0, np.uint64), np.empty(0), np.empty((0, n_params)) if has_gradient else None)
    grads = np.vstack([p.gradients for p in parts]) if has_gradient else None
    return RecordSet(
        np.concatenate([p.ids for p in parts]), np.concatenate([p.log_density for p in parts]), grads
    )


# -- generic container ---------------------------------------------------------

def _write_container(path, magic, meta, arrays):
    blocks = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays]
    header = json.dumps({"meta": meta, "blocks": blocks}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CONTAINER_HEADER.pack(magic, CONTAINER_VERSION, len(header)))
        fh.write(header)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_container(path, magic):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _CONTAINER_HEADER.size:
        raise RecordFormatError(f"{path}: truncated header")
    got, version, hlen = _CONTAINER_HEADER.unpack_from(data)
    if got != magic:
        raise RecordFormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != CONTAINER_VERSION:
        raise RecordFormatError(f"{path}: unsupported container version {version}")
    start = _CONTAINER_HEADER.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RecordFormatError(f"{path}: corrupt header ({exc})") from None
    offset = start + hlen
    arrays = {}
    for block in header["blocks"]:
        count = int(np.prod(block["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise RecordFormatError(f"{path}: truncated payload at byte offset {offset}")
        arrays[block["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(block["shape"]).copy()
        offset = end
    if offset != len(data):
        raise RecordFormatError(f"{path}: {len(data) - offset} trailing bytes after payload")
    return header["meta"], arrays


def save_model(path, model):
    meta = {"family": model.family, "layout": [list(b) for b in model.layout]}
    if isinstance(model, DiagonalGaussianModel):
        meta["mean_only"] = model.mean_only
    if isinstance(model, PpcaModel):
        meta["q"] = model.q
        meta["degenerate"] = model.degenerate
    if isinstance(model, GmmModel):
        meta["k"] = model.k
    meta["dim"] = model.dim
    _write_container(path, MODEL_MAGIC, meta, [("theta", model.params.values)])


def load_model(path):
    meta, arrays = _read_container(path, MODEL_MAGIC)
    theta = arrays["theta"]
    d = meta["dim"]
    family = meta["family"]
    if family == "gaussian":
        template = DiagonalGaussianModel(np.zeros(d), np.zeros(d), mean_only=meta["mean_only"])
    elif family == "gmm":
        k = meta["k"]
        template = GmmModel(np.ones(k), np.zeros((k, d)), np.ones((k, d)))
    elif family == "ppca":
        template = PpcaModel(np.zeros(d), np.zeros((d, meta["q"])), 1.0)
    else:
        raise RecordFormatError(f"{path}: unknown model family {family!r}")
    if theta.size != len(template.params):
        raise RecordFormatError(f"{path}: parameter count {theta.size} does not match the layout")
    return template.with_params(theta)


def model_hash(model):
    h = hashlib.sha256(model.family.encode())
    h.update(np.ascontiguousarray(model.params.values, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def save_summary(path, summary):
    fim = summary.fim
    meta = {
        "mean_log_density": summary.mean_log_density,
        "n_train": summary.n_train,
        "epsilon": fim.epsilon,
        "xi": fim.xi,
        "mode": fim.mode,
    }
    _write_container(path, SUMMARY_MAGIC, meta, [("fim_diag", fim.diag), ("mean_gradient", summary.mean_gradient)])


def load_summary(path):
    meta, arrays = _read_container(path, SUMMARY_MAGIC)
    fim = DiagonalFim(arrays["fim_diag"], epsilon=meta["epsilon"], xi=meta["xi"], mode=meta["mode"])
    return TrainingSummary(meta["mean_log_density"], arrays["mean_gradient"], fim, meta["n_train"])


def save_null(path, cdf, kind, provenance=None):
    meta = {"kind": str(as_kind(kind)), "provenance": provenance or {}}
    _write_container(path, NULL_MAGIC, meta, [("sorted_values", cdf.sorted_values)])


def load_null(path):
    """Return ``(EmpiricalCdf, kind, provenance)``."""
    meta, arrays = _read_container(path, NULL_MAGIC)
    return EmpiricalCdf(arrays["sorted_values"]), as_kind(meta["kind"]), meta["provenance"]


# -- CSV -----------------------------------------------------------------------

def fmt(x):
    """Shortest round-tripping decimal form of a float."""
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_stat_records(path, ids, table):
    """Long-format statistic file: one ``id,kind,value`` row per pair."""
    rows = []
    for kind, values in table.items():
        for i, v in zip(ids, values):
            rows.append((int(i), str(as_kind(kind)), float(v)))
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(path, ["id", "kind", "value"], rows)


def read_stat_records(path):
    """Parse an ``id,kind,value`` CSV (or JSON-lines) into ``(ids, {kind: values})``."""
    path = Path(path)
    if path.suffix in (".jsonl", ".ndjson"):
        with open(path, encoding="utf-8") as fh:
            raw = [json.loads(line) for line in fh if line.strip()]
    else:
        raw = read_csv(path)
    by_kind = {}
    for n, row in enumerate(raw):
        try:
            kind = as_kind(row["kind"])
            value = float(row["value"])
            rid = int(row["id"])
        except KeyError as exc:
            raise RecordFormatError(f"{path}: row {n + 1} lacks column {exc}") from None
        except ValueError as exc:
            raise ValidationError(f"{path}: row {n + 1}: {exc}") from None
        if not math.isfinite(value):
            raise ValidationError(f"{path}: row {n + 1}: non-finite value")
        by_kind.setdefault(kind, {})[rid] = value
    if not by_kind:
        raise ValidationError(f"{path}: no statistic rows")
    ids = sorted(set.intersection(*(set(v) for v in by_kind.values())))
    table = {k: np.array([v[i] for i in ids]) for k, v in by_kind.items()}
    return np.array(ids, dtype=np.uint64), table


# -- datasets --------------------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def load_idx_images(path):
    """Load an IDX image file as an (N, H*W) matrix scaled to [0, 1].

    Reads ``.gz`` transparently. Unsigned-byte images are divided by 255.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0 or data[2] not in _IDX_TYPES:
        raise RecordFormatError(f"{path}: bad IDX magic {data[:4]!r}")
    ndim = data[3]
    if ndim < 1 or len(data) < 4 + 4 * ndim:
        raise RecordFormatError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    dtype = np.dtype(_IDX_TYPES[data[2]])
    payload = data[4 + 4 * ndim:]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise RecordFormatError(
            f"{path}: IDX header declares {shape} ({expected} bytes) but payload has {len(payload)} bytes"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape[0], -1).astype(np.float64)
    if data[2] == 0x08:
        arr /= 255.0
    return arr


def load_matrix(path):
    """Load a data matrix from ``.npy``, ``.csv``/``.txt`` or IDX files."""
    path = Path(path)
    name = path.name
    if name.endswith(".npy"):
        arr = np.load(path)
    elif name.endswith((".csv", ".txt")):
        arr = np.loadtxt(path, delimiter="," if name.endswith(".csv") else None, ndmin=2)
    elif "idx" in name or name.endswith(".gz"):
        arr = load_idx_images(path)
    else:
        raise ValidationError(f"{path}: unrecognised data file type")
    return check_data(arr)
