"""Result serialization and sample-file formats.

Binary sample files are little-endian: a 16-byte header (8-byte magic, then
``m`` and ``K`` as uint32) followed by ``K`` rows of ``m`` interleaved
``(re, im)`` float64 pairs. The text alternative is CSV with ``re,im``
column pairs per dimension and a header row.
"""

import csv
import io
import json
import math
import struct

import numpy as np

from ..errors import ScatterError

MAGIC = b"RSCATTR1"
HEADER = struct.Struct("<8sII")
COLUMNS = ("grid", "quantity", "empirical", "stderr", "theory")


class InputFormatError(ScatterError, ValueError):
    """A sample file is malformed."""


def _fmt(x):
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if x == int(x) and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def result_to_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in result.rows:
        w.writerow([_fmt(r.grid), r.quantity, _fmt(r.empirical), _fmt(r.stderr), _fmt(r.theory)])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def result_to_json(result):
    payload = {
        "experiment": result.experiment,
        "metadata": result.metadata,
        "columns": list(COLUMNS),
        "rows": [[r.grid, r.quantity, r.empirical, r.stderr, r.theory] for r in result.rows],
    }
    return json.dumps(_json_safe(payload), indent=1, sort_keys=True) + "\n"


def render_result(result, fmt):
    return result_to_json(result) if fmt == "json" else result_to_csv(result)


def write_result(result, path, fmt):
    """Write ``result`` to ``path``; volatile data (wall time) goes to a
    ``<path>.meta.json`` sidecar so the main file is reproducible byte for byte."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_result(result, fmt))
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump({"wall_time_s": result.wall_time}, fh)
        fh.write("\n")


def read_result_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("grid", "empirical", "stderr", "theory"):
            r[k] = float(r[k])
    return rows


def write_samples_binary(path, Z):
    Z = np.asarray(Z, dtype=complex)
    K, m = Z.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, m, K))
        fh.write(np.ascontiguousarray(Z).astype("<c16").tobytes())


def read_samples_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise InputFormatError("file too short for header")
    magic, m, K = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InputFormatError("bad magic; not a sample file")
    body = raw[HEADER.size:]
    if len(body) != 16 * m * K:
        raise InputFormatError(f"expected {16 * m * K} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<c16").reshape(K, m).astype(complex)


def write_samples_csv(path, Z):
    Z = np.asarray(Z, dtype=complex)
    K, m = Z.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{p}{i}" for i in range(m) for p in ("re", "im")])
        for row in Z:
            w.writerow([repr(float(v)) for c in row for v in (c.real, c.imag)])


def read_samples_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [r for r in csv.reader(fh) if r]
    if lines and not _is_number(lines[0][0]):
        lines = lines[1:]
    if not lines:
        raise InputFormatError("no samples found")
    widths = {len(r) for r in lines}
    if len(widths) != 1 or widths.pop() % 2:
        raise InputFormatError("every row needs the same even number of columns (re,im pairs)")
    try:
        arr = np.array(lines, dtype=float)
    except ValueError as exc:
        raise InputFormatError(str(exc)) from exc
    return arr[:, 0::2] + 1j * arr[:, 1::2]


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_samples(path):
    """Read a sample file, dispatching on content (binary magic) or extension."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == MAGIC:
        return read_samples_binary(path)
    if str(path).lower().endswith((".csv", ".txt")):
        return read_samples_csv(path)
    raise InputFormatError("unrecognized sample file (expected binary with magic or .csv)")


def write_samples(path, Z, fmt=None):
    fmt = fmt or ("csv" if str(path).lower().endswith(".csv") else "bin")
    if fmt == "csv":
        write_samples_csv(path, Z)
    else:
        write_samples_binary(path, Z)
