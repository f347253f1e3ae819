"""Instance files and report serialization.

Matrices travel in coordinate Matrix Market form with the symmetric kind and
the lower triangle stored; vectors are plain text, one value per line, with
an optional array-format header.  Reports are JSON documents with a fixed
schema version; floats round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatchError, MatrixFormatError, ValidationError
from .problem import ProblemInstance, validate
from .recovery import GapCertificate, SolveReport

SCHEMA_VERSION = "1"

_MM_HEADER = "%%MatrixMarket"


def read_matrix(path) -> sp.csr_array:
    """Read a symmetric coordinate Matrix Market file into full CSR form.

    Enforces: a well-formed header declaring coordinate/real/symmetric, a
    square size line, 1-based indices in range, and entries on or below the
    diagonal.  Violations raise MatrixFormatError with the line number.
    """
    with open(path, "r") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixFormatError("empty file", line=1)
    header = lines[0].strip().split()
    if not header or header[0] != _MM_HEADER:
        raise MatrixFormatError("missing MatrixMarket header", line=1)
    fields = [tok.lower() for tok in header[1:]]
    if len(fields) != 4 or fields[0] != "matrix":
        raise MatrixFormatError("header must declare a matrix object", line=1)
    if fields[1] != "coordinate":
        raise MatrixFormatError("coordinate format required", line=1)
    if fields[2] != "real":
        raise MatrixFormatError("real field required", line=1)
    if fields[3] != "symmetric":
        raise MatrixFormatError("symmetric kind required", line=1)

    idx = 1
    while idx < len(lines) and (lines[idx].lstrip().startswith("%")
                                or not lines[idx].strip()):
        idx += 1
    if idx >= len(lines):
        raise MatrixFormatError("missing size line", line=len(lines))
    size_tokens = lines[idx].split()
    try:
        rows, cols, nnz = (int(tok) for tok in size_tokens)
    except ValueError:
        raise MatrixFormatError("size line must hold three integers",
                                line=idx + 1) from None
    if rows != cols:
        raise MatrixFormatError(f"matrix must be square, got {rows}x{cols}",
                                line=idx + 1)
    if rows < 1 or nnz < 0:
        raise MatrixFormatError("nonpositive dimensions", line=idx + 1)

    ri = np.empty(nnz, dtype=np.int64)
    ci = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    count = 0
    for lineno in range(idx + 1, len(lines)):
        raw = lines[lineno].strip()
        if not raw or raw.startswith("%"):
            continue
        if count >= nnz:
            raise MatrixFormatError("more entries than declared",
                                    line=lineno + 1)
        tokens = raw.split()
        try:
            i, j, v = int(tokens[0]), int(tokens[1]), float(tokens[2])
        except (ValueError, IndexError):
            raise MatrixFormatError("entry must be 'i j value'",
                                    line=lineno + 1) from None
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise MatrixFormatError(
                f"index ({i}, {j}) outside declared order {rows}",
                line=lineno + 1)
        if j > i:
            raise MatrixFormatError(
                "symmetric storage keeps the lower triangle; entry above "
                "the diagonal", line=lineno + 1)
        ri[count] = i - 1
        ci[count] = j - 1
        vals[count] = v
        count += 1
    if count != nnz:
        raise MatrixFormatError(
            f"declared {nnz} entries but found {count}", line=len(lines))
    lower = sp.coo_array((vals, (ri, ci)), shape=(rows, cols))
    strict = sp.coo_array((vals[ri != ci], (ci[ri != ci], ri[ri != ci])),
                          shape=(rows, cols))
    return sp.csr_array(lower + strict)


def write_matrix(path, A) -> None:
    """Write the lower triangle of a symmetric sparse matrix, deterministically."""
    L = sp.coo_array(sp.tril(sp.csr_array(A)))
    order = np.lexsort((L.col, L.row))
    with open(path, "w") as fh:
        fh.write(f"{_MM_HEADER} matrix coordinate real symmetric\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {L.nnz}\n")
        for i, j, v in zip(L.row[order], L.col[order], L.data[order]):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_vector(path) -> np.ndarray:
    """Read a dense vector: one value per line, optional array header."""
    with open(path, "r") as fh:
        lines = fh.readlines()
    idx = 0
    expect = None
    if lines and lines[0].startswith(_MM_HEADER):
        fields = [tok.lower() for tok in lines[0].split()[1:]]
        if len(fields) != 4 or fields[:2] != ["matrix", "array"]:
            raise MatrixFormatError("vector header must declare array format",
                                    line=1)
        idx = 1
        while idx < len(lines) and (lines[idx].lstrip().startswith("%")
                                    or not lines[idx].strip()):
            idx += 1
        if idx >= len(lines):
            raise MatrixFormatError("missing array size line", line=len(lines))
        tokens = lines[idx].split()
        try:
            rows, cols = int(tokens[0]), int(tokens[1])
        except (ValueError, IndexError):
            raise MatrixFormatError("array size line must hold two integers",
                                    line=idx + 1) from None
        if cols != 1:
            raise MatrixFormatError("vector files hold a single column",
                                    line=idx + 1)
        expect = rows
        idx += 1
    values = []
    for lineno in range(idx, len(lines)):
        raw = lines[lineno].strip()
        if not raw or raw.startswith("%"):
            continue
        tokens = raw.split()
        if len(tokens) != 1:
            raise MatrixFormatError("one value per line expected",
                                    line=lineno + 1)
        try:
            values.append(float(tokens[0]))
        except ValueError:
            raise MatrixFormatError(f"not a number: {tokens[0]!r}",
                                    line=lineno + 1) from None
    if expect is not None and len(values) != expect:
        raise MatrixFormatError(
            f"declared {expect} values but found {len(values)}",
            line=len(lines))
    return np.asarray(values, dtype=np.float64)


def write_vector(path, v) -> None:
    with open(path, "w") as fh:
        for value in np.asarray(v, dtype=np.float64).ravel():
            fh.write(f"{value:.17g}\n")


def load_instance(matrix_path, a_path, b_path, c: float,
                  delta: float) -> ProblemInstance:
    """Load and validate an instance from its three files and two scalars."""
    A = read_matrix(matrix_path)
    a = read_vector(a_path)
    b = read_vector(b_path)
    if a.shape[0] != A.shape[0] or b.shape[0] != A.shape[0]:
        raise DimensionMismatchError(
            f"vector lengths {a.shape[0]}, {b.shape[0]} do not match matrix "
            f"order {A.shape[0]}")
    instance = ProblemInstance(A, a, b, c, delta)
    report = validate(instance)
    if report.entries:
        raise ValidationError(report.entries)
    return instance


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Report documents.


def report_document(report: SolveReport, instance_meta: dict,
                    timings_ms: dict, matvec_count: int) -> dict:
    """Flatten a SolveReport into the serializable document schema."""
    cert = None
    if report.gap_certificate is not None:
        gc = report.gap_certificate
        cert = {"x1": [float(v) for v in gc.x1],
                "x2": [float(v) for v in gc.x2],
                "mu": float(gc.mu),
                "signs": [float(gc.signs[0]), float(gc.signs[1])]}
    kkt = None
    if report.kkt is not None:
        kkt = {"kkt1": float(report.kkt.kkt1),
               "kkt2": float(report.kkt.kkt2),
               "kkt3": float(report.kkt.kkt3)}
    return {
        "schema_version": SCHEMA_VERSION,
        "instance_meta": dict(instance_meta),
        "status": report.status,
        "objective": float(report.objective),
        "dual_value": float(report.diagnostics.get("dual_value",
                                                   report.objective)),
        "lambda1": float(report.lambda1),
        "lambda2": float(report.lambda2),
        "kkt": kkt,
        "gap_certificate": cert,
        "timings": {k: float(v) for k, v in timings_ms.items()},
        "matvec_count": int(matvec_count),
    }


def report_to_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)


def report_from_json(text: str) -> dict:
    return json.loads(text)


def instance_manifest(spec_fields: dict, c: float, delta: float,
                      files: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "spec": dict(spec_fields),
        "c": float(c),
        "delta": float(delta),
        "files": {name: file_sha256(path) for name, path in files.items()},
    }
