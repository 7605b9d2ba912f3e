"""Detection matrices: labeled 2d x 2d probability tables plus CSV/JSON I/O.

Rows are the states Alice sends, columns the states Bob projects onto. Row and
column orders are stored explicitly (the shipped fixtures list psi1, psi3,
psi2, psi4), so nothing is silently reordered; :meth:`DetectionMatrix.canonical`
gives the natural ordering when needed.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

PROVENANCES = ("raw", "target_corrected", "theoretical", "simulated")

#: Shipped copies of the measured link matrices.
FIXTURES = {
    "d2_raw": "measured_d2_raw.csv",
    "d2_corrected": "measured_d2_corrected.csv",
    "d4_raw": "measured_d4_raw.csv",
    "d4_corrected": "measured_d4_corrected.csv",
    "d4_noisy": "measured_d4_noisy.csv",
}

#: Conventional basis order for known label prefixes.
KNOWN_BASES = ("zeta", "xi", "psi", "phi")

_LABEL_RE = re.compile(r"^([A-Za-z_]+?)(\d+)$")


class MatrixParseError(ValueError):
    """Malformed matrix file; ``line`` is 1-based."""

    def __init__(self, msg, source="<matrix>", line=None):
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {msg}")


def split_label(label: str) -> tuple:
    """'psi3' -> ('psi', 3)."""
    m = _LABEL_RE.match(label)
    if not m:
        raise ValueError(f"state label {label!r} is not of the form <basis><index>")
    return m.group(1), int(m.group(2))


@dataclass
class DetectionMatrix:
    d: int
    row_labels: tuple
    col_labels: tuple
    probabilities: np.ndarray
    provenance: str = "raw"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.row_labels = tuple(self.row_labels)
        self.col_labels = tuple(self.col_labels)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        n = 2 * self.d
        if self.probabilities.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {self.probabilities.shape}")
        if len(self.row_labels) != n or len(self.col_labels) != n:
            raise ValueError("label count does not match matrix size")
        if sorted(self.row_labels) != sorted(self.col_labels):
            raise ValueError("row and column labels must name the same states")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        names = self.basis_names
        if len(names) != 2 or any(sum(split_label(l)[0] == b for l in self.row_labels) != self.d
                                  for b in names):
            raise ValueError("labels must name d states in each of two bases")

    @property
    def basis_names(self) -> tuple:
        return tuple(dict.fromkeys(split_label(l)[0] for l in self.canonical_labels()))

    def canonical_labels(self) -> tuple:
        """Labels sorted by (basis, index).

        Known basis names keep their conventional order (key basis first);
        unknown names follow in order of first appearance.
        """
        seen = list(dict.fromkeys(split_label(l)[0] for l in self.row_labels))

        def rank(name):
            return (0, KNOWN_BASES.index(name)) if name in KNOWN_BASES else (1, seen.index(name))

        return tuple(sorted(self.row_labels, key=lambda l: (rank(split_label(l)[0]), split_label(l)[1])))

    def basis_of(self, label: str) -> int:
        return self.basis_names.index(split_label(label)[0])

    def reordered(self, labels) -> DetectionMatrix:
        """Same matrix with rows and columns both in ``labels`` order."""
        labels = tuple(labels)
        ri = [self.row_labels.index(l) for l in labels]
        ci = [self.col_labels.index(l) for l in labels]
        return DetectionMatrix(self.d, labels, labels, self.probabilities[np.ix_(ri, ci)],
                               self.provenance, dict(self.metadata))

    def canonical(self) -> DetectionMatrix:
        return self.reordered(self.canonical_labels())

    def block(self, prep_basis: int, meas_basis: int) -> np.ndarray:
        """d x d block in canonical order."""
        c = self.canonical()
        d = self.d
        return c.probabilities[prep_basis * d:(prep_basis + 1) * d, meas_basis * d:(meas_basis + 1) * d]

    def diagonal(self) -> np.ndarray:
        """P(label|label) for every row, in row order."""
        return np.array([self.probabilities[i, self.col_labels.index(l)] for i, l in enumerate(self.row_labels)])

    def block_row_sums(self) -> np.ndarray:
        """(2d, 2) array: each row's sum over each measurement basis."""
        col_basis = np.array([self.basis_of(l) for l in self.col_labels])
        return np.stack([self.probabilities[:, col_basis == b].sum(axis=1) for b in (0, 1)], axis=1)

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.block_row_sums() - 1.0) <= tol))

    def normalized(self) -> DetectionMatrix:
        """Each row rescaled to sum to one within each measurement-basis block."""
        col_basis = np.array([self.basis_of(l) for l in self.col_labels])
        P = self.probabilities.copy()
        for b in (0, 1):
            s = P[:, col_basis == b].sum(axis=1, keepdims=True)
            if np.any(s <= 0):
                raise ValueError("cannot normalize a block row with zero total")
            P[:, col_basis == b] /= s
        return DetectionMatrix(self.d, self.row_labels, self.col_labels, P, self.provenance, dict(self.metadata))

    # I/O ---------------------------------------------------------------

    def to_csv(self, comments: bool = True) -> str:
        buf = io.StringIO()
        if comments:
            buf.write(f"# provenance={self.provenance} d={self.d}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", *self.col_labels])
        for label, row in zip(self.row_labels, self.probabilities):
            w.writerow([label, *(f"{x:.6f}" for x in row)])
        return buf.getvalue()

    def to_json(self, **extra) -> str:
        doc = {
            "d": self.d,
            "provenance": self.provenance,
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
            "probabilities": [[round(float(x), 12) for x in row] for row in self.probabilities],
            "metadata": self.metadata,
        }
        doc.update(extra)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> DetectionMatrix:
        doc = json.loads(text)
        return cls(doc["d"], doc["row_labels"], doc["col_labels"], np.array(doc["probabilities"]),
                   doc.get("provenance", "raw"), doc.get("metadata", {}))


def parse_csv(text: str, source: str = "<matrix>", provenance: str | None = None) -> DetectionMatrix:
    """Parse the CSV layout written by :meth:`DetectionMatrix.to_csv`.

    ``# key=value`` comment lines may carry the provenance flag and d.
    """
    meta = {}
    header = None
    rows, labels = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            meta.update(dict(re.findall(r"(\w+)=(\S+)", s)))
            continue
        fields = next(csv.reader([s]))
        if header is None:
            header = [f.strip() for f in fields]
            if len(header) < 3:
                raise MatrixParseError("header must name at least two columns", source, lineno)
            continue
        if len(fields) != len(header):
            raise MatrixParseError(f"expected {len(header)} fields, found {len(fields)}", source, lineno)
        try:
            values = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise MatrixParseError(f"non-numeric entry ({exc})", source, lineno) from None
        if any(not np.isfinite(v) or v < 0 for v in values):
            raise MatrixParseError("entries must be finite and non-negative", source, lineno)
        labels.append(fields[0].strip())
        rows.append(values)
    if header is None:
        raise MatrixParseError("no header row", source)
    n = len(header) - 1
    if n % 2 or len(rows) != n:
        raise MatrixParseError(f"expected a square 2d x 2d matrix, got {len(rows)} rows x {n} columns", source)
    d = n // 2
    if "d" in meta and int(meta["d"]) != d:
        raise MatrixParseError(f"header says d={meta['d']} but matrix has d={d}", source)
    try:
        return DetectionMatrix(d, labels, header[1:], np.array(rows), provenance or meta.get("provenance", "raw"))
    except ValueError as exc:
        raise MatrixParseError(str(exc), source) from None


def read_matrix(path) -> DetectionMatrix:
    """Read a matrix from CSV (default) or JSON (by ``.json`` suffix)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            return DetectionMatrix.from_json(text)
        except (KeyError, ValueError, TypeError) as exc:
            raise MatrixParseError(f"bad matrix document: {exc}", str(path)) from None
    return parse_csv(text, str(path))


def load_fixture(name: str) -> DetectionMatrix:
    """One of the shipped measured matrices, keyed as in :data:`FIXTURES`."""
    fname = FIXTURES[name]
    text = resources.files("structqkd").joinpath("data").joinpath(fname).read_text()
    return parse_csv(text, fname)
