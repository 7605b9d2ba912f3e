"""BB84 bookkeeping: QBER, d-ary entropy, analytic key rate, thresholds and sifting."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import bisect

from .constants import TWO_WAY_THRESHOLD_D4
from .detection import DetectionMatrix

#: Block-row sums of a matrix fed to :func:`qber` must be within this of one.
#: Published tables are rounded to three decimals.
NORMALIZATION_TOL = 1e-2


@dataclass(frozen=True)
class QberReport:
    d: int
    Q: float
    per_basis: tuple
    provenance: str

    def __post_init__(self):
        if not 0.0 <= self.Q <= 1.0:
            raise ValueError("Q outside [0, 1]")


@dataclass(frozen=True)
class KeyRate:
    d: int
    Q: float
    R: float
    method: str = "analytic"

    def __post_init__(self):
        if self.R > np.log2(self.d) + 1e-6:
            raise ValueError("key rate exceeds log2(d)")


def qber(matrix: DetectionMatrix) -> QberReport:
    """One minus the mean of the same-basis diagonal entries, both bases weighted equally."""
    if not matrix.is_normalized(NORMALIZATION_TOL):
        raise ValueError("detection matrix is not normalized per prepared state and basis")
    diag = matrix.diagonal()
    basis = np.array([matrix.basis_of(l) for l in matrix.row_labels])
    per_basis = tuple(float(1.0 - diag[basis == b].mean()) for b in (0, 1))
    Q = float(1.0 - diag.mean())
    return QberReport(matrix.d, min(max(Q, 0.0), 1.0), per_basis, matrix.provenance)


def entropy_d(Q, d: int):
    """d-ary symmetric channel entropy in bits.

    h_d(Q) = -Q log2(Q/(d-1)) - (1-Q) log2(1-Q), with h_d(0) = 0.
    Works elementwise on arrays.
    """
    Q = np.asarray(Q, dtype=float)
    qmax = (d - 1) / d
    if np.any(Q < 0) or np.any(Q > qmax + 1e-12):
        raise ValueError(f"Q must lie in [0, {qmax:.4f}] for d={d}")
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(Q > 0, -Q * np.log2(Q / (d - 1)), 0.0)
        b = np.where(Q < 1, -(1 - Q) * np.log2(1 - Q), 0.0)
    h = a + b
    return float(h) if h.ndim == 0 else h


def key_rate_analytic(Q: float, d: int) -> KeyRate:
    """R = log2(d) - 2 h_d(Q)."""
    return KeyRate(d, float(Q), float(np.log2(d) - 2 * entropy_d(Q, d)), "analytic")


def threshold_q0(d: int, tol: float = 1e-6) -> float:
    """Largest tolerable QBER: the root of R(Q) = 0 on [0, (d-1)/d]."""
    if d < 2:
        raise ValueError("d must be >= 2")
    hi = (d - 1) / d
    f = lambda q: np.log2(d) - 2 * entropy_d(q, d)
    # R decreases from log2(d) at Q=0 to -log2(d) at the maximum
    return float(bisect(f, 0.0, hi, xtol=tol * 1e-3))


def two_way_threshold_d4() -> float:
    """Tolerable QBER in d=4 with two-way post-processing (quoted constant, not computed)."""
    return TWO_WAY_THRESHOLD_D4


@dataclass(frozen=True)
class SiftResult:
    pairs: np.ndarray  # (n_sifted, 2) alice/bob symbols
    kept: np.ndarray  # indices into the raw sequence
    ratio: float

    @property
    def error_rate(self) -> float:
        if len(self.pairs) == 0:
            return float("nan")
        return float(np.mean(self.pairs[:, 0] != self.pairs[:, 1]))


def sift(alice_bases, bob_bases, outcomes) -> SiftResult:
    """Keep positions where both parties used the same basis.

    ``outcomes`` is a sequence of (alice_symbol, bob_symbol) pairs.
    """
    a = np.asarray(alice_bases)
    b = np.asarray(bob_bases)
    o = np.asarray(outcomes)
    if not (len(a) == len(b) == len(o)):
        raise ValueError("basis and outcome sequences differ in length")
    if len(a) == 0:
        return SiftResult(np.zeros((0, 2), dtype=int), np.zeros(0, dtype=int), 0.0)
    o = o.reshape(len(a), 2)
    kept = np.flatnonzero(a == b)
    return SiftResult(o[kept], kept, len(kept) / len(a))


def simulate_exchange(matrix: DetectionMatrix, n: int, rng: np.random.Generator):
    """Draw ``n`` BB84 rounds through the confusion channel of ``matrix``.

    Both parties pick bases uniformly; Alice picks a uniform symbol and Bob's
    outcome is drawn from the matrix row (renormalized within his basis).
    Returns (alice_bases, bob_bases, outcomes).
    """
    c = matrix.canonical().normalized()
    d = matrix.d
    P = c.probabilities
    ab = rng.integers(0, 2, n)
    bb = rng.integers(0, 2, n)
    sym = rng.integers(0, d, n)
    rows = P[ab * d + sym]  # (n, 2d)
    sub = np.take_along_axis(rows, (bb[:, None] * d + np.arange(d)[None, :]), axis=1)
    cdf = np.cumsum(sub, axis=1)
    u = rng.random(n)[:, None] * cdf[:, -1:]
    bob = np.minimum((u > cdf).sum(axis=1), d - 1)
    return ab, bb, np.stack([sym, bob], axis=1)


def report_json(report: QberReport, rates: list) -> str:
    doc = {"qber": asdict(report), "key_rates": [asdict(r) for r in rates]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_table(report: QberReport, rates: list) -> str:
    """Aligned plain-text summary."""
    lines = [f"{'quantity':<24}{'value':>12}",
             f"{'d':<24}{report.d:>12d}",
             f"{'provenance':<24}{report.provenance:>12}",
             f"{'Q':<24}{report.Q:>12.4f}"]
    for b, q in enumerate(report.per_basis):
        lines.append(f"{f'Q basis {b}':<24}{q:>12.4f}")
    for r in rates:
        lines.append(f"{f'R ({r.method})':<24}{r.R:>12.4f}")
    return "\n".join(lines) + "\n"
