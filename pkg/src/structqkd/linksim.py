"""Monte Carlo model of the heralded-pair free-space link.

A bin of ``duration`` seconds is simulated for every (sent state, projector)
setting. Signal and idler travel co-axially, so a single beam displacement
drives both coupling efficiencies. The displacement of a bin is a slow
per-setting offset (drift between settings, which the matrix normalization
cannot remove) plus a fast per-bin part. Turbulence also scatters OAM between
+l and -l through the ensemble transfer matrices of
:func:`structqkd.turbulence.oam_transfer`.

Accidentals follow ``r_s * r_i * tau`` with the signal singles counted at the
projector in use (``accidental_model="proportional"``). The alternative
``"uniform"`` spreads the aggregate accidental rate evenly over the d outcomes
of a basis.
"""

from __future__ import annotations

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .constants import (
    BIN_DURATION,
    BINS_PER_SETTING,
    COINCIDENCE_WINDOW,
    IDLER_LOSS_DB,
    LAB_QBER,
    SIGNAL_LOSS_DB,
    SOURCE_COINCIDENCE_RATE,
    SOURCE_IDLER_RATE,
    SOURCE_SIGNAL_RATE,
)
from .detection import DetectionMatrix
from .mubs import MubSet
from .rng import stream
from .spinorbit import StateVector
from .turbulence import TurbulenceParams, oam_transfer

ACCIDENTAL_MODELS = ("proportional", "uniform")
CORRECTION_MODES = ("rescale", "discard")
CORRECTION_REFERENCES = ("row", "setting", "global")


class TurbulenceTooSevere(RuntimeError):
    """Target correction discarded every bin of at least one setting."""


def db_to_transmission(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True)
class LinkBudget:
    """Source rates, losses and detector parameters of the link.

    The dB losses are the total no-turbulence channel transmissions, so the
    defaults give about 20% (signal) and 25% (idler). ``coupling_waist`` sets
    how fast a displaced beam loses fiber coupling. ``intrinsic_qber`` models
    the lab-bench error floor as depolarization; ``None`` uses the measured
    value for the dimension in use.
    """

    signal_loss_db: float = SIGNAL_LOSS_DB
    idler_loss_db: float = IDLER_LOSS_DB
    source_coincidence_rate: float = SOURCE_COINCIDENCE_RATE
    signal_singles_rate: float = SOURCE_SIGNAL_RATE
    idler_singles_rate: float = SOURCE_IDLER_RATE
    coincidence_window: float = COINCIDENCE_WINDOW
    dark_count_rate: float = 500.0
    coupling_waist: float = 1.0e-3
    slow_wander_fraction: float = 0.5
    intrinsic_qber: float | None = None
    accidental_model: str = "proportional"

    def __post_init__(self):
        for name in ("signal_loss_db", "idler_loss_db", "source_coincidence_rate", "signal_singles_rate",
                     "idler_singles_rate", "dark_count_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.coincidence_window > 0:
            raise ValueError("coincidence window must be positive")
        if not self.coupling_waist > 0:
            raise ValueError("coupling waist must be positive")
        if not 0.0 <= self.slow_wander_fraction <= 1.0:
            raise ValueError("slow_wander_fraction must lie in [0, 1]")
        if self.intrinsic_qber is not None and not 0.0 <= self.intrinsic_qber < 0.5:
            raise ValueError("intrinsic_qber must lie in [0, 0.5)")
        if self.accidental_model not in ACCIDENTAL_MODELS:
            raise ValueError(f"accidental_model must be one of {ACCIDENTAL_MODELS}")
        if self.source_coincidence_rate > min(self.signal_singles_rate, self.idler_singles_rate):
            raise ValueError("pair rate cannot exceed either singles rate")

    @property
    def signal_transmission(self) -> float:
        return db_to_transmission(self.signal_loss_db)

    @property
    def idler_transmission(self) -> float:
        return db_to_transmission(self.idler_loss_db)

    def coupling(self, displacement) -> float:
        """Gaussian overlap factor exp(-|d|^2 / w_c^2), one at zero displacement."""
        d2 = float(np.sum(np.square(displacement)))
        return float(np.exp(-d2 / self.coupling_waist ** 2))

    def qber_floor(self, d: int) -> float:
        return LAB_QBER.get(d, 0.0) if self.intrinsic_qber is None else self.intrinsic_qber

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CountRecord:
    """Counts of one bin. After target correction the counts may be fractional."""

    sent: str
    projector: str
    coincidences: float
    signal_singles: float
    idler_singles: float
    duration: float = BIN_DURATION
    corrected: bool = False

    def __post_init__(self):
        if min(self.coincidences, self.signal_singles, self.idler_singles) < 0:
            raise ValueError("counts must be non-negative")
        if self.coincidences > min(self.signal_singles, self.idler_singles) + 1e-9:
            raise ValueError("coincidences exceed singles")
        if not self.duration > 0:
            raise ValueError("bin duration must be positive")

    @property
    def setting(self) -> tuple:
        return (self.sent, self.projector)


def accidental_rate(r_signal: float, r_idler: float, tau: float) -> float:
    """Rate of uncorrelated coincidences, r_s * r_i * tau (Hz)."""
    if r_signal < 0 or r_idler < 0 or tau < 0:
        raise ValueError("rates and window must be non-negative")
    return r_signal * r_idler * tau


# Channel probabilities ---------------------------------------------------------

def _oam_kraus(basis: tuple, turb: TurbulenceParams | None, ell: int) -> list:
    """Kraus operators acting on the amplitude vector of ``basis`` (identity without turbulence)."""
    n = len(basis)
    if turb is None:
        return [np.eye(n, dtype=complex)]
    T = oam_transfer(ell, round(turb.r0, 12))
    ops = []
    for Tk in T:
        K = np.zeros((n, n), dtype=complex)
        for i, mi in enumerate(basis):
            for j, mj in enumerate(basis):
                if mi.polarization != mj.polarization or abs(mi.oam) != ell or abs(mj.oam) != ell:
                    continue
                K[j, i] = Tk[0 if mj.oam > 0 else 1, 0 if mi.oam > 0 else 1]
        ops.append(K)
    return ops


def channel_probabilities(mubs: MubSet, turb: TurbulenceParams | None, qber_floor: float) -> np.ndarray:
    """P[s, m]: probability that sent state s is detected at projector m.

    The OAM channel is applied first (its loss makes rows sum below one), then
    depolarization of strength ``qber_floor * d / (d - 1)`` within each basis,
    which produces a same-basis error of exactly ``qber_floor`` when there is
    no turbulence.
    """
    d = mubs.d
    states = mubs.states()
    kraus = _oam_kraus(mubs.basis, turb, mubs.ell)
    A = np.array([s.amplitudes for s in states])  # (2d, n)
    P = np.zeros((2 * d, 2 * d))
    for K in kraus:
        out = A @ K.T  # each row: K |s>
        P += np.abs(out.conj() @ A.T) ** 2  # |<m|K|s>|^2
    P /= len(kraus)
    lam = qber_floor * d / (d - 1)
    for b in (0, 1):
        cols = slice(b * d, (b + 1) * d)
        kept = P[:, cols].sum(axis=1, keepdims=True)
        P[:, cols] = (1 - lam) * P[:, cols] + lam * kept / d
    return P


# Simulation --------------------------------------------------------------------

def _bin_counts(p: float, p_basis: float, d: int, budget: LinkBudget, displacement, duration: float,
                rng: np.random.Generator, sent: str, projector: str) -> CountRecord:
    c = budget.coupling(displacement)
    eta_s = budget.signal_transmission * c
    eta_i = budget.idler_transmission * c
    r_sig = budget.signal_singles_rate * eta_s * p + budget.dark_count_rate
    r_idl = budget.idler_singles_rate * eta_i + budget.dark_count_rate
    true = budget.source_coincidence_rate * eta_s * eta_i * p
    if budget.accidental_model == "proportional":
        acc = accidental_rate(r_sig, r_idl, budget.coincidence_window)
    else:
        r_basis = budget.signal_singles_rate * eta_s * p_basis + d * budget.dark_count_rate
        acc = accidental_rate(r_basis, r_idl, budget.coincidence_window) / d
    coinc = rng.poisson((true + acc) * duration)
    sig = coinc + rng.poisson(max(r_sig - true - acc, 0.0) * duration)
    idl = coinc + rng.poisson(max(r_idl - true - acc, 0.0) * duration)
    return CountRecord(sent, projector, float(coinc), float(sig), float(idl), duration)


def _wander_sigmas(budget: LinkBudget, turb: TurbulenceParams | None) -> tuple:
    if turb is None:
        return 0.0, 0.0
    var = turb.wander_sigma2
    return float(np.sqrt(budget.slow_wander_fraction * var)), float(np.sqrt((1 - budget.slow_wander_fraction) * var))


def simulate_bin(sent: StateVector, projector: StateVector, budget: LinkBudget,
                 turb: TurbulenceParams | None, rng: np.random.Generator, *, mubs: MubSet | None = None,
                 offset=(0.0, 0.0), duration: float = BIN_DURATION,
                 labels: tuple = ("sent", "projector")) -> CountRecord:
    """Counts of one bin for a single setting.

    Without ``mubs`` the detection probability is the plain Born overlap (no
    OAM channel, no error floor); pass the set the states belong to for the
    full channel model. ``offset`` is the slow beam displacement of the
    setting; the fast part is drawn here.
    """
    if sent.basis != projector.basis:
        raise ValueError("sent state and projector live in different mode bases")
    if mubs is None:
        p = float(abs(np.vdot(projector.amplitudes, sent.amplitudes)) ** 2)
        p_basis, d = 1.0, len(sent.basis)
    else:
        lab = mubs.labels()
        s_lab = next(l for l in lab if np.allclose(mubs.state(l).amplitudes, sent.amplitudes))
        m_lab = next(l for l in lab if np.allclose(mubs.state(l).amplitudes, projector.amplitudes))
        P = channel_probabilities(mubs, turb, budget.qber_floor(mubs.d))
        i, j = lab.index(s_lab), lab.index(m_lab)
        b = mubs.basis_of(m_lab)
        p, d = float(P[i, j]), mubs.d
        p_basis = float(P[i, b * d:(b + 1) * d].sum())
        labels = (s_lab, m_lab)
    _, fast = _wander_sigmas(budget, turb)
    disp = np.asarray(offset, dtype=float) + rng.normal(0.0, fast, 2)
    return _bin_counts(p, p_basis, d, budget, disp, duration, rng, *labels)


def run_protocol(mubs: MubSet, budget: LinkBudget, turb: TurbulenceParams | None,
                 bins_per_setting: int = BINS_PER_SETTING, rng: np.random.Generator | int = 0,
                 threads: int = 1, duration: float = BIN_DURATION) -> list:
    """All (sent, projector) settings over both bases, ``bins_per_setting`` records each.

    ``rng`` may be a seed or a generator (one integer is drawn from it). Every
    setting and bin draws from its own keyed stream, so the records do not
    depend on ``threads``.
    """
    if bins_per_setting < 1:
        raise ValueError("bins_per_setting must be >= 1")
    seed = int(rng.integers(2 ** 63)) if isinstance(rng, np.random.Generator) else int(rng)
    d = mubs.d
    labels = mubs.labels()
    P = channel_probabilities(mubs, turb, budget.qber_floor(d))
    slow, fast = _wander_sigmas(budget, turb)

    def setting(ij):
        i, j = ij
        off = stream(seed, "offset", i, j).normal(0.0, slow, 2)
        b = j // d
        p_basis = float(P[i, b * d:(b + 1) * d].sum())
        out = []
        for k in range(bins_per_setting):
            g = stream(seed, "bin", i, j, k)
            disp = off + g.normal(0.0, fast, 2)
            out.append(_bin_counts(float(P[i, j]), p_basis, d, budget, disp, duration, g, labels[i], labels[j]))
        return out

    grid = [(i, j) for i in range(2 * d) for j in range(2 * d)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            chunks = list(ex.map(setting, grid))
    else:
        chunks = [setting(ij) for ij in grid]
    return [r for c in chunks for r in c]


# Post-processing ---------------------------------------------------------------

def target_correction(records, mode: str = "rescale", reference: str = "row", floor: float = 0.2,
                      exponent: float = 1.0) -> list:
    """Use the idler singles of each bin to undo beam-wander intensity changes.

    Each bin is compared with a reference median of idler singles. Bins below
    ``floor`` times the median are dropped. In ``"rescale"`` mode the remaining
    bins have all counts multiplied by median / idler; ``"discard"`` only drops.

    ``reference`` picks the pool the median is taken over: ``"row"`` (every bin
    of the same sent state, the default), ``"setting"`` (the bin's own
    setting) or ``"global"``. A per-setting median leaves the mean of each
    setting essentially unchanged, so it cannot remove drift between settings.
    """
    if mode not in CORRECTION_MODES:
        raise ValueError(f"mode must be one of {CORRECTION_MODES}")
    if reference not in CORRECTION_REFERENCES:
        raise ValueError(f"reference must be one of {CORRECTION_REFERENCES}")
    records = list(records)
    key = {"row": lambda r: r.sent, "setting": lambda r: r.setting, "global": lambda r: None}[reference]
    pools = defaultdict(list)
    for r in records:
        pools[key(r)].append(r.idler_singles)
    medians = {k: float(np.median(v)) for k, v in pools.items()}

    out, kept = [], defaultdict(int)
    settings = dict.fromkeys(r.setting for r in records)
    for r in records:
        med = medians[key(r)]
        if med <= 0 or r.idler_singles < floor * med:
            continue
        if mode == "rescale":
            f = (med / r.idler_singles) ** exponent
            r = replace(r, coincidences=r.coincidences * f, signal_singles=r.signal_singles * f,
                        idler_singles=r.idler_singles * f, corrected=True)
        else:
            r = replace(r, corrected=True)
        out.append(r)
        kept[r.setting] += 1
    lost = [s for s in settings if kept[s] == 0]
    if lost:
        raise TurbulenceTooSevere(f"turbulence too severe for correction: no usable bins for {len(lost)} setting(s)")
    return out


def build_detection_matrix(records, metadata: dict | None = None) -> DetectionMatrix:
    """Mean coincidences per setting, normalized per sent state within each projector basis.

    States are ordered by first appearance among the records.
    """
    records = list(records)
    if not records:
        raise ValueError("no records")
    labels = tuple(dict.fromkeys(r.sent for r in records))
    if set(labels) != {r.projector for r in records}:
        raise ValueError("sent states and projectors differ")
    n = len(labels)
    sums = np.zeros((n, n))
    counts = np.zeros((n, n), dtype=int)
    idx = {l: i for i, l in enumerate(labels)}
    for r in records:
        i, j = idx[r.sent], idx[r.projector]
        sums[i, j] += r.coincidences
        counts[i, j] += 1
    if np.any(counts == 0):
        missing = [(labels[i], labels[j]) for i, j in zip(*np.nonzero(counts == 0))]
        raise ValueError(f"empty setting(s): {missing[:3]}")
    provenance = "target_corrected" if any(r.corrected for r in records) else "simulated"
    M = DetectionMatrix(n // 2, labels, labels, sums / counts, provenance, dict(metadata or {}))
    return M.normalized()
