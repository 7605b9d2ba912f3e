"""Polarization x OAM state vectors and Jones-calculus optical elements.

A mode is a pair (polarization, OAM). Polarization labels may be linear
(H, V) or circular (L, R); a :class:`StateVector` carries its own ordered
mode basis, and :func:`express` converts a state between any two bases that
span the same OAM values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .constants import (
    CIRCULAR_POLS,
    LINEAR_POLS,
    NORM_TOL,
    POL_VECTORS,
    QPLATE_L_SHIFT_SIGN,
    UNITARY_TOL,
)


class SubspaceLeakageError(ValueError):
    """An operation moved amplitude to an OAM value outside the configured space."""


class BasisMismatchError(ValueError):
    """Two states or operators are expressed in different mode bases."""


@dataclass(frozen=True, order=True)
class ModeIndex:
    polarization: str
    oam: int

    def __post_init__(self):
        if self.polarization not in POL_VECTORS:
            raise ValueError(f"unknown polarization {self.polarization!r}")
        object.__setattr__(self, "oam", int(self.oam))

    def __str__(self):
        return f"|{self.polarization},{self.oam:+d}>"


ModeBasis = tuple  # tuple[ModeIndex, ...]


def mode_basis(oams: Iterable[int], pols: Sequence[str] = LINEAR_POLS) -> ModeBasis:
    """Polarization-major basis: all OAM values for ``pols[0]``, then ``pols[1]``."""
    oams = list(oams)
    if len(set(oams)) != len(oams):
        raise ValueError("duplicate OAM values")
    return tuple(ModeIndex(p, l) for p in pols for l in oams)


def transit_basis(ell: int, q: float | None = None) -> ModeBasis:
    """Basis used during preparation chains: OAM {+l, 0, -l} in H/V.

    ``q`` is accepted for symmetry with the q-plate call but the transit value
    is always zero.
    """
    return mode_basis((ell, 0, -ell))


def _pol_overlap(target: str, source: str) -> complex:
    """<target|source> for polarization labels."""
    return complex(np.vdot(POL_VECTORS[target], POL_VECTORS[source]))


@dataclass(frozen=True)
class StateVector:
    """Normalized pure state over an ordered mode basis."""

    amplitudes: np.ndarray
    basis: ModeBasis

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        basis = tuple(self.basis)
        if len(amps) != len(basis):
            raise ValueError("amplitude count does not match basis length")
        if len(set(basis)) != len(basis):
            raise ValueError("basis has duplicate modes")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL * max(1, len(amps)):
            raise ValueError(f"state is not normalized (norm^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def from_modes(cls, components: dict, basis: ModeBasis | None = None,
                   normalize: bool = True) -> StateVector:
        """Build a state from ``{(pol, oam): amplitude}``.

        Modes may use any polarization labels; the result is expressed in
        ``basis`` (by default the modes themselves, in insertion order).
        """
        modes = [ModeIndex(*k) for k in components]
        amps = np.array(list(components.values()), dtype=complex)
        if normalize:
            amps = amps / np.linalg.norm(amps)
        state = cls(amps, tuple(modes))
        return state if basis is None else express(state, basis)

    @property
    def dim(self) -> int:
        return len(self.basis)

    def component(self, pol: str, oam: int) -> complex:
        """Amplitude <pol, oam|state>, converting polarization labels if needed."""
        return complex(sum(_pol_overlap(pol, m.polarization) * a
                           for m, a in zip(self.basis, self.amplitudes) if m.oam == oam))

    def __str__(self):
        terms = [f"({a.real:+.4f}{a.imag:+.4f}j){m}"
                 for m, a in zip(self.basis, self.amplitudes) if abs(a) > 1e-12]
        return " ".join(terms) or "0"


def express(state: StateVector, basis: ModeBasis) -> StateVector:
    """Re-express ``state`` in another mode basis.

    Raises SubspaceLeakageError if the state has weight on OAM values (or
    polarization directions) the target basis cannot represent.
    """
    basis = tuple(basis)
    if basis == state.basis:
        return state
    T = np.array([[_pol_overlap(t.polarization, s.polarization) if t.oam == s.oam else 0j
                   for s in state.basis] for t in basis])
    amps = T @ state.amplitudes
    kept = float(np.vdot(amps, amps).real)
    if abs(kept - 1.0) > 1e-10:
        raise SubspaceLeakageError(
            f"state loses weight {1 - kept:.3g} when expressed in the target basis")
    return StateVector(amps / np.sqrt(kept), basis)


def circular_basis_change(state: StateVector) -> StateVector:
    """Express a state in the {L, R} polarization basis (same OAM ordering).

    States already written in circular polarization are returned unchanged.
    """
    if all(m.polarization in CIRCULAR_POLS for m in state.basis):
        return state
    oams = list(dict.fromkeys(m.oam for m in state.basis))
    return express(state, mode_basis(oams, CIRCULAR_POLS))


def born_probability(prep: StateVector, proj: StateVector) -> float:
    """|<proj|prep>|^2 for two states over the same basis."""
    if prep.basis != proj.basis:
        raise BasisMismatchError("states are expressed in different bases")
    p = abs(np.vdot(proj.amplitudes, prep.amplitudes)) ** 2
    return float(min(max(p, 0.0), 1.0))


def fidelity(a: StateVector, b: StateVector) -> float:
    """Phase-insensitive overlap; ``b`` is converted into ``a``'s basis first."""
    return born_probability(a, express(b, a.basis))


@dataclass(frozen=True)
class OpticalOperator:
    """Linear map on a mode basis.

    ``leaky`` flags input modes whose image falls outside the basis; applying
    the operator to a state with weight on such a mode raises.
    """

    matrix: np.ndarray
    basis: ModeBasis
    name: str = ""
    leaky: tuple = field(default=())

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (len(self.basis), len(self.basis)):
            raise ValueError("matrix shape does not match basis")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "basis", tuple(self.basis))

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def unitary(self) -> bool:
        """True if U^dag U = 1 on the non-leaky subspace."""
        keep = [i for i, m in enumerate(self.basis) if m not in self.leaky]
        sub = self.matrix[:, keep]
        gram = sub.conj().T @ sub
        return bool(np.max(np.abs(gram - np.eye(len(keep)))) < UNITARY_TOL)

    def apply(self, state: StateVector) -> StateVector:
        if state.basis != self.basis:
            state = express(state, self.basis)
        for m, a in zip(state.basis, state.amplitudes):
            if m in self.leaky and abs(a) > 1e-12:
                raise SubspaceLeakageError(f"{self.name or 'operator'} sends {m} outside the OAM space")
        out = self.matrix @ state.amplitudes
        return StateVector(out / np.linalg.norm(out), self.basis)

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            return self.apply(other)
        if other.basis != self.basis:
            raise BasisMismatchError("operators act on different bases")
        return OpticalOperator(self.matrix @ other.matrix, self.basis,
                               f"{self.name}*{other.name}", tuple(set(self.leaky) | set(other.leaky)))

    @property
    def dagger(self) -> OpticalOperator:
        return OpticalOperator(self.matrix.conj().T, self.basis, f"{self.name}^dag", self.leaky)


def _rot(t: float) -> np.ndarray:
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, s], [-s, c]])


def retarder_jones(theta: float, retardance: float) -> np.ndarray:
    """2x2 Jones matrix (H/V basis) of a linear retarder; ``theta`` in radians."""
    return _rot(-theta) @ np.diag([1.0, np.exp(-1j * retardance)]) @ _rot(theta)


def polarization_operator(jones: np.ndarray, basis: ModeBasis, name: str = "") -> OpticalOperator:
    """Lift a 2x2 H/V Jones matrix to ``basis``, acting as identity on OAM."""
    basis = tuple(basis)
    n = len(basis)
    # Jones matrix rewritten between arbitrary polarization labels
    M = np.zeros((n, n), dtype=complex)
    for i, t in enumerate(basis):
        for j, s in enumerate(basis):
            if t.oam == s.oam:
                M[i, j] = np.vdot(POL_VECTORS[t.polarization], jones @ np.array(POL_VECTORS[s.polarization]))
    return OpticalOperator(M, basis, name)


def hwp(theta_deg: float, basis: ModeBasis) -> OpticalOperator:
    """Half-wave plate with fast axis at ``theta_deg`` degrees."""
    return polarization_operator(retarder_jones(np.deg2rad(theta_deg), np.pi), basis,
                                 f"HWP({theta_deg:g})")


def qwp(theta_deg: float, basis: ModeBasis) -> OpticalOperator:
    """Quarter-wave plate with fast axis at ``theta_deg`` degrees."""
    return polarization_operator(retarder_jones(np.deg2rad(theta_deg), np.pi / 2), basis,
                                 f"QWP({theta_deg:g})")


def qplate(q: float, basis: ModeBasis) -> OpticalOperator:
    """Tuned q-plate: |L,l> -> |R,l+2q>, |R,l> -> |L,l-2q>.

    ``2q`` must be an integer. Inputs whose image OAM is not present in
    ``basis`` are marked leaky.
    """
    shift = 2 * q * QPLATE_L_SHIFT_SIGN
    if abs(shift - round(shift)) > 1e-12:
        raise ValueError("2q must be an integer")
    shift = int(round(shift))
    basis = tuple(basis)
    index = {m: i for i, m in enumerate(basis)}
    oams = {m.oam for m in basis}
    n = len(basis)
    # build in the circular basis, then rotate into the target basis
    circ = tuple(ModeIndex(p, l) for p in CIRCULAR_POLS for l in sorted(oams))
    cidx = {m: i for i, m in enumerate(circ)}
    Mc = np.zeros((len(circ), len(circ)), dtype=complex)
    for m in circ:
        if m.polarization == "L":
            out = ModeIndex("R", m.oam + shift)
        else:
            out = ModeIndex("L", m.oam - shift)
        if out in cidx:
            Mc[cidx[out], cidx[m]] = 1.0
    # change of basis: C[t, c] = <t|c>
    C = np.array([[_pol_overlap(t.polarization, c.polarization) if t.oam == c.oam else 0j
                   for c in circ] for t in basis])
    M = C @ Mc @ C.conj().T
    # a target-basis mode leaks if any of its circular components maps outside
    leaky = []
    for t in basis:
        for c in circ:
            if t.oam == c.oam and abs(_pol_overlap(t.polarization, c.polarization)) > 1e-12:
                if not Mc[:, cidx[c]].any():
                    leaky.append(t)
                    break
    assert M.shape == (n, n) and all(m in index for m in leaky)
    return OpticalOperator(M, basis, f"QP(q={q:g})", tuple(leaky))
