"""Two-basis MUB sets for d=2 and d=4 and the waveplate recipes that prepare them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constants import RECIPE_ANGLE_SENSE
from .spinorbit import (
    ModeIndex,
    StateVector,
    born_probability,
    fidelity,
    hwp,
    mode_basis,
    qplate,
    qwp,
    transit_basis,
)

#: Generator matrices of the d=4 bases. M1 acts on the ordering
#: (|H,l>, |V,l>, |H,-l>, |V,-l>); see :func:`mub_d4`.
M0 = np.eye(4, dtype=complex)
M1 = 0.5 * np.array([[1, 1j, 1, -1j],
                     [1, 1j, -1, 1j],
                     [1, -1j, 1, 1j],
                     [-1, 1j, 1, 1j]])

BASIS_NAMES = {2: ("zeta", "xi"), 4: ("psi", "phi")}


@dataclass(frozen=True)
class MubSet:
    d: int
    ell: int
    bases: tuple  # (tuple[StateVector, ...], tuple[StateVector, ...])
    names: tuple  # ("psi", "phi")
    generator_matrices: tuple | None = None

    @property
    def basis(self):
        """Mode basis shared by every state in the set."""
        return self.bases[0][0].basis

    def labels(self, b: int | None = None) -> tuple:
        if b is None:
            return self.labels(0) + self.labels(1)
        return tuple(f"{self.names[b]}{i + 1}" for i in range(self.d))

    def states(self) -> tuple:
        return tuple(self.bases[0]) + tuple(self.bases[1])

    def state(self, label: str) -> StateVector:
        return dict(zip(self.labels(), self.states()))[label]

    def basis_of(self, label: str) -> int:
        for b in (0, 1):
            if label in self.labels(b):
                return b
        raise KeyError(label)

    def overlap_matrix(self) -> np.ndarray:
        """2d x 2d matrix of |<a|b>|^2 over all states (rows prepared, columns projected)."""
        s = self.states()
        return np.array([[born_probability(a, b) for b in s] for a in s])

    def check(self, tol: float = 1e-12) -> float:
        """Largest deviation from orthonormality / 1/d unbiasedness."""
        P = self.overlap_matrix()
        d = self.d
        target = np.full((2 * d, 2 * d), 1.0 / d)
        target[:d, :d] = np.eye(d)
        target[d:, d:] = np.eye(d)
        err = float(np.max(np.abs(P - target)))
        if err > tol:
            raise ValueError(f"bases are not mutually unbiased (max error {err:.3g})")
        return err

    def to_text(self) -> str:
        """Row-per-state complex amplitude table."""
        head = "# d={} ell={} basis: {}".format(self.d, self.ell, " ".join(str(m) for m in self.basis))
        lines = [head]
        for label, s in zip(self.labels(), self.states()):
            amps = " ".join(f"{a.real:+.12f}{a.imag:+.12f}j" for a in s.amplitudes)
            lines.append(f"{label} {amps}")
        return "\n".join(lines) + "\n"


def mub_d2(ell: int = 1) -> MubSet:
    """zeta = (|L,-l> +- |R,+l>)/sqrt2 and xi = (|L,-l> +- i|R,+l>)/sqrt2."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    basis = (ModeIndex("L", -ell), ModeIndex("R", ell))
    r = 1 / np.sqrt(2)
    zeta = tuple(StateVector(np.array([r, s * r]), basis) for s in (1, -1))
    xi = tuple(StateVector(np.array([r, s * 1j * r]), basis) for s in (1, -1))
    return MubSet(2, ell, (zeta, xi), BASIS_NAMES[2])


def mub_d4(ell: int = 2) -> MubSet:
    """psi = natural basis (|H,l>, |H,-l>, |V,l>, |V,-l>); phi = spin-orbit superpositions.

    The phi states are the rows of ``M1`` applied to the ordering
    (|H,l>, |V,l>, |H,-l>, |V,-l>); in that ordering they reduce to
    (|L,l> +- |R,-l>)/sqrt2 and (|L,-l> +- |R,l>)/sqrt2.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    basis = mode_basis((ell, -ell))
    psi = tuple(StateVector(row, basis) for row in M0)
    m1_order = (ModeIndex("H", ell), ModeIndex("V", ell), ModeIndex("H", -ell), ModeIndex("V", -ell))
    perm = [basis.index(m) for m in m1_order]
    phi = []
    for row in M1:
        amps = np.zeros(4, dtype=complex)
        amps[perm] = row
        phi.append(StateVector(amps, basis))
    return MubSet(4, ell, (psi, tuple(phi)), BASIS_NAMES[4], (M0, M1))


def make_mubs(d: int, ell: int | None = None) -> MubSet:
    if d == 2:
        return mub_d2(ell or 1)
    if d == 4:
        return mub_d4(ell or 2)
    raise ValueError(f"unsupported dimension {d}")


@dataclass(frozen=True)
class PrepRecipe:
    """Element sequence, in propagation order. Entries are (kind, value) with
    kind in {"HWP", "QWP", "QPLATE", "NONE"}; angles in degrees as tabulated,
    the q-plate value is its charge."""

    target: str
    elements: tuple

    def __str__(self):
        parts = []
        for kind, val in self.elements:
            if kind == "NONE":
                parts.append("-")
            elif kind == "QPLATE":
                parts.append(f"QP(q={val:g})")
            else:
                parts.append(f"{kind} {val:+g}")
        return f"{self.target}: " + ", ".join(parts)


def recipes_d2(ell: int = 1) -> list:
    """HWP then a q = l/2 plate (q=1/2 on the link)."""
    table = {"zeta1": 0.0, "zeta2": 45.0, "xi1": 22.5, "xi2": -22.5}
    return [PrepRecipe(k, (("HWP", a), ("QPLATE", ell / 2))) for k, a in table.items()]


def recipes_d4(ell: int = 2) -> list:
    """QWP-QP-QWP for psi, HWP-QP-HWP (second plate possibly absent) for phi."""
    psi = {"psi1": (-45.0, -45.0), "psi2": (45.0, 45.0), "psi3": (-45.0, 45.0), "psi4": (45.0, -45.0)}
    phi = {"phi1": (0.0, 0.0), "phi2": (45.0, 0.0), "phi3": (0.0, None), "phi4": (45.0, None)}
    out = [PrepRecipe(k, (("QWP", a), ("QPLATE", ell / 2), ("QWP", b))) for k, (a, b) in psi.items()]
    for k, (a, b) in phi.items():
        last = ("NONE", None) if b is None else ("HWP", b)
        out.append(PrepRecipe(k, (("HWP", a), ("QPLATE", ell / 2), last)))
    return out


def source_state(ell: int, pol: str = "H") -> StateVector:
    """Signal photon after Alice's PBS: ``pol`` polarization, zero OAM, in the transit basis."""
    basis = transit_basis(ell)
    amps = np.zeros(len(basis), dtype=complex)
    amps[basis.index(ModeIndex(pol, 0))] = 1.0
    return StateVector(amps, basis)


def apply_recipe(recipe: PrepRecipe, state: StateVector) -> StateVector:
    """Run ``state`` through the recipe's element chain."""
    basis = state.basis
    for kind, val in recipe.elements:
        if kind == "NONE":
            continue
        if kind == "QPLATE":
            op = qplate(val, basis)
        elif kind == "HWP":
            op = hwp(RECIPE_ANGLE_SENSE * val, basis)
        elif kind == "QWP":
            op = qwp(RECIPE_ANGLE_SENSE * val, basis)
        else:
            raise ValueError(f"unknown element {kind!r}")
        state = op.apply(state)
    return state


def verify_recipe(recipe: PrepRecipe, input_state: StateVector, mubs: MubSet | None = None) -> float:
    """Fidelity of the recipe output with its labeled target state."""
    if mubs is None:
        q = next(v for k, v in recipe.elements if k == "QPLATE")
        d = 2 if recipe.target.startswith(BASIS_NAMES[2]) else 4
        mubs = make_mubs(d, int(round(2 * q)))
    out = apply_recipe(recipe, input_state)
    return fidelity(out, mubs.state(recipe.target))


def verify_all(d: int, ell: int | None = None, pol: str = "H") -> dict:
    """Fidelity of every tabulated recipe for dimension ``d``."""
    mubs = make_mubs(d, ell)
    src = source_state(mubs.ell, pol)
    recipes = recipes_d2(mubs.ell) if d == 2 else recipes_d4(mubs.ell)
    return {r.target: verify_recipe(r, src, mubs) for r in recipes}


def theoretical_matrix(mubs: MubSet):
    """Detection matrix of ideal preparation and measurement."""
    from .detection import DetectionMatrix

    return DetectionMatrix(mubs.d, mubs.labels(), mubs.labels(), mubs.overlap_matrix(), "theoretical")


def unbiasedness_error(bases: Sequence[Sequence[StateVector]]) -> float:
    """Max deviation from the MUB condition for an arbitrary list of bases."""
    d = len(bases[0])
    err = 0.0
    for i, A in enumerate(bases):
        for j, B in enumerate(bases):
            for a_idx, a in enumerate(A):
                for b_idx, b in enumerate(B):
                    want = (1.0 if a_idx == b_idx else 0.0) if i == j else 1.0 / d
                    err = max(err, abs(born_probability(a, b) - want))
    return err
