"""Kolmogorov turbulence: Fried parameter, beam wander, phase screens and OAM crosstalk.

Conversions use the plane-wave Fried relation ``r0 = (0.423 k^2 Cn2 L)^(-3/5)``
and the collimated-beam wander variance ``sigma^2 = 2.42 Cn2 L^3 w0^(-1/3)``,
where sigma^2 is the variance of the beam centroid along one transverse axis.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .constants import (
    FRIED_CONSTANT,
    KOLMOGOROV_PSD_CONSTANT,
    LINK_LENGTH,
    RX_APERTURE_RADIUS,
    RX_BEAM_WAIST,
    SIGNAL_WAVELENGTH,
    STRUCTURE_FUNCTION_CONSTANT,
    TX_BEAM_WAIST,
    WANDER_CONSTANT,
)
from .rng import stream


class NoMeasurableTurbulence(ValueError):
    """Centroid series shows no wander; the Fried parameter is unbounded."""


def wavenumber(wavelength: float) -> float:
    return 2 * math.pi / wavelength


def r0_from_cn2(cn2: float, L: float = LINK_LENGTH, wavelength: float = SIGNAL_WAVELENGTH) -> float:
    """Plane-wave Fried parameter in meters."""
    if cn2 <= 0 or L <= 0 or wavelength <= 0:
        raise ValueError("cn2, L and wavelength must be positive")
    k = wavenumber(wavelength)
    return (FRIED_CONSTANT * k * k * cn2 * L) ** (-3.0 / 5.0)


def cn2_from_r0(r0: float, L: float = LINK_LENGTH, wavelength: float = SIGNAL_WAVELENGTH) -> float:
    if r0 <= 0 or L <= 0 or wavelength <= 0:
        raise ValueError("r0, L and wavelength must be positive")
    k = wavenumber(wavelength)
    return r0 ** (-5.0 / 3.0) / (FRIED_CONSTANT * k * k * L)


def wander_sigma2_from_cn2(cn2: float, L: float, w0: float) -> float:
    """Per-axis centroid variance (m^2)."""
    if cn2 < 0 or L <= 0 or w0 <= 0:
        raise ValueError("invalid wander parameters")
    return WANDER_CONSTANT * cn2 * L ** 3 * w0 ** (-1.0 / 3.0)


@dataclass(frozen=True)
class TurbulenceParams:
    cn2: float  # m^(-2/3)
    link_length: float = LINK_LENGTH  # m
    wavelength: float = SIGNAL_WAVELENGTH  # m
    beam_waist: float = TX_BEAM_WAIST  # m

    def __post_init__(self):
        if self.cn2 <= 0 or self.link_length <= 0 or self.wavelength <= 0 or self.beam_waist <= 0:
            raise ValueError("turbulence parameters must be positive")

    @property
    def k(self) -> float:
        return wavenumber(self.wavelength)

    @property
    def r0(self) -> float:
        return r0_from_cn2(self.cn2, self.link_length, self.wavelength)

    @property
    def wander_sigma2(self) -> float:
        return wander_sigma2_from_cn2(self.cn2, self.link_length, self.beam_waist)

    @classmethod
    def from_r0(cls, r0: float, link_length: float = LINK_LENGTH, wavelength: float = SIGNAL_WAVELENGTH,
                beam_waist: float = TX_BEAM_WAIST) -> TurbulenceParams:
        return cls(cn2_from_r0(r0, link_length, wavelength), link_length, wavelength, beam_waist)

    def as_dict(self) -> dict:
        return {"cn2_m-2/3": self.cn2, "link_length_m": self.link_length, "wavelength_m": self.wavelength,
                "beam_waist_m": self.beam_waist, "r0_m": self.r0, "wander_sigma2_m2": self.wander_sigma2}


def wander_sigma2(params: TurbulenceParams) -> float:
    return params.wander_sigma2


# Centroid-based estimation -------------------------------------------------

@dataclass(frozen=True)
class CentroidSeries:
    samples: np.ndarray  # (n, 2) displacements in meters
    exposure: float = 0.07e-3  # s

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2:
            raise ValueError("centroid samples must be an (n, 2) array")
        if len(s) < 2:
            raise ValueError("need at least two centroid samples")
        object.__setattr__(self, "samples", s)

    @classmethod
    def read_csv(cls, path) -> CentroidSeries:
        """Two-column CSV of (x, y) displacements in meters; '#' lines and a
        non-numeric header row are skipped."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = [p.strip() for p in s.split(",")]
            try:
                x, y = float(parts[0]), float(parts[1])
            except (ValueError, IndexError):
                if not rows and lineno <= 2 and len(parts) == 2:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: expected two numeric columns") from None
            rows.append((x, y))
        if not rows:
            raise ValueError(f"{path}: no centroid samples")
        return cls(np.array(rows))

    def write_csv(self, path) -> None:
        lines = ["# beam centroid displacements, meters", "x_m,y_m"]
        lines += [f"{x:.9e},{y:.9e}" for x, y in self.samples]
        Path(path).write_text("\n".join(lines) + "\n")


def fried_from_centroids(series: CentroidSeries, L: float = LINK_LENGTH,
                         wavelength: float = SIGNAL_WAVELENGTH, w0: float = TX_BEAM_WAIST) -> TurbulenceParams:
    """Invert the wander model: per-axis sample variance -> Cn2 -> r0."""
    var = float(np.mean(np.var(series.samples, axis=0, ddof=1)))
    if var <= 0:
        raise NoMeasurableTurbulence("no measurable turbulence: centroid variance is zero")
    cn2 = var / (WANDER_CONSTANT * L ** 3 * w0 ** (-1.0 / 3.0))
    return TurbulenceParams(cn2, L, wavelength, w0)


def synthetic_centroids(params: TurbulenceParams, n: int, rng: np.random.Generator) -> CentroidSeries:
    """Gaussian centroid samples with the model's per-axis variance."""
    sigma = math.sqrt(params.wander_sigma2)
    return CentroidSeries(rng.normal(0.0, sigma, size=(n, 2)))


# Phase screens ----------------------------------------------------------------

@dataclass(frozen=True)
class PhaseScreen:
    phase: np.ndarray  # radians, (N, N)
    pitch: float  # m
    r0: float  # m

    @property
    def n(self) -> int:
        return self.phase.shape[0]

    def write(self, path) -> None:
        """Text header line, then N*N little-endian float64 values (row-major)."""
        header = f"# structqkd phase screen N={self.n} pitch_m={self.pitch!r} r0_m={self.r0!r} dtype=<f8\n"
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(self.phase, dtype="<f8").tobytes())

    @classmethod
    def read(cls, path) -> PhaseScreen:
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii")
            fields = dict(kv.split("=", 1) for kv in header.split() if "=" in kv)
            n = int(fields["N"])
            data = np.frombuffer(fh.read(), dtype="<f8")
        if data.size != n * n:
            raise ValueError(f"{path}: expected {n * n} values, found {data.size}")
        return cls(data.reshape(n, n).copy(), float(fields["pitch_m"]), float(fields["r0_m"]))


def _check_grid(n: int, pitch: float) -> None:
    if n < 4 or n & (n - 1):
        raise ValueError("grid size must be a power of two >= 4")
    if pitch <= 0:
        raise ValueError("pixel pitch must be positive")


def kolmogorov_psd(f: np.ndarray, r0: float) -> np.ndarray:
    """Phase PSD in cycles/m: 0.023 r0^(-5/3) f^(-11/3), zero at f = 0."""
    with np.errstate(divide="ignore"):
        psd = KOLMOGOROV_PSD_CONSTANT * r0 ** (-5.0 / 3.0) * f ** (-11.0 / 3.0)
    psd[f == 0] = 0.0
    return psd


@lru_cache(maxsize=8)
def _fft_amplitude(n: int, pitch: float) -> np.ndarray:
    """sqrt(PSD)*df for r0 = 1, in numpy FFT frequency order."""
    df = 1.0 / (n * pitch)
    fx = np.fft.fftfreq(n, pitch)
    f = np.hypot(fx[None, :], fx[:, None])
    return np.sqrt(kolmogorov_psd(f, 1.0)) * df


def _cell_mean_psd(fx, fy, df, sub: int = 16):
    """PSD averaged over the square cell of width ``df`` around each (fx, fy).

    Point sampling badly misjudges the power in the coarse subharmonic cells,
    where the spectrum changes by orders of magnitude across one cell.
    """
    o = (np.arange(sub) + 0.5) / sub - 0.5
    ox, oy = np.meshgrid(o, o)
    f = np.hypot(fx[:, None] + ox.ravel() * df, fy[:, None] + oy.ravel() * df)
    return kolmogorov_psd(f, 1.0).mean(axis=1)


@lru_cache(maxsize=8)
def _subharmonic_basis(n: int, pitch: float, levels: int):
    """Per-level (amplitudes(9), exp kernels (9, n, n)) for r0 = 1."""
    D = n * pitch
    x = (np.arange(n) - n / 2) * pitch
    X, Y = np.meshgrid(x, x)
    out = []
    for p in range(1, levels + 1):
        df = 1.0 / (3 ** p * D)
        fx = np.array([-1, 0, 1]) * df
        FX, FY = np.meshgrid(fx, fx)
        amp = np.sqrt(_cell_mean_psd(FX.ravel(), FY.ravel(), df)) * df
        amp[4] = 0.0  # the centre cell is piston
        kern = np.exp(2j * np.pi * (FX.ravel()[:, None, None] * X + FY.ravel()[:, None, None] * Y))
        out.append((amp, kern))
    return out


def kolmogorov_screen(r0: float, n: int, pitch: float, rng: np.random.Generator,
                      subharmonics: int = 3) -> PhaseScreen:
    """FFT phase screen with ``subharmonics`` levels of low-frequency augmentation.

    White complex Gaussian noise is filtered by the Kolmogorov spectrum; the
    real part of the inverse transform is one screen. The subharmonic grids
    (3x3 frequencies at df/3^p) restore the tilt the FFT grid misses.
    Piston is removed.
    """
    _check_grid(n, pitch)
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    scale = r0 ** (-5.0 / 6.0)
    cn = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * _fft_amplitude(n, pitch)
    phz = np.real(np.fft.ifft2(cn)) * n * n
    if subharmonics:
        lo = np.zeros((n, n), dtype=complex)
        for amp, kern in _subharmonic_basis(n, pitch, subharmonics):
            c = (rng.standard_normal(9) + 1j * rng.standard_normal(9)) * amp
            lo += np.tensordot(c, kern, axes=1)
        phz = phz + lo.real
    phz = scale * phz
    return PhaseScreen(phz - phz.mean(), pitch, r0)


def screen_ensemble(r0: float, n: int, pitch: float, count: int, seed: int = 0,
                    subharmonics: int = 3, threads: int = 1) -> list:
    """``count`` independent screens; screen i uses stream (seed, i) for any thread count."""
    def one(i):
        return kolmogorov_screen(r0, n, pitch, stream(seed, "screen", i), subharmonics)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(count)))
    return [one(i) for i in range(count)]


def structure_function(screens, max_shift: int) -> np.ndarray:
    """Ensemble D(r) for integer pixel shifts 1..max_shift, averaged over x and y."""
    acc = np.zeros(max_shift)
    for s in screens:
        ph = s.phase if isinstance(s, PhaseScreen) else np.asarray(s)
        for k in range(1, max_shift + 1):
            dx = ph[:, k:] - ph[:, :-k]
            dy = ph[k:, :] - ph[:-k, :]
            acc[k - 1] += 0.5 * (np.mean(dx * dx) + np.mean(dy * dy))
    return acc / len(screens)


def kolmogorov_structure(r, r0: float):
    """Theoretical 6.88 (r/r0)^(5/3)."""
    return STRUCTURE_FUNCTION_CONSTANT * (np.asarray(r) / r0) ** (5.0 / 3.0)


# OAM crosstalk -------------------------------------------------------------------

def ring_mode(ell: int, n: int, pitch: float, waist: float = RX_BEAM_WAIST) -> np.ndarray:
    """Doughnut profile (r/w)^|l| exp(-r^2/w^2) exp(i l theta) on the grid (unnormalized)."""
    x = (np.arange(n) - (n - 1) / 2) * pitch
    X, Y = np.meshgrid(x, x)
    r = np.hypot(X, Y)
    theta = np.arctan2(Y, X)
    return (r / waist) ** abs(ell) * np.exp(-(r / waist) ** 2) * np.exp(1j * ell * theta)


def orthonormal_modes(profiles, pitch: float, aperture: np.ndarray | None = None) -> np.ndarray:
    """Symmetric (Loewdin) orthonormalization of mode profiles over the aperture."""
    U = np.array([np.asarray(p) for p in profiles], dtype=complex)
    if aperture is not None:
        U = U * aperture
    flat = U.reshape(len(U), -1) * pitch
    S = flat.conj() @ flat.T
    w, V = np.linalg.eigh(S)
    if w.min() <= 1e-12 * w.max():
        raise ValueError("mode profiles are linearly dependent on this grid")
    S_inv_half = V @ np.diag(w ** -0.5) @ V.conj().T
    return (S_inv_half.T @ U.reshape(len(U), -1)).reshape(U.shape)


def crosstalk_matrix(modes, screens, aperture: np.ndarray | float | None = None,
                     pitch: float | None = None) -> np.ndarray:
    """C[i, j] = <|<u_j| exp(i phi) |u_i>|^2> over the screen ensemble.

    Row i is the sent mode. ``modes`` must be orthonormal over the aperture
    (see :func:`orthonormal_modes`); ``aperture`` is a boolean mask or a radius
    in meters. Rows sum to at most one; the deficit is power scattered out of
    the listed modes.
    """
    modes = np.asarray(modes, dtype=complex)
    shape = modes.shape[1:]
    phases = [s.phase if isinstance(s, PhaseScreen) else np.asarray(s) for s in screens]
    if any(p.shape != shape for p in phases):
        raise ValueError("screen grid does not match mode grid")
    if pitch is None:
        pitch = screens[0].pitch if isinstance(screens[0], PhaseScreen) else 1.0
    if aperture is None:
        mask = np.ones(shape, dtype=bool)
    elif np.isscalar(aperture):
        n = shape[0]
        x = (np.arange(n) - (n - 1) / 2) * pitch
        mask = np.hypot(*np.meshgrid(x, x)) <= float(aperture)
    else:
        mask = np.asarray(aperture, dtype=bool)
    m = modes * mask
    flat = m.reshape(len(m), -1)
    C = np.zeros((len(m), len(m)))
    for ph in phases:
        T = (flat.conj() @ (np.exp(1j * ph.ravel())[None, :] * flat).T) * pitch * pitch
        # T[j, i] = <u_j| e^{i phi} |u_i>
        C += np.abs(T.T) ** 2
    return C / len(phases)


@dataclass(frozen=True)
class CrosstalkModel:
    """Probabilities that a received |+l> (or |-l>) photon stays, flips sign, or is lost."""

    ell: int
    stay: float
    flip: float

    @property
    def loss(self) -> float:
        return max(0.0, 1.0 - self.stay - self.flip)


@lru_cache(maxsize=32)
def oam_transfer(ell: int, r0: float, n: int = 64, aperture_radius: float = RX_APERTURE_RADIUS,
                 waist: float = RX_BEAM_WAIST, screens: int = 32, seed: int = 0) -> np.ndarray:
    """Per-screen amplitude transfer between the +l and -l ring modes.

    Returns an array of shape (screens, 2, 2) with ``T[k, j, i] = <u_j| exp(i phi_k) |u_i>``
    in the order (+l, -l). Averaging ``T rho T^dagger`` over k gives the OAM
    channel, including the loss of coherence between +l and -l that the
    diagonal crosstalk probabilities alone do not capture. The result is
    cached and must not be modified.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    pitch = 2.2 * aperture_radius / n
    x = (np.arange(n) - (n - 1) / 2) * pitch
    mask = np.hypot(*np.meshgrid(x, x)) <= aperture_radius
    modes = orthonormal_modes([ring_mode(ell, n, pitch, waist), ring_mode(-ell, n, pitch, waist)], pitch, mask)
    flat = (modes * mask).reshape(2, -1)
    out = np.empty((screens, 2, 2), dtype=complex)
    for k, scr in enumerate(screen_ensemble(r0, n, pitch, screens, seed)):
        out[k] = (flat.conj() @ (np.exp(1j * scr.phase.ravel())[None, :] * flat).T) * pitch * pitch
    out.setflags(write=False)
    return out


def oam_crosstalk(ell: int, r0: float, n: int = 64, aperture_radius: float = RX_APERTURE_RADIUS,
                  waist: float = RX_BEAM_WAIST, screens: int = 32, seed: int = 0) -> CrosstalkModel:
    """Ensemble stay/flip probabilities between +l and -l ring modes across the receive aperture."""
    T = oam_transfer(ell, r0, n, aperture_radius, waist, screens, seed)
    C = np.mean(np.abs(T) ** 2, axis=0)  # C[j, i]: sent i, received j
    stay = 0.5 * (C[0, 0] + C[1, 1])
    flip = 0.5 * (C[0, 1] + C[1, 0])
    return CrosstalkModel(ell, float(stay), float(flip))
