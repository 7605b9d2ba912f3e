"""Physical constants and the optical sign conventions used throughout the package.

Every handedness or phase convention lives here so that it can be audited in
one place. All recipe checks compare states by fidelity, so the global phase
picked by any of these conventions is never observable.

Conventions
-----------
* Circular polarization: ``|L> = (|H> + i|V>)/sqrt(2)`` and
  ``|R> = (|H> - i|V>)/sqrt(2)``, the inverse of ``|H> = (|L>+|R>)/sqrt(2)``,
  ``|V> = -i(|L>-|R>)/sqrt(2)``.
* Retarder with fast axis at angle ``theta`` and retardance ``delta``:
  ``J = Rot(-theta) @ diag(1, exp(-1j*delta)) @ Rot(theta)`` where
  ``Rot(t) = [[cos t, sin t], [-sin t, cos t]]``. For ``delta = pi`` this is
  ``[[cos 2t, sin 2t], [sin 2t, -cos 2t]]``.
* Tuned q-plate of charge ``q``: ``|L, l> -> |R, l + 2q>`` and
  ``|R, l> -> |L, l - 2q>``.
* Waveplate angles in the preparation tables are read with the opposite
  rotation sense to the Jones matrices above (looking into the beam rather
  than along it), see :data:`RECIPE_ANGLE_SENSE`.
"""

import math

#: Polarization labels; H/V is the computational basis, L/R the circular one.
LINEAR_POLS = ("H", "V")
CIRCULAR_POLS = ("L", "R")

_S2 = 1.0 / math.sqrt(2.0)

#: Components of each polarization label in the (H, V) basis.
POL_VECTORS = {
    "H": (1.0 + 0j, 0j),
    "V": (0j, 1.0 + 0j),
    "L": (_S2 + 0j, 1j * _S2),
    "R": (_S2 + 0j, -1j * _S2),
}

#: Multiplies every tabulated waveplate angle before building the Jones matrix.
RECIPE_ANGLE_SENSE = -1.0

#: Sign of the OAM shift a q-plate imparts on |L>.
QPLATE_L_SHIFT_SIGN = +1

#: Tolerances for state validity and unitarity checks.
NORM_TOL = 1e-12
UNITARY_TOL = 1e-12

# Link and source figures of the Ottawa link (Methods and main text).
SIGNAL_WAVELENGTH = 850e-9  # m
IDLER_WAVELENGTH = 775e-9  # m
LINK_LENGTH = 300.0  # m
TX_BEAM_WAIST = 12e-3  # m, at the last sending lens
RX_BEAM_WAIST = 20e-3  # m, after propagation
RX_APERTURE_RADIUS = 37.5e-3  # m, 75 mm diameter receiving lens
COINCIDENCE_WINDOW = 5e-9  # s
BIN_DURATION = 0.2  # s
BINS_PER_SETTING = 50
SOURCE_COINCIDENCE_RATE = 1e6  # Hz
SOURCE_SIGNAL_RATE = 4e6  # Hz
SOURCE_IDLER_RATE = 10e6  # Hz
SIGNAL_LOSS_DB = 7.0
IDLER_LOSS_DB = 6.0

#: Laboratory QBER without the link, used as the intrinsic optical error.
LAB_QBER = {2: 0.0083, 4: 0.0183}

# Kolmogorov turbulence constants.
FRIED_CONSTANT = 0.423  # plane-wave r0 = (0.423 k^2 Cn2 L)^(-3/5)
WANDER_CONSTANT = 2.42  # per-axis sigma^2 = 2.42 Cn2 L^3 w0^(-1/3)
KOLMOGOROV_PSD_CONSTANT = 0.023  # Phi(f) = 0.023 r0^(-5/3) f^(-11/3)
STRUCTURE_FUNCTION_CONSTANT = 6.88

#: Error threshold for d=4 with two-way classical post-processing.
TWO_WAY_THRESHOLD_D4 = 0.315
