"""Physical constants, unit conversions, and numerical tolerances.

Internal unit system
--------------------
time            us
rates           1/us
angular freq    rad/us   (1 MHz of ordinary frequency = 2*pi rad/us)
distance        Angstrom
magnetic field  uT       (hyperfine tensors are configured in mT)

MHz and 1/us are numerically identical, which keeps driving frequencies,
rates, and Hamiltonian norms all within a few orders of magnitude of unity
for geomagnetic-scale problems.
"""

from dataclasses import dataclass

import numpy as np

# CODATA 2018
MU0 = 1.25663706212e-6          # vacuum permeability, T m / A
G_E = 2.00231930436256          # free-electron g-factor
MU_B = 9.2740100783e-24         # Bohr magneton, J / T
HBAR = 1.054571817e-34          # reduced Planck constant, J s

# Free-electron gyromagnetic ratio over 2*pi, MHz/mT (negative by convention).
GAMMA_E_MHZ_PER_MT = -28.025

# |gamma_e| in rad/us per mT and per uT; used for the Zeeman term and to
# convert hyperfine tensors from mT to angular frequency.
GAMMA_E_RAD_PER_US_MT = 2.0 * np.pi * abs(GAMMA_E_MHZ_PER_MT)
GAMMA_E_RAD_PER_US_UT = GAMMA_E_RAD_PER_US_MT * 1e-3

# Point-dipole prefactor mu0 g_e^2 mu_B^2 / (4 pi hbar), converted from
# rad m^3 / s to rad A^3 / us.  Dividing by r^3 (in Angstrom) gives the
# electron-electron dipolar coupling in rad/us.
DIPOLAR_RAD_US_A3 = MU0 * G_E**2 * MU_B**2 / (4.0 * np.pi * HBAR) * 1e30 * 1e-6


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared across the package."""

    hermitian: float = 1e-12        # max |A - A^dag| for operators built here
    disjoint_commute: float = 1e-14  # embeddings on distinct factors
    state_hermitian: float = 1e-10   # propagated density operators
    state_psd: float = -1e-8         # smallest admissible eigenvalue
    unit_trace: float = 1e-12
    derivative_hermitian: float = 1e-8   # FD derivative of the probe state
    qfi_eigenvalue_cutoff: float = 1e-12
    ratio_slack: float = 1e-6        # tolerated CFI/QFI overshoot above 1
    fd_agreement: float = 1e-3       # Richardson step-halving check
    conservation: float = 1e-4       # yield + escape bookkeeping residual


TOL = Tolerances()
