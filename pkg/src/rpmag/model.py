"""Radical-pair model: spin system, field, couplings, rates, and motion.

Builds the static electron Zeeman + hyperfine Hamiltonian and the
distance-dependent interaction Hamiltonian (electron-electron dipolar and
exchange terms). Interradical motion enters through a scalar trajectory
r(t) along a fixed axis; it modulates the dipolar coupling as 1/r^3 and
the exchange coupling and singlet recombination rate as exp(-beta (r-r0)).

All builders are pure functions of immutable inputs and return dense
complex arrays in rad/us.
"""

from dataclasses import dataclass, field as dataclass_field
from functools import cached_property
from typing import Union

import numpy as np

from .constants import DIPOLAR_RAD_US_A3, GAMMA_E_RAD_PER_US_MT, GAMMA_E_RAD_PER_US_UT, TOL
from .errors import ConfigError
from .spinalg import HilbertLayout, electron_pair_product, require_hermitian


@dataclass(frozen=True)
class Nucleus:
    """One magnetic nucleus hyperfine-coupled to one of the two electrons.

    ``tensor_mT`` is the 3x3 hyperfine coupling tensor in mT (no symmetry
    assumed); ``radical`` is 1 or 2 and selects the electron it couples to.
    """

    name: str
    multiplicity: int
    tensor_mT: np.ndarray
    radical: int

    def __post_init__(self):
        t = np.asarray(self.tensor_mT, dtype=float)
        if t.shape != (3, 3):
            raise ConfigError(f"nucleus {self.name}: hyperfine tensor must be 3x3, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ConfigError(f"nucleus {self.name}: hyperfine tensor has non-finite entries")
        if self.multiplicity < 2:
            raise ConfigError(f"nucleus {self.name}: multiplicity must be >= 2")
        if self.radical not in (1, 2):
            raise ConfigError(f"nucleus {self.name}: radical index must be 1 or 2")
        object.__setattr__(self, "tensor_mT", t)

    @property
    def tensor_rad_us(self) -> np.ndarray:
        """Hyperfine tensor in angular-frequency units (rad/us)."""
        return self.tensor_mT * GAMMA_E_RAD_PER_US_MT


class SpinSystem:
    """Two spin-1/2 electrons plus an arbitrary set of coupled nuclei.

    Nuclei are stored in the tensor-product order used everywhere else:
    radical-1 nuclei first, then radical-2 nuclei.
    """

    def __init__(self, nuclei: list[Nucleus] | None = None):
        nuclei = list(nuclei or [])
        self.nuclei = sorted(nuclei, key=lambda n: n.radical)

    @cached_property
    def layout(self) -> HilbertLayout:
        return HilbertLayout((2, 2) + tuple(n.multiplicity for n in self.nuclei))

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def nuclear_dim(self) -> int:
        return self.layout.nuclear_dim

    @cached_property
    def electron_spins(self) -> tuple[np.ndarray, np.ndarray]:
        """Embedded spin operators of the two electrons, each shape (3, d, d)."""
        return self.layout.electron_operators(0), self.layout.electron_operators(1)

    def __repr__(self):
        labels = [f"{n.name}(m={n.multiplicity}, radical {n.radical})" for n in self.nuclei]
        return f"SpinSystem(dim={self.dim}, nuclei=[{', '.join(labels)}])"


@dataclass(frozen=True)
class FieldSpec:
    """External magnetic field: magnitude in uT, direction (theta, phi).

    The canonical domain is theta in [0, pi], phi in [0, 2 pi); values
    outside are accepted (the direction vector is well defined for any
    angles) so that derivative probes can step across the boundaries.
    User-facing inputs are range-checked at the CLI/config layer.
    """

    b0_uT: float
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.b0_uT) or self.b0_uT < 0:
            raise ConfigError(f"field magnitude must be finite and >= 0, got {self.b0_uT}")

    @property
    def vector_uT(self) -> np.ndarray:
        st, ct = np.sin(self.theta), np.cos(self.theta)
        sp, cp = np.sin(self.phi), np.cos(self.phi)
        return self.b0_uT * np.array([st * cp, st * sp, ct])


@dataclass(frozen=True)
class Geometry:
    """Interradical geometry and coupling amplitudes.

    ``j0_rad_us`` is the exchange amplitude at the reference distance in
    rad/us (configs specify J0/2pi in MHz); ``beta_per_A`` is the shared
    exponential decay constant of exchange and recombination.
    """

    r0_A: float = 17.2
    axis: np.ndarray = dataclass_field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    j0_rad_us: float = 0.0
    beta_per_A: float = 1.4
    dipolar_enabled: bool = True
    exchange_enabled: bool = True

    def __post_init__(self):
        u = np.asarray(self.axis, dtype=float)
        if u.shape != (3,):
            raise ConfigError("interradical axis must be a 3-vector")
        norm = np.linalg.norm(u)
        if abs(norm - 1.0) > 1e-12:
            if norm == 0:
                raise ConfigError("interradical axis must be non-zero")
            u = u / norm
        object.__setattr__(self, "axis", u)
        if self.r0_A <= 0:
            raise ConfigError("reference distance r0 must be positive")
        if self.beta_per_A <= 0:
            raise ConfigError("decay constant beta must be positive")

    @property
    def j0_over_2pi_MHz(self) -> float:
        return self.j0_rad_us / (2.0 * np.pi)


@dataclass(frozen=True)
class Rates:
    """Reaction rates: spin-independent escape k_f and singlet
    recombination k_b0 at the reference distance, both in 1/us."""

    kf_per_us: float = 1.0
    kb0_per_us: float = 1.0

    def __post_init__(self):
        if self.kf_per_us < 0 or self.kb0_per_us < 0:
            raise ConfigError("rates must be non-negative")
        if self.kf_per_us == 0 and self.kb0_per_us == 0:
            raise ConfigError("at least one reaction channel must be open")


# --- interradical motion -------------------------------------------------

@dataclass(frozen=True)
class StaticMotion:
    """No motion: r(t) = r0."""


@dataclass(frozen=True)
class HarmonicMotion:
    """Outward harmonic breathing: r(t) = r0 + (amp/2)(1 - cos(2 pi nu t)).

    ``nu_d_MHz`` is the driving frequency (MHz = 1/us) and ``delta_d_A``
    the peak-to-peak amplitude, so r stays within [r0, r0 + delta_d].
    """

    nu_d_MHz: float
    delta_d_A: float = 3.0

    def __post_init__(self):
        if self.nu_d_MHz <= 0:
            raise ConfigError("driving frequency must be positive")
        if self.delta_d_A < 0:
            raise ConfigError("driving amplitude must be >= 0")

    @property
    def period_us(self) -> float:
        return 1.0 / self.nu_d_MHz


@dataclass(frozen=True)
class PiecewiseMotion:
    """Piecewise-constant displacement sequence u_j held for segment_dt each.

    r(t) = r0 + u_floor(t/segment_dt); past the last segment the final
    displacement is held indefinitely.
    """

    segment_dt_us: float
    displacements_A: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.displacements_A, dtype=float)
        if u.ndim != 1 or u.size < 1:
            raise ConfigError("displacement sequence must be a non-empty 1-D array")
        if self.segment_dt_us <= 0:
            raise ConfigError("segment duration must be positive")
        if np.any(u < 0):
            raise ConfigError("displacements must be >= 0")
        object.__setattr__(self, "displacements_A", u)

    @property
    def horizon_us(self) -> float:
        return self.segment_dt_us * self.displacements_A.size


Motion = Union[StaticMotion, HarmonicMotion, PiecewiseMotion]


def radial_trajectory(motion: Motion, geometry: Geometry, t_us) -> np.ndarray | float:
    """Interradical distance r(t) in Angstrom; accepts scalar or array t."""
    t = np.asarray(t_us, dtype=float)
    if np.any(t < -1e-15):
        raise ValueError("trajectory time must be >= 0")
    if isinstance(motion, StaticMotion):
        r = np.full(t.shape, geometry.r0_A)
    elif isinstance(motion, HarmonicMotion):
        r = geometry.r0_A + 0.5 * motion.delta_d_A * (
            1.0 - np.cos(2.0 * np.pi * motion.nu_d_MHz * t)
        )
    elif isinstance(motion, PiecewiseMotion):
        idx = np.minimum(
            np.floor(t / motion.segment_dt_us).astype(int),
            motion.displacements_A.size - 1,
        )
        r = geometry.r0_A + motion.displacements_A[idx]
    else:
        raise TypeError(f"unknown motion spec {motion!r}")
    return r if r.ndim else float(r)


# --- scalar couplings ----------------------------------------------------

def dipolar_coupling(r_A: float) -> float:
    """Point-dipole electron-electron coupling d(r) in rad/us, > 0."""
    r = np.asarray(r_A, dtype=float)
    if np.any(r <= 0):
        raise ValueError("dipolar coupling requires r > 0")
    out = DIPOLAR_RAD_US_A3 / r**3
    return out if out.ndim else float(out)


def exponential_coupling(amplitude, beta_per_A: float, r_A, r0_A: float):
    """Shared kernel amplitude * exp(-beta (r - r0)) for exchange and
    recombination."""
    return amplitude * np.exp(-beta_per_A * (np.asarray(r_A, dtype=float) - r0_A))


def exchange_coupling(j0_rad_us: float, beta_per_A: float, r_A, r0_A: float):
    """Exchange amplitude J(r) in rad/us; equals j0 at r = r0."""
    return exponential_coupling(j0_rad_us, beta_per_A, r_A, r0_A)


def recombination_rate(kb0_per_us: float, beta_per_A: float, r_A, r0_A: float):
    """Singlet recombination rate k_b(r) in 1/us; equals kb0 at r = r0."""
    if kb0_per_us < 0:
        raise ValueError("recombination amplitude must be >= 0")
    return exponential_coupling(kb0_per_us, beta_per_A, r_A, r0_A)


# --- Hamiltonian builders ------------------------------------------------

def build_static_hamiltonian(system: SpinSystem, field: FieldSpec) -> np.ndarray:
    """Electron Zeeman plus hyperfine Hamiltonian in rad/us.

    Both electrons carry the free-electron gyromagnetic ratio; the Larmor
    vector is -gamma_e B, so a positive field gives a positive Zeeman
    frequency. Hyperfine terms are S_i . A_ij . I_ij with A converted from
    mT via the same ratio.
    """
    layout = system.layout
    d = layout.dim
    s1, s2 = system.electron_spins
    omega = GAMMA_E_RAD_PER_US_UT * field.vector_uT
    h = np.einsum("k,kab->ab", omega, s1 + s2)
    for factor_offset, nuc in enumerate(system.nuclei):
        iops = layout.nucleus_operators(2 + factor_offset)
        s = s1 if nuc.radical == 1 else s2
        h = h + np.einsum("kab,kl,lbc->ac", s, nuc.tensor_rad_us, iops)
    require_hermitian(h, TOL.hermitian, "static Hamiltonian")
    return h if system.nuclei else h + np.zeros((d, d), dtype=complex)


def dipolar_operator(system: SpinSystem, geometry: Geometry) -> np.ndarray:
    """Dimensionless dipolar form 3 (S1.u)(S2.u) - S1.S2 along the axis."""
    s1, s2 = system.electron_spins
    u = geometry.axis
    s1u = np.einsum("k,kab->ab", u, s1)
    s2u = np.einsum("k,kab->ab", u, s2)
    return 3.0 * (s1u @ s2u) - electron_pair_product(system.layout)


def build_interaction_hamiltonian(system: SpinSystem, geometry: Geometry, r_A: float) -> np.ndarray:
    """Distance-dependent interaction -d(r) [3(S1.u)(S2.u) - S1.S2] - 2 J(r) S1.S2.

    Terms are included according to the geometry's dipolar/exchange flags.
    """
    d = system.dim
    h = np.zeros((d, d), dtype=complex)
    if geometry.dipolar_enabled:
        h -= dipolar_coupling(r_A) * dipolar_operator(system, geometry)
    if geometry.exchange_enabled:
        j = exchange_coupling(geometry.j0_rad_us, geometry.beta_per_A, r_A, geometry.r0_A)
        h -= 2.0 * j * electron_pair_product(system.layout)
    return h


def effective_hamiltonian(
    h: np.ndarray, kb_per_us: float, kf_per_us: float, singlet_proj: np.ndarray
) -> np.ndarray:
    """Non-Hermitian H - i (k_b/2 P_S + k_f/2 I) driving the reaction decay."""
    if kb_per_us < 0 or kf_per_us < 0:
        raise ValueError("reaction rates must be >= 0")
    d = h.shape[0]
    return h - 0.5j * (kb_per_us * singlet_proj + kf_per_us * np.eye(d))
