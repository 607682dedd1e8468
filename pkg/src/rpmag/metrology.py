"""Fisher information and yield anisotropy of the steady-state probe.

The probe is the normalised time-integrated state sigma_ss(theta). The
two-outcome singlet/triplet measurement gives the classical Fisher
information in closed form,

    F_theta = (d Theta_S / d theta)^2 / (Theta_S (1 - Theta_S)),

with Theta_S = Tr[P_S sigma_ss]; the quantum Fisher information follows
from the spectral decomposition of sigma_ss,

    QFI = 2 sum_{p_i + p_j > cutoff} |<i| d sigma / d theta |j>|^2 / (p_i + p_j).

Derivatives are central finite differences in theta (default step 1e-3 rad)
with one step-halving consistency check; disagreement beyond 1e-3 relative
marks the estimate as non-converged rather than failing the run.
"""

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .constants import TOL
from .dynamics import IntegratorConfig, conditional_singlet_probability, propagate, steady_state
from .errors import ConfigError, DegenerateStatisticsError, NumericalDerivativeError, UndefinedRatioError
from .model import FieldSpec, Geometry, Motion, Rates, SpinSystem
from .spinalg import singlet_projector

DEFAULT_DTHETA = 1e-3
DEFAULT_RECEPTOR_COUNTS = (2e5, 2e6)

FLAG_FD_NONCONVERGED = "fd-nonconv"
FLAG_RATIO_CLAMPED = "ratio-clamped"
FLAG_RATIO_UNDEFINED = "ratio-undefined"
FLAG_DEGENERATE = "degenerate-stats"
FLAG_CONSERVATION = "conservation"
FLAG_FILTERED = "filtered"


@dataclass(frozen=True)
class OrientationGrid:
    """Paired (theta, phi) samples, with optional rectangular shape."""

    thetas: np.ndarray
    phis: np.ndarray
    shape: tuple[int, int] | None = None

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.thetas, dtype=float))
        p = np.atleast_1d(np.asarray(self.phis, dtype=float))
        if t.size == 0 or t.shape != p.shape:
            raise ConfigError("orientation grid needs matching non-empty theta/phi lists")
        if np.any(t < 0) or np.any(t > np.pi) or np.any(p < 0) or np.any(p >= 2 * np.pi + 1e-12):
            raise ConfigError("orientation grid angles out of range")
        object.__setattr__(self, "thetas", t)
        object.__setattr__(self, "phis", p)

    def __len__(self):
        return self.thetas.size

    def __iter__(self):
        return iter(zip(self.thetas, self.phis))

    @classmethod
    def full(cls, n_theta: int, n_phi: int, theta_max: float = np.pi, phi_max: float = np.pi):
        """Uniform n_theta x n_phi grid over [0, theta_max] x [0, phi_max],
        endpoints included."""
        if n_theta < 1 or n_phi < 1:
            raise ConfigError("grid counts must be >= 1")
        th = np.linspace(0.0, theta_max, n_theta)
        ph = np.linspace(0.0, phi_max, n_phi)
        tt, pp = np.meshgrid(th, ph, indexing="ij")
        return cls(tt.ravel(), pp.ravel(), shape=(n_theta, n_phi))

    @classmethod
    def theta_line(cls, n_theta: int, phi: float = 0.0, theta_max: float = np.pi):
        """Theta-only scan at fixed phi."""
        if n_theta < 1:
            raise ConfigError("grid counts must be >= 1")
        th = np.linspace(0.0, theta_max, n_theta)
        return cls(th, np.full(n_theta, phi), shape=(n_theta, 1))


# --- elementary estimators -------------------------------------------------

_SLOPE_FLOOR = 1e-9  # finite-difference noise on dTheta/dtheta, 1/rad


def cfi_from_probabilities(theta_s: float, dtheta_s: float) -> float:
    """Closed-form two-outcome CFI from Theta_S and its theta-derivative.

    A derivative below the finite-difference noise floor gives zero
    information regardless of Theta_S (covers orientation-independent
    probes); a pinned probability with a genuinely non-zero derivative has
    divergent statistics and raises.
    """
    if abs(dtheta_s) < _SLOPE_FLOOR:
        return 0.0
    den = theta_s * (1.0 - theta_s)
    if den <= 0.0:
        raise DegenerateStatisticsError(
            f"singlet probability {theta_s} pinned at the boundary with slope {dtheta_s:.3e}"
        )
    return dtheta_s * dtheta_s / den


@dataclass
class CfiResult:
    value: float
    theta_s: float
    dtheta_s: float
    fd_converged: bool = True


def cfi(
    probe,
    theta: float,
    dtheta: float = DEFAULT_DTHETA,
    singlet_proj: np.ndarray | None = None,
    fd_check: bool = True,
) -> CfiResult:
    """Classical Fisher information of the singlet/triplet measurement.

    ``probe`` maps theta to the normalised steady-state matrix. The
    derivative uses a central difference of step ``dtheta`` (halved once
    when ``fd_check`` for the convergence comparison; the halved estimate
    is the one reported).
    """
    if dtheta <= 0:
        raise ConfigError("derivative step must be positive")
    if singlet_proj is None:
        raise ConfigError("cfi needs the singlet projector of the probe space")

    def theta_s_at(angle):
        return conditional_singlet_probability(probe(angle), singlet_proj)

    def estimate(step):
        plus, minus = theta_s_at(theta + step), theta_s_at(theta - step)
        slope = (plus - minus) / (2.0 * step)
        return slope, 0.5 * (plus + minus)

    slope, ts_mid = estimate(dtheta)
    value = cfi_from_probabilities(ts_mid, slope)
    converged = True
    if fd_check:
        slope_h, ts_h = estimate(dtheta / 2.0)
        value_h = cfi_from_probabilities(ts_h, slope_h)
        scale = max(abs(value), abs(value_h))
        if scale > 0 and abs(value - value_h) > TOL.fd_agreement * scale:
            converged = False
        value, slope, ts_mid = value_h, slope_h, ts_h
    return CfiResult(value=value, theta_s=ts_mid, dtheta_s=slope, fd_converged=converged)


def qfi(
    sigma: np.ndarray,
    dsigma: np.ndarray,
    cutoff: float = TOL.qfi_eigenvalue_cutoff,
) -> float:
    """Quantum Fisher information from the spectral pair sum.

    ``dsigma`` must be (numerically) Hermitian and traceless; eigenvalue
    pairs whose combined population falls below ``cutoff`` are skipped.
    """
    herm_dev = np.abs(dsigma - dsigma.conj().T).max()
    if herm_dev > TOL.derivative_hermitian:
        raise NumericalDerivativeError(
            f"state derivative deviates from Hermiticity by {herm_dev:.2e}"
        )
    tr_dev = abs(np.trace(dsigma))
    if tr_dev > TOL.derivative_hermitian:
        raise NumericalDerivativeError(f"state derivative has trace {tr_dev:.2e}")
    p, vecs = np.linalg.eigh(0.5 * (sigma + sigma.conj().T))
    m = vecs.conj().T @ dsigma @ vecs
    psum = p[:, None] + p[None, :]
    mask = psum > cutoff
    return float(2.0 * (np.abs(m[mask]) ** 2 / psum[mask]).sum())


def qcrb_ratio(f_classical: float, f_quantum: float) -> float:
    """Degree of approach to the quantum bound, clamped to [0, 1].

    Values above 1 + 1e-6 signal derivative noise and are clamped; a
    vanishing QFI leaves the ratio undefined.
    """
    if f_quantum <= 0:
        raise UndefinedRatioError("QFI is zero; ratio undefined")
    ratio = f_classical / f_quantum
    if ratio < 0:
        return 0.0
    if ratio > 1.0:
        return 1.0
    return ratio


def anisotropy(yields: np.ndarray) -> tuple[float, int, int]:
    """Relative yield anisotropy (max - min)/mean with arg indices.

    Ties resolve to the first index in grid order.
    """
    y = np.asarray(yields, dtype=float)
    if y.size < 2:
        raise ConfigError("anisotropy needs at least two orientations")
    mean = y.mean()
    if mean <= 0:
        raise ConfigError(f"mean yield {mean:.3e} is not positive")
    imax = int(np.argmax(y))
    imin = int(np.argmin(y))
    return float((y[imax] - y[imin]) / mean), imax, imin


def angular_precision_deg(f_theta: float, receptors: float) -> float:
    """Angular uncertainty (degrees) from N independent probe measurements:
    1/sqrt(N F_theta), converted from radians. Zero information gives inf."""
    if receptors < 1:
        raise ConfigError("receptor count must be >= 1")
    if f_theta < 0:
        raise ConfigError("Fisher information must be >= 0")
    if f_theta == 0:
        return math.inf
    return math.degrees(1.0 / math.sqrt(receptors * f_theta))


# --- per-orientation evaluation ---------------------------------------------

@dataclass
class OrientationMetrics:
    """Probe metrics at one field orientation."""

    theta: float
    phi: float
    phi_s: float
    theta_s: float
    cfi: float
    qfi: float
    ratio: float | None
    flags: tuple[str, ...] = ()
    conservation_residual: float = 0.0


@dataclass
class MetrologyReport:
    """Grid-level summary plus the per-orientation table."""

    orientations: list
    grid: OrientationGrid
    gamma_anisotropy: float
    phi_s_max: float
    phi_s_min: float
    phi_s_mean: float
    argmax: tuple[float, float]
    argmin: tuple[float, float]
    precision_deg: dict = dataclass_field(default_factory=dict)

    @property
    def best_ratio(self):
        defined = [o for o in self.orientations if o.ratio is not None]
        if not defined:
            return None
        return max(defined, key=lambda o: o.ratio)

    @property
    def max_cfi(self) -> float:
        return max(o.cfi for o in self.orientations)

    @property
    def max_qfi(self) -> float:
        return max(o.qfi for o in self.orientations)


def probe_factory(
    system: SpinSystem,
    geometry: Geometry,
    rates: Rates,
    motion: Motion,
    gamma_per_us: float,
    b0_uT: float,
    phi: float,
    config: IntegratorConfig | None = None,
):
    """Return theta -> (sigma_ss, result), memoised over theta."""
    cache: dict[float, tuple] = {}

    def probe(theta: float):
        key = round(float(theta), 15)
        if key not in cache:
            field = FieldSpec(b0_uT, theta=theta, phi=phi)
            res = propagate(system, field, geometry, rates, motion, gamma_per_us, config)
            cache[key] = (steady_state(res.integrated_state), res)
        return cache[key]

    return probe


def orientation_metrics(
    system: SpinSystem,
    geometry: Geometry,
    rates: Rates,
    motion: Motion,
    gamma_per_us: float,
    b0_uT: float,
    theta: float,
    phi: float,
    dtheta: float = DEFAULT_DTHETA,
    fd_check: bool = True,
    config: IntegratorConfig | None = None,
) -> OrientationMetrics:
    """Propagate the probe around one orientation and assemble its metrics.

    Uses propagations at theta and theta +/- dtheta/2 (plus theta +/- dtheta
    when ``fd_check``); CFI and the state derivative share the smallest
    evaluated step.
    """
    proj = singlet_projector(system.layout)
    probe = probe_factory(system, geometry, rates, motion, gamma_per_us, b0_uT, phi, config)
    flags = []

    sigma_c, res_c = probe(theta)
    theta_s = conditional_singlet_probability(sigma_c, proj)

    # the reported estimates use the smallest evaluated step; the full step
    # is only evaluated (for comparison) when fd_check is on
    step = dtheta / 2.0 if fd_check else dtheta
    sig_plus, res_p = probe(theta + step)
    sig_minus, res_m = probe(theta - step)
    dsigma = (sig_plus - sig_minus) / (2.0 * step)
    slope = conditional_singlet_probability(dsigma, proj)

    try:
        f_c = cfi_from_probabilities(theta_s, slope)
    except DegenerateStatisticsError:
        f_c = 0.0
        flags.append(FLAG_DEGENERATE)

    if fd_check:
        ts_p2 = conditional_singlet_probability(probe(theta + dtheta)[0], proj)
        ts_m2 = conditional_singlet_probability(probe(theta - dtheta)[0], proj)
        slope_2 = (ts_p2 - ts_m2) / (2.0 * dtheta)
        try:
            f_c2 = cfi_from_probabilities(0.5 * (ts_p2 + ts_m2), slope_2)
            scale = max(abs(f_c), abs(f_c2))
            if scale > 0 and abs(f_c - f_c2) > TOL.fd_agreement * scale:
                flags.append(FLAG_FD_NONCONVERGED)
        except DegenerateStatisticsError:
            flags.append(FLAG_DEGENERATE)

    f_q = qfi(sigma_c, dsigma)
    if f_q > 0:
        raw = f_c / f_q
        ratio = qcrb_ratio(f_c, f_q)
        if raw > 1.0 + TOL.ratio_slack:
            flags.append(FLAG_RATIO_CLAMPED)
    else:
        ratio = None
        flags.append(FLAG_RATIO_UNDEFINED)

    residual = max(r.conservation_residual for r in (res_c, res_p, res_m))
    if residual > TOL.conservation:
        flags.append(FLAG_CONSERVATION)
    flags = list(dict.fromkeys(flags))

    return OrientationMetrics(
        theta=float(theta),
        phi=float(phi),
        phi_s=res_c.phi_s,
        theta_s=theta_s,
        cfi=f_c,
        qfi=f_q,
        ratio=ratio,
        flags=tuple(flags),
        conservation_residual=residual,
    )


def orientation_report(
    system: SpinSystem,
    geometry: Geometry,
    rates: Rates,
    motion: Motion,
    gamma_per_us: float,
    b0_uT: float,
    grid: OrientationGrid,
    dtheta: float = DEFAULT_DTHETA,
    fd_check: bool = True,
    receptor_counts=DEFAULT_RECEPTOR_COUNTS,
    config: IntegratorConfig | None = None,
) -> MetrologyReport:
    """Evaluate every grid orientation and summarise the compass signal."""
    rows = [
        orientation_metrics(
            system, geometry, rates, motion, gamma_per_us, b0_uT,
            th, ph, dtheta=dtheta, fd_check=fd_check, config=config,
        )
        for th, ph in grid
    ]
    yields = np.array([r.phi_s for r in rows])
    gamma_rel, imax, imin = anisotropy(yields)
    best_f = max(r.cfi for r in rows)
    precision = {n: angular_precision_deg(best_f, n) for n in receptor_counts}
    return MetrologyReport(
        orientations=rows,
        grid=grid,
        gamma_anisotropy=gamma_rel,
        phi_s_max=float(yields[imax]),
        phi_s_min=float(yields[imin]),
        phi_s_mean=float(yields.mean()),
        argmax=(rows[imax].theta, rows[imax].phi),
        argmin=(rows[imin].theta, rows[imin].phi),
        precision_deg=precision,
    )
