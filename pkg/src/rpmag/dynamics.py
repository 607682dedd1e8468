"""Open-system propagation of the radical pair and yield accumulation.

The master equation is

    drho/dt = -i (H_eff rho - rho H_eff^dag) + gamma * D_rfr[rho],

with H_eff(t) = H0 + H1(r(t)) - i/2 (k_b(r(t)) P_S + k_f I) combining the
coherent spin Hamiltonian with singlet recombination and spin-independent
escape, and D_rfr the trace-preserving random-field relaxation dissipator
acting on all six electron spin components.

The default scheme holds H_eff constant over each step (evaluated at the
step midpoint) and applies the exact two-sided exponential
rho -> U rho U^dag; with relaxation the step is Strang-split between
half-step RFR exponentials, which keeps every factor an exact channel.
Steps that share the same interradical distance share one exponential, and
repeated step sequences (driving periods, static stretches) are processed
as blocks so that long horizons stay cheap. A classic RK4 integrator is
available as a cross-check scheme.

The singlet yield integral(k_b(t) p_S(t) dt) and the time-integrated state
R = integral(rho dt) are accumulated by trapezoidal quadrature on the step
grid; p_S is the unnormalised Tr[P_S rho].
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _threads  # noqa: F401  (single-threaded BLAS; see module docstring)

from .constants import GAMMA_E_RAD_PER_US_UT
from .errors import ConfigError, DegenerateProbeError, HorizonError
from .model import (
    FieldSpec,
    Geometry,
    HarmonicMotion,
    Motion,
    PiecewiseMotion,
    Rates,
    SpinSystem,
    StaticMotion,
    build_static_hamiltonian,
    dipolar_coupling,
    dipolar_operator,
    exchange_coupling,
    radial_trajectory,
    recombination_rate,
)
from .spinalg import HilbertLayout, electron_pair_product, singlet_projector

SCHEMES = ("expm", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size (upper bound; may be snapped down to commensurate values),
    horizon, trace cutoff, and scheme selection."""

    dt_us: float
    t_max_us: float
    trace_epsilon: float = 1e-7
    scheme: str = "expm"

    def __post_init__(self):
        if self.dt_us <= 0:
            raise ConfigError("integrator step must be positive")
        if self.t_max_us <= self.dt_us:
            raise ConfigError("horizon must exceed the step size")
        if not 0 < self.trace_epsilon < 1e-2:
            raise ConfigError("trace cutoff must satisfy 0 < eps << 1")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")


def frequency_scale_per_us(system: SpinSystem, field: FieldSpec, geometry: Geometry) -> float:
    """Upper bound on ||H(t)||/2pi over the trajectory, in 1/us.

    Orientation-independent by construction (the Zeeman part is bounded by
    |gamma_e| B0); motion only ever increases r, so couplings are maximal
    at r0.
    """
    h_hf = build_static_hamiltonian(system, FieldSpec(0.0))
    scale = np.abs(np.linalg.eigvalsh(h_hf)).max() if system.nuclei else 0.0
    scale += GAMMA_E_RAD_PER_US_UT * field.b0_uT
    if geometry.dipolar_enabled:
        dd = np.abs(np.linalg.eigvalsh(dipolar_operator(system, geometry))).max()
        scale += dipolar_coupling(geometry.r0_A) * dd
    if geometry.exchange_enabled:
        ss = np.abs(np.linalg.eigvalsh(electron_pair_product(system.layout))).max()
        scale += 2.0 * abs(geometry.j0_rad_us) * ss
    return scale / (2.0 * np.pi)


def max_step_us(system: SpinSystem, field: FieldSpec, geometry: Geometry, motion: Motion) -> float:
    """Largest admissible step: 20 points per fastest period."""
    f = frequency_scale_per_us(system, field, geometry)
    if isinstance(motion, HarmonicMotion):
        f = max(f, motion.nu_d_MHz)
    if f <= 0:
        return math.inf
    return 1.0 / (20.0 * f)


def default_config(
    system: SpinSystem,
    field: FieldSpec,
    geometry: Geometry,
    rates: Rates,
    motion: Motion,
    t_max_us: float | None = None,
    trace_epsilon: float = 1e-7,
    scheme: str = "expm",
) -> IntegratorConfig:
    """Defaults: dt = 0.1 ns for fast driving (>= 10 MHz) else 1 ns, clamped
    to the resolution bound; horizon 15/k_f unless given explicitly."""
    fast = isinstance(motion, HarmonicMotion) and motion.nu_d_MHz >= 10.0
    dt = 1e-4 if fast else 1e-3
    dt = min(dt, max_step_us(system, field, geometry, motion))
    if t_max_us is None:
        if rates.kf_per_us <= 0:
            raise ConfigError("horizon required explicitly when the escape rate is zero")
        t_max_us = 15.0 / rates.kf_per_us
    return IntegratorConfig(dt_us=dt, t_max_us=t_max_us, trace_epsilon=trace_epsilon, scheme=scheme)


@dataclass
class SimulationResult:
    """Time series and integrated quantities of one propagation."""

    times_us: np.ndarray
    p_s: np.ndarray
    trace: np.ndarray
    r_A: np.ndarray
    kb_per_us: np.ndarray
    phi_s: float
    integrated_state: np.ndarray
    trace_integral: float
    kf_per_us: float
    dt_us: float
    scheme: str

    @property
    def conservation_residual(self) -> float:
        """|Phi_S + k_f * integral(trace) - 1|; exact bookkeeping of the two
        reaction channels up to quadrature and horizon truncation."""
        return abs(self.phi_s + self.kf_per_us * self.trace_integral - 1.0)

    def dump_trace(self, path):
        """Write the per-node series as columnar text."""
        header = "t_us trace p_S r_A kb_per_us"
        data = np.column_stack([self.times_us, self.trace, self.p_s, self.r_A, self.kb_per_us])
        np.savetxt(path, data, header=header, fmt="%.9g")


# --- random-field relaxation ----------------------------------------------

def _electron_component_ops(layout: HilbertLayout) -> np.ndarray:
    """All six electron spin components stacked as (6, d, d)."""
    return np.concatenate([layout.electron_operators(0), layout.electron_operators(1)])


def rfr_dissipator(gamma_per_us: float, layout: HilbertLayout):
    """Return rho -> gamma * sum_{i,k} (S rho S - 1/2 {S^2, rho}).

    Uncorrelated white-noise fields of equal strength on every Cartesian
    electron spin component; trace-preserving and unital.
    """
    if gamma_per_us < 0:
        raise ConfigError("relaxation rate must be >= 0")
    d = layout.dim
    if gamma_per_us == 0:
        zero = np.zeros((d, d), dtype=complex)
        return lambda rho: zero
    ops = _electron_component_ops(layout)
    sq_half = 0.5 * np.einsum("kab,kbc->ac", ops, ops)

    def apply(rho: np.ndarray) -> np.ndarray:
        sandwich = np.einsum("kab,bc,kcd->ad", ops, rho, ops)
        return gamma_per_us * (sandwich - sq_half @ rho - rho @ sq_half)

    return apply


def rfr_superoperator(gamma_per_us: float, layout: HilbertLayout) -> np.ndarray:
    """Matrix of the RFR dissipator acting on row-major vectorised rho."""
    if gamma_per_us < 0:
        raise ConfigError("relaxation rate must be >= 0")
    d = layout.dim
    eye = np.eye(d)
    out = np.zeros((d * d, d * d), dtype=complex)
    if gamma_per_us == 0:
        return out
    for s in _electron_component_ops(layout):
        s2 = s @ s
        out += np.kron(s, s.T) - 0.5 * (np.kron(s2, eye) + np.kron(eye, s2.T))
    return gamma_per_us * out


def liouvillian(h_eff: np.ndarray, rfr_matrix: np.ndarray | None = None) -> np.ndarray:
    """Generator of vec(rho): -i (H_eff x I - I x conj(H_eff)) + RFR part."""
    d = h_eff.shape[0]
    eye = np.eye(d)
    lv = -1j * (np.kron(h_eff, eye) - np.kron(eye, h_eff.conj()))
    if rfr_matrix is not None:
        lv = lv + rfr_matrix
    return lv


# --- step planning ---------------------------------------------------------

@dataclass
class _Block:
    """A run of steps repeated `repeats` times; entries index unique_r."""

    indices: np.ndarray
    repeats: int


@dataclass
class StepPlan:
    """Realised uniform grid plus the per-step interradical distances.

    ``step_r_idx[n]`` indexes ``unique_r`` for the propagator of step n
    (midpoint evaluation); ``node_r[n]`` is the distance at node n used for
    the recombination-rate quadrature. For piecewise motion,
    ``step_segment``/``node_segment`` record which control segment each
    step/node falls in (the final segment extends past the horizon).
    """

    dt_us: float
    n_steps: int
    unique_r: np.ndarray
    step_r_idx: np.ndarray
    node_r: np.ndarray
    blocks: list
    step_segment: np.ndarray | None = None
    node_segment: np.ndarray | None = None

    @property
    def node_times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt_us


def _unique_rounded(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.unique(np.round(values, 12), return_inverse=True)


def build_step_plan(motion: Motion, geometry: Geometry, dt_target: float, t_max: float) -> StepPlan:
    """Snap the step to the motion's natural subdivision and lay out blocks."""
    if isinstance(motion, HarmonicMotion):
        period = motion.period_us
        m = max(1, math.ceil(period / dt_target - 1e-9))
        dt = period / m
        n = math.ceil(t_max / dt - 1e-9)
        # only phases that actually occur (the horizon may end mid-period)
        m_eff = min(m, n)
        phase_mid = (np.arange(m_eff) + 0.5) / m
        r_mid = geometry.r0_A + 0.5 * motion.delta_d_A * (1.0 - np.cos(2.0 * np.pi * phase_mid))
        unique_r, inv = _unique_rounded(r_mid)
        step_idx = inv[np.arange(n) % m]
        phase_node = (np.arange(n + 1) % m) / m
        node_r = geometry.r0_A + 0.5 * motion.delta_d_A * (1.0 - np.cos(2.0 * np.pi * phase_node))
        blocks = [_Block(inv, n // m)] if n >= m else []
        if n % m:
            blocks.append(_Block(inv[: n % m], 1))
        return StepPlan(dt, n, unique_r, step_idx, node_r, blocks)

    if isinstance(motion, PiecewiseMotion):
        n_sub = max(1, math.ceil(motion.segment_dt_us / dt_target - 1e-9))
        dt = motion.segment_dt_us / n_sub
        n = math.ceil(t_max / dt - 1e-9)
        n_seg = motion.displacements_A.size
        steps = np.arange(n)
        seg_mid = np.minimum((2 * steps + 1) // (2 * n_sub), n_seg - 1)
        r_seg = geometry.r0_A + motion.displacements_A
        unique_r, seg_to_unique = _unique_rounded(r_seg)
        step_idx = seg_to_unique[seg_mid]
        seg_node = np.minimum(np.arange(n + 1) // n_sub, n_seg - 1)
        node_r = r_seg[seg_node]
        window = min(n, n_seg * n_sub)
        blocks = [_Block(step_idx[:window], 1)] if window else []
        tail = n - window
        if tail > 0:
            b = min(tail, 1024)
            tail_idx = np.full(b, step_idx[-1])
            if tail // b:
                blocks.append(_Block(tail_idx, tail // b))
            if tail % b:
                blocks.append(_Block(tail_idx[: tail % b], 1))
        return StepPlan(
            dt, n, unique_r, step_idx, node_r, blocks,
            step_segment=seg_mid, node_segment=seg_node,
        )

    if isinstance(motion, StaticMotion):
        dt = dt_target
        n = math.ceil(t_max / dt - 1e-9)
        unique_r = np.array([geometry.r0_A])
        step_idx = np.zeros(n, dtype=int)
        node_r = np.full(n + 1, geometry.r0_A)
        b = min(n, 1024)
        blocks = [_Block(np.zeros(b, dtype=int), n // b)]
        if n % b:
            blocks.append(_Block(np.zeros(n % b, dtype=int), 1))
        return StepPlan(dt, n, unique_r, step_idx, node_r, blocks)

    raise TypeError(f"unknown motion spec {motion!r}")


# --- operator assembly ------------------------------------------------------

@dataclass
class ModelOperators:
    """Operators shared by every step of one propagation."""

    h_static: np.ndarray
    dip_op: np.ndarray | None
    exch_op: np.ndarray | None
    p_s: np.ndarray
    layout: HilbertLayout

    @classmethod
    def build(cls, system: SpinSystem, field: FieldSpec, geometry: Geometry):
        return cls(
            h_static=build_static_hamiltonian(system, field),
            dip_op=dipolar_operator(system, geometry) if geometry.dipolar_enabled else None,
            exch_op=electron_pair_product(system.layout) if geometry.exchange_enabled else None,
            p_s=singlet_projector(system.layout),
            layout=system.layout,
        )

    def effective_at(self, geometry: Geometry, rates: Rates, r: float) -> np.ndarray:
        return self.effective_stack(geometry, rates, np.array([r]))[0]

    def effective_stack(self, geometry: Geometry, rates: Rates, r: np.ndarray) -> np.ndarray:
        """H_eff for every distance in ``r`` at once, shape (len(r), d, d)."""
        r = np.asarray(r, dtype=float)
        d = self.h_static.shape[0]
        h = np.broadcast_to(self.h_static, (r.size, d, d)).copy()
        if self.dip_op is not None:
            h -= dipolar_coupling(r)[:, None, None] * self.dip_op
        if self.exch_op is not None:
            j = exchange_coupling(geometry.j0_rad_us, geometry.beta_per_A, r, geometry.r0_A)
            h -= 2.0 * j[:, None, None] * self.exch_op
        kb = recombination_rate(rates.kb0_per_us, geometry.beta_per_A, r, geometry.r0_A)
        h = h - 0.5j * kb[:, None, None] * self.p_s
        h -= 0.5j * rates.kf_per_us * np.eye(d)
        return h


def expm_stack(mats: np.ndarray) -> np.ndarray:
    """Matrix exponentials of a stack (n, d, d)."""
    return scipy.linalg.expm(mats)


def _prefix_products(u_seq: np.ndarray) -> np.ndarray:
    """Left-multiplied prefix products V_k = U_{k-1} ... U_0, shape (L+1, d, d).

    Computed chunk-wise so the Python-level call count scales like sqrt(L)
    rather than L.
    """
    L, d = u_seq.shape[0], u_seq.shape[1]
    if L <= 8:
        v = np.empty((L + 1, d, d), dtype=complex)
        v[0] = np.eye(d)
        for k in range(L):
            v[k + 1] = u_seq[k] @ v[k]
        return v
    c = max(1, int(math.isqrt(L)))
    n_chunks = (L + c - 1) // c
    pad = n_chunks * c - L
    if pad:
        u_seq = np.concatenate([u_seq, np.broadcast_to(np.eye(d, dtype=complex), (pad, d, d))])
    chunks = u_seq.reshape(n_chunks, c, d, d)
    pref = np.empty((n_chunks, c + 1, d, d), dtype=complex)
    pref[:, 0] = np.eye(d)
    for k in range(c):
        pref[:, k + 1] = chunks[:, k] @ pref[:, k]
    starts = np.empty((n_chunks + 1, d, d), dtype=complex)
    starts[0] = np.eye(d)
    for j in range(n_chunks):
        starts[j + 1] = pref[j, c] @ starts[j]
    full = pref[:, :c] @ starts[:n_chunks, None]
    v = np.empty((L + 1, d, d), dtype=complex)
    v[:L] = full.reshape(n_chunks * c, d, d)[:L]
    v[L] = starts[n_chunks] if pad == 0 else full[L // c, L % c]
    return v


def _matrix_powers(mat: np.ndarray, count: int) -> np.ndarray:
    """Powers mat^0 ... mat^(count-1), stacked, built by repeated doubling."""
    d = mat.shape[0]
    out = np.empty((count, d, d), dtype=complex)
    out[0] = np.eye(d)
    have = 1
    while have < count:
        ext = min(have, count - have)
        step = out[have - 1] @ mat
        out[have : have + ext] = step @ out[:ext]
        have += ext
    return out


# --- propagation -------------------------------------------------------------

def propagate(
    system: SpinSystem,
    field: FieldSpec,
    geometry: Geometry,
    rates: Rates,
    motion: Motion,
    gamma_per_us: float = 0.0,
    config: IntegratorConfig | None = None,
) -> SimulationResult:
    """Evolve rho from P_S/Z and accumulate yield, trace, and integral(rho dt).

    Stops at the horizon or once the trace falls below the cutoff. Raises
    HorizonError if the trace has not converged at the horizon while the
    escape channel is closed (k_f = 0), and ConfigError when the requested
    step is too coarse for the model's fastest timescale.
    """
    if gamma_per_us < 0:
        raise ConfigError("relaxation rate must be >= 0")
    if config is None:
        config = default_config(system, field, geometry, rates, motion)
    bound = max_step_us(system, field, geometry, motion)
    if config.dt_us > bound * (1.0 + 1e-9):
        raise ConfigError(
            f"step {config.dt_us:.3e} us exceeds the resolution bound {bound:.3e} us "
            "(20 points per fastest period)"
        )

    ops = ModelOperators.build(system, field, geometry)
    plan = build_step_plan(motion, geometry, config.dt_us, config.t_max_us)
    rho0 = ops.p_s / system.nuclear_dim

    if config.scheme == "rk4":
        series = _propagate_rk4(ops, geometry, rates, motion, gamma_per_us, plan, rho0, config)
    elif gamma_per_us > 0:
        series = _propagate_liouville(ops, geometry, rates, gamma_per_us, plan, rho0, config)
    else:
        series = _propagate_hilbert_blocked(ops, geometry, rates, plan, rho0, config)

    p_s, trace, r_raw, rho_end, n_eff = series
    dt = plan.dt_us
    times = np.arange(n_eff + 1) * dt
    node_r = plan.node_r[: n_eff + 1]
    kb_node = recombination_rate(rates.kb0_per_us, geometry.beta_per_A, node_r, geometry.r0_A)

    if rates.kf_per_us == 0 and trace[-1] > config.trace_epsilon and n_eff == plan.n_steps:
        raise HorizonError(
            f"trace {trace[-1]:.3e} still above cutoff {config.trace_epsilon:.1e} at the "
            f"{config.t_max_us} us horizon with no escape channel"
        )

    integrated = dt * (r_raw + 0.5 * (rho_end - rho0))
    integrated = 0.5 * (integrated + integrated.conj().T)
    phi_s = float(np.trapezoid(kb_node * p_s, dx=dt))
    trace_integral = float(np.trapezoid(trace, dx=dt))
    return SimulationResult(
        times_us=times,
        p_s=p_s,
        trace=trace,
        r_A=node_r,
        kb_per_us=np.asarray(kb_node),
        phi_s=phi_s,
        integrated_state=integrated,
        trace_integral=trace_integral,
        kf_per_us=rates.kf_per_us,
        dt_us=dt,
        scheme=config.scheme,
    )


def _propagate_hilbert_blocked(ops, geometry, rates, plan, rho0, config):
    """gamma = 0 path: per-step two-sided exponentials, block-accelerated.

    For each block the partial products V_k = U_{k-1}...U_0 are formed once;
    a whole repeat of the block then costs two batched contractions instead
    of a per-step Python loop. Node k of a repeat starting at state rho is
    V_k rho V_k^dag, so observables come from the precomputed sandwiches
    W_k = V_k^dag P_S V_k and T_k = V_k^dag V_k.
    """
    d = rho0.shape[0]
    heffs = ops.effective_stack(geometry, rates, plan.unique_r)
    u_stack = expm_stack(-1j * plan.dt_us * heffs)
    if u_stack.ndim == 2:
        u_stack = u_stack[None]

    n = plan.n_steps
    p_s = np.empty(n + 1)
    trace = np.empty(n + 1)
    r_raw = np.zeros((d, d), dtype=complex)
    rho = rho0
    node = 0
    eps = config.trace_epsilon

    for block in plan.blocks:
        L = len(block.indices)
        reps = block.repeats
        v = _prefix_products(u_stack[block.indices])
        vh = np.ascontiguousarray(v.conj().transpose(0, 2, 1))
        wt = np.concatenate(
            [
                (vh[:L] @ (ops.p_s @ v[:L])).reshape(L, d * d),
                (vh[:L] @ v[:L]).reshape(L, d * d),
            ]
        )
        # States at the start of every repeat of this block: powers of the
        # block's full product applied to rho. Node k of repeat p is then
        # V_k rho_p V_k^dag, so all observables come from one matmul.
        powers = _matrix_powers(v[L], reps)
        rho_stack = (powers @ rho) @ powers.conj().transpose(0, 2, 1)
        vals = (rho_stack.transpose(0, 2, 1).reshape(reps, d * d) @ wt.T).real
        pvals, tvals = vals[:, :L], vals[:, L:]

        below = tvals < eps
        if below.any():
            flat = int(np.argmax(below.ravel()))
            p_cut, k_cut = divmod(flat, L)
            stop = node + p_cut * L
            p_s[node : stop + k_cut + 1] = np.concatenate(
                [pvals[:p_cut].ravel(), pvals[p_cut, : k_cut + 1]]
            )
            trace[node : stop + k_cut + 1] = np.concatenate(
                [tvals[:p_cut].ravel(), tvals[p_cut, : k_cut + 1]]
            )
            # node stop + k_cut is the final node (half weight applied by the
            # caller); everything before it keeps full weight in r_raw
            rho_sum = rho_stack[:p_cut].sum(axis=0)
            r_raw += ((v[:L] @ rho_sum) @ vh[:L]).sum(axis=0)
            if k_cut > 0:
                r_raw += ((v[:k_cut] @ rho_stack[p_cut]) @ vh[:k_cut]).sum(axis=0)
            rho_end = v[k_cut] @ rho_stack[p_cut] @ vh[k_cut]
            n_eff = stop + k_cut
            return p_s[: n_eff + 1], trace[: n_eff + 1], r_raw, rho_end, n_eff

        p_s[node : node + reps * L] = pvals.ravel()
        trace[node : node + reps * L] = tvals.ravel()
        r_raw += ((v[:L] @ rho_stack.sum(axis=0)) @ vh[:L]).sum(axis=0)
        rho = v[L] @ rho_stack[-1] @ vh[L]
        node += reps * L
    p_s[node] = np.trace(ops.p_s @ rho).real
    trace[node] = np.trace(rho).real
    return p_s[: node + 1], trace[: node + 1], r_raw, rho, node


def rfr_half_step(gamma: float, layout: HilbertLayout, dt_us: float) -> np.ndarray:
    """exp(dt/2 * gamma * D_rfr) acting on row-major vectorised rho."""
    return scipy.linalg.expm(0.5 * dt_us * rfr_superoperator(gamma, layout))


def _propagate_liouville(ops, geometry, rates, gamma, plan, rho0, config):
    """gamma > 0 path: Strang split per step.

    The trace-preserving RFR exponential (one matrix, shared by every step)
    wraps the exact non-Hermitian reaction/coherent sandwich. Both factors
    are exact channels, so the two-channel trace bookkeeping is unaffected;
    the splitting error is O(dt^2 * gamma * ||H||) on coherences and
    vanishes for H = 0.
    """
    d = rho0.shape[0]
    heffs = ops.effective_stack(geometry, rates, plan.unique_r)
    u_stack = expm_stack(-1j * plan.dt_us * heffs)
    if u_stack.ndim == 2:
        u_stack = u_stack[None]
    u_dag = np.ascontiguousarray(u_stack.conj().transpose(0, 2, 1))
    s_half = rfr_half_step(gamma, ops.layout, plan.dt_us)

    n = plan.n_steps
    p_s = np.empty(n + 1)
    trace = np.empty(n + 1)
    p_s[0] = np.trace(ops.p_s @ rho0).real
    trace[0] = np.trace(rho0).real
    r_raw = np.zeros((d, d), dtype=complex)
    rho = rho0
    n_eff = n
    for step in range(n):
        r_raw += rho
        rho = (s_half @ rho.ravel()).reshape(d, d)
        idx = plan.step_r_idx[step]
        rho = u_stack[idx] @ rho @ u_dag[idx]
        rho = (s_half @ rho.ravel()).reshape(d, d)
        p_s[step + 1] = np.trace(ops.p_s @ rho).real
        trace[step + 1] = np.trace(rho).real
        if trace[step + 1] < config.trace_epsilon:
            n_eff = step + 1
            break
    return p_s[: n_eff + 1], trace[: n_eff + 1], r_raw, rho, n_eff


def _propagate_rk4(ops, geometry, rates, motion, gamma, plan, rho0, config):
    """Classic RK4 on the master equation with r(t) sampled at stage times."""
    dt = plan.dt_us
    n = plan.n_steps
    dissipate = rfr_dissipator(gamma, ops.layout)

    def rhs(t, rho):
        r = radial_trajectory(motion, geometry, t)
        heff = ops.effective_at(geometry, rates, r)
        out = -1j * (heff @ rho - rho @ heff.conj().T)
        if gamma > 0:
            out = out + dissipate(rho)
        return out

    d = rho0.shape[0]
    p_s = np.empty(n + 1)
    trace = np.empty(n + 1)
    p_s[0] = np.trace(ops.p_s @ rho0).real
    trace[0] = np.trace(rho0).real
    r_raw = np.zeros((d, d), dtype=complex)
    rho = rho0
    n_eff = n
    for step in range(n):
        t = step * dt
        r_raw += rho
        k1 = rhs(t, rho)
        k2 = rhs(t + dt / 2, rho + dt / 2 * k1)
        k3 = rhs(t + dt / 2, rho + dt / 2 * k2)
        k4 = rhs(t + dt, rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        p_s[step + 1] = np.trace(ops.p_s @ rho).real
        trace[step + 1] = np.trace(rho).real
        if trace[step + 1] < config.trace_epsilon:
            n_eff = step + 1
            break
    return p_s[: n_eff + 1], trace[: n_eff + 1], r_raw, rho, n_eff


# --- steady-state probe -------------------------------------------------------

def steady_state(integrated_state: np.ndarray) -> np.ndarray:
    """Normalised probe sigma_ss = R / Tr R from the time-integrated state.

    Generation-rate and concentration prefactors cancel under the
    normalisation and are not modelled.
    """
    tr = np.trace(integrated_state).real
    if tr <= 0:
        raise DegenerateProbeError(f"integrated state has non-positive trace {tr:.3e}")
    sigma = integrated_state / tr
    return 0.5 * (sigma + sigma.conj().T)


def conditional_singlet_probability(sigma: np.ndarray, singlet_proj: np.ndarray) -> float:
    """Singlet weight of the normalised probe, conditioned on survival."""
    return float(np.trace(singlet_proj @ sigma).real)
