import numpy as np
import pytest
import scipy.linalg as sla

from rpmag.dynamics import (
    IntegratorConfig,
    build_step_plan,
    conditional_singlet_probability,
    default_config,
    max_step_us,
    propagate,
    rfr_dissipator,
    rfr_superoperator,
    steady_state,
)
from rpmag.errors import ConfigError, DegenerateProbeError, HorizonError
from rpmag.model import (
    FieldSpec,
    Geometry,
    HarmonicMotion,
    Nucleus,
    PiecewiseMotion,
    Rates,
    SpinSystem,
    StaticMotion,
    build_static_hamiltonian,
    recombination_rate,
)
from rpmag.spinalg import HilbertLayout, singlet_projector

BARE_GEO = Geometry(dipolar_enabled=False, exchange_enabled=False)
RATES = Rates(1.0, 1.0)


def n5_system(axial=1.7569):
    return SpinSystem([Nucleus("N5", 3, np.diag([-0.0989, -0.0989, axial]), 1)])


def proton_system(a_mT=0.5):
    return SpinSystem([Nucleus("H", 2, a_mT * np.eye(3), 1)])


# --- independent oracles (column-major vec convention throughout) -----------

def liouvillian_oracle(h_eff, gamma, layout):
    """Column-major-vec Liouvillian: deliberately a different convention
    from the implementation's row-major one."""
    d = h_eff.shape[0]
    eye = np.eye(d)
    lv = -1j * (np.kron(eye, h_eff) - np.kron(h_eff.conj(), eye))
    if gamma > 0:
        from rpmag.spinalg import spin_operators, embed

        for electron in (0, 1):
            for s1 in spin_operators(2):
                s = embed(s1, electron, layout.dims)
                s2 = s @ s
                lv += gamma * (
                    np.kron(s.conj(), s)
                    - 0.5 * (np.kron(eye, s2) + np.kron(s2.T, eye))
                )
    return lv


def vec_col(rho):
    return rho.flatten(order="F")


def unvec_col(v, d):
    return v.reshape(d, d, order="F")


class TestDegenerateAnalytics:
    def test_bare_pair_exponential_decay(self):
        res = propagate(SpinSystem([]), FieldSpec(0.0), BARE_GEO, RATES, StaticMotion())
        t = res.times_us
        assert np.abs(res.trace - np.exp(-2 * t)).max() < 1e-12
        assert np.abs(res.p_s - np.exp(-2 * t)).max() < 1e-12
        assert res.phi_s == pytest.approx(0.5, abs=1e-6)
        assert res.conservation_residual < 1e-4

    def test_yield_is_branching_ratio(self):
        res = propagate(SpinSystem([]), FieldSpec(0.0), BARE_GEO, Rates(3.0, 1.0), StaticMotion())
        assert res.phi_s == pytest.approx(1.0 / 4.0, abs=1e-6)

    @pytest.mark.parametrize("j0_MHz", [-50.0, 7.3, 100.0])
    def test_exchange_only_identical(self, j0_MHz):
        geo = Geometry(dipolar_enabled=False, exchange_enabled=True, j0_rad_us=2 * np.pi * j0_MHz)
        ref = propagate(SpinSystem([]), FieldSpec(0.0), BARE_GEO, RATES, StaticMotion())
        res = propagate(SpinSystem([]), FieldSpec(0.0), geo, RATES, StaticMotion())
        assert res.phi_s == pytest.approx(ref.phi_s, abs=1e-6)

    def test_degenerate_steady_state_is_singlet(self):
        res = propagate(SpinSystem([]), FieldSpec(0.0), BARE_GEO, RATES, StaticMotion())
        sigma = steady_state(res.integrated_state)
        p = singlet_projector(SpinSystem([]).layout)
        assert np.abs(sigma - p).max() < 1e-10
        assert conditional_singlet_probability(sigma, p) == pytest.approx(1.0, abs=1e-10)


class TestExactDiagonalizationOracle:
    def test_one_proton_ps_matches_eigendecomposition(self):
        # B = 0, isotropic coupling, vanishing rates: coherent dynamics only
        sys1 = proton_system(0.5)
        rates = Rates(1e-9, 1e-9)
        cfg = IntegratorConfig(dt_us=5e-4, t_max_us=0.5)
        res = propagate(sys1, FieldSpec(0.0), BARE_GEO, rates, StaticMotion(), config=cfg)

        h = build_static_hamiltonian(sys1, FieldSpec(0.0))
        p = singlet_projector(sys1.layout)
        w, v = np.linalg.eigh(h)
        rho0 = v.conj().T @ (p / sys1.nuclear_dim) @ v
        p_t = v.conj().T @ p @ v
        phases = np.exp(-1j * np.outer(res.times_us, w))
        # p_S(t) = sum_ij P~_ij rho0~_ji e^{-i(w_j - w_i)t}
        oracle = np.einsum("ij,ji,ti,tj->t", p_t, rho0, phases.conj(), phases).real
        assert np.abs(res.p_s - oracle).max() < 1e-8

    def test_rabi_period_visible(self):
        # isotropic a S.I makes p_S oscillate at frequency a (singlet <->
        # triplet-zero mixing); check the first revival
        sys1 = proton_system(0.5)
        a = 0.5 * 176.0855
        cfg = IntegratorConfig(dt_us=2e-4, t_max_us=4 * np.pi / a)
        res = propagate(sys1, FieldSpec(0.0), BARE_GEO, Rates(1e-9, 1e-9), StaticMotion(), config=cfg)
        period = 2 * np.pi / a
        idx = np.argmin(np.abs(res.times_us - period))
        assert res.p_s[idx] == pytest.approx(1.0, abs=1e-3)


class TestRfrDissipator:
    layout = HilbertLayout((2, 2))

    def test_zero_rate_is_zero_map(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = a + a.conj().T
        assert np.abs(rfr_dissipator(0.0, self.layout)(rho)).max() == 0.0

    def test_maximally_mixed_fixed_point(self):
        rho = np.eye(4, dtype=complex) / 4.0
        assert np.abs(rfr_dissipator(2.0, self.layout)(rho)).max() < 1e-14

    def test_trace_preserving(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = a @ a.conj().T
        out = rfr_dissipator(1.3, self.layout)(rho)
        assert abs(np.trace(out)) < 1e-12

    def test_superoperator_matches_callable(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = a + a.conj().T
        direct = rfr_dissipator(0.8, self.layout)(rho)
        via_matrix = (rfr_superoperator(0.8, self.layout) @ rho.ravel()).reshape(4, 4)
        assert np.abs(direct - via_matrix).max() < 1e-12

    def test_propagation_matches_superoperator_exponential_oracle(self):
        # H = 0, rates ~ 0: pure RFR decay of the singlet projector, checked
        # against a 16x16 exponential built in the column-major convention
        gamma = 1.0
        sys0 = SpinSystem([])
        p = singlet_projector(sys0.layout)
        cfg = IntegratorConfig(dt_us=1e-3, t_max_us=2.0)
        res = propagate(sys0, FieldSpec(0.0), BARE_GEO, Rates(1e-9, 1e-9), StaticMotion(),
                        gamma_per_us=gamma, config=cfg)
        heff = np.zeros((4, 4), dtype=complex)
        lv = liouvillian_oracle(heff, gamma, sys0.layout)
        for idx in [100, 500, 1500]:
            t = res.times_us[idx]
            rho_t = unvec_col(sla.expm(lv * t) @ vec_col(p), 4)
            assert res.p_s[idx] == pytest.approx(np.trace(p @ rho_t).real, abs=1e-8)

    def test_singlet_relaxes_to_quarter(self):
        # long-time RFR limit: maximally mixed electron state, p_S -> 1/4
        cfg = IntegratorConfig(dt_us=1e-3, t_max_us=6.0)
        res = propagate(SpinSystem([]), FieldSpec(0.0), BARE_GEO, Rates(1e-9, 1e-9),
                        StaticMotion(), gamma_per_us=1.0, config=cfg)
        assert res.p_s[-1] == pytest.approx(0.25, abs=1e-3)
        assert res.trace[-1] == pytest.approx(1.0, abs=1e-6)

    def test_negative_gamma_rejected(self):
        with pytest.raises(ConfigError):
            rfr_dissipator(-0.1, self.layout)


class TestSteadyState:
    def test_unit_trace_and_hermitian(self):
        sys1 = n5_system()
        geo = Geometry(j0_rad_us=2 * np.pi * 5.0)
        res = propagate(sys1, FieldSpec(50.0, 0.9, 0.2), geo, RATES, HarmonicMotion(2.0))
        sigma = steady_state(res.integrated_state)
        assert np.trace(sigma).real == pytest.approx(1.0, abs=1e-12)
        assert np.abs(sigma - sigma.conj().T).max() < 1e-12
        assert np.linalg.eigvalsh(sigma).min() > -1e-10

    def test_resolvent_oracle_static(self):
        # time integral of rho equals -L^{-1} rho(0) with the reaction
        # Liouvillian; solved here in the column-major convention
        sys1 = proton_system(0.4)
        geo = Geometry(j0_rad_us=2 * np.pi * 3.0)
        field = FieldSpec(50.0, 1.1, 0.6)
        cfg = IntegratorConfig(dt_us=2.5e-4, t_max_us=25.0)
        res = propagate(sys1, field, geo, RATES, StaticMotion(), config=cfg)
        sigma = steady_state(res.integrated_state)

        from rpmag.model import build_interaction_hamiltonian, effective_hamiltonian

        p = singlet_projector(sys1.layout)
        h = build_static_hamiltonian(sys1, field) + build_interaction_hamiltonian(sys1, geo, geo.r0_A)
        heff = effective_hamiltonian(h, RATES.kb0_per_us, RATES.kf_per_us, p)
        lv = liouvillian_oracle(heff, 0.0, sys1.layout)
        rho0 = p / sys1.nuclear_dim
        r_int = unvec_col(np.linalg.solve(lv, -vec_col(rho0)), sys1.dim)
        sigma_oracle = r_int / np.trace(r_int).real
        assert np.abs(sigma - sigma_oracle).max() < 1e-6

    def test_theta_sensitivity_present(self):
        sys1 = proton_system(0.4)
        geo = Geometry(j0_rad_us=0.0, exchange_enabled=False)
        vals = []
        for theta in (0.0, np.pi / 2):
            res = propagate(sys1, FieldSpec(50.0, theta, 0.0), geo, RATES, StaticMotion())
            sigma = steady_state(res.integrated_state)
            vals.append(conditional_singlet_probability(sigma, singlet_projector(sys1.layout)))
        assert abs(vals[0] - vals[1]) > 1e-5

    def test_degenerate_probe_error(self):
        with pytest.raises(DegenerateProbeError):
            steady_state(np.zeros((4, 4), dtype=complex))

    def test_conditional_probability_of_identity(self):
        layout = SpinSystem([]).layout
        p = singlet_projector(layout)
        assert conditional_singlet_probability(np.eye(4, dtype=complex) / 4.0, p) == pytest.approx(0.25)


class TestConservationAndState:
    @pytest.mark.parametrize("motion", [StaticMotion(), HarmonicMotion(2.0), HarmonicMotion(7.7)])
    def test_conservation_identity(self, motion):
        sys1 = n5_system()
        geo = Geometry(j0_rad_us=2 * np.pi * 8.0)
        res = propagate(sys1, FieldSpec(50.0, 0.8, 0.0), geo, RATES, motion)
        assert res.conservation_residual < 1e-4

    def test_trace_monotone(self):
        res = propagate(n5_system(), FieldSpec(50.0, 0.8, 0.0), Geometry(), RATES, HarmonicMotion(2.0))
        assert np.all(np.diff(res.trace) <= 1e-12)

    def test_state_stays_physical(self):
        sys1 = n5_system()
        res = propagate(sys1, FieldSpec(50.0, 1.2, 0.4), Geometry(j0_rad_us=10.0), RATES,
                        HarmonicMotion(3.0))
        sigma = steady_state(res.integrated_state)
        assert np.linalg.eigvalsh(sigma).min() > -1e-8
        assert np.all(res.p_s >= -1e-10)
        assert np.all(res.p_s <= 1.0 + 1e-8)

    def test_rfr_preserves_conservation_identity(self):
        res = propagate(n5_system(), FieldSpec(50.0, 0.8, 0.0), Geometry(), RATES,
                        HarmonicMotion(2.0), gamma_per_us=1.0)
        assert res.conservation_residual < 1e-4

    def test_density_operator_physical_along_trajectory(self):
        # reconstruct rho at a sample of nodes with the step propagators and
        # verify Hermiticity and positivity hold pointwise
        import scipy.linalg as sla
        from rpmag.dynamics import ModelOperators, build_step_plan, default_config

        sys1 = n5_system()
        geo = Geometry(j0_rad_us=2 * np.pi * 8.0)
        field = FieldSpec(50.0, 1.2, 0.3)
        motion = HarmonicMotion(2.5)
        cfg = default_config(sys1, field, geo, RATES, motion)
        plan = build_step_plan(motion, geo, cfg.dt_us, cfg.t_max_us)
        ops = ModelOperators.build(sys1, field, geo)
        u = sla.expm(-1j * plan.dt_us * ops.effective_stack(geo, RATES, plan.unique_r))
        rho = ops.p_s / sys1.nuclear_dim
        checkpoints = {500, 2000, 5000}
        for step in range(5001):
            if step in checkpoints:
                assert np.abs(rho - rho.conj().T).max() < 1e-10
                assert np.linalg.eigvalsh(rho).min() > -1e-8
            uk = u[plan.step_r_idx[step]]
            rho = uk @ rho @ uk.conj().T


class TestSchemes:
    def test_expm_vs_rk4(self):
        # fast driving: default step 0.1 ns, comparison at half that over a
        # six-driving-period window (RK4 phase error grows ~ T w^5 h^4, so
        # 1e-6 agreement needs a bounded horizon; convergence over the full
        # horizon is checked separately below)
        sys1 = proton_system(0.5)
        geo = Geometry(j0_rad_us=2 * np.pi * 10.0)
        field = FieldSpec(50.0, 1.0, 0.0)
        motion = HarmonicMotion(20.0)
        cfg_e = IntegratorConfig(dt_us=5e-5, t_max_us=0.1, scheme="expm")
        cfg_r = IntegratorConfig(dt_us=5e-5, t_max_us=0.1, scheme="rk4")
        res_e = propagate(sys1, field, geo, RATES, motion, config=cfg_e)
        res_r = propagate(sys1, field, geo, RATES, motion, config=cfg_r)
        n = min(len(res_e.p_s), len(res_r.p_s))
        assert np.abs(res_e.p_s[:n] - res_r.p_s[:n]).max() < 1e-6

    def test_rk4_converges_to_expm_limit(self):
        # quartering the step must shrink the scheme disagreement by ~16x,
        # confirming both integrate the same dynamics
        sys1 = proton_system(0.5)
        geo = Geometry(j0_rad_us=2 * np.pi * 10.0)
        field = FieldSpec(50.0, 1.0, 0.0)
        motion = HarmonicMotion(20.0)

        def disagreement(dt):
            res_e = propagate(sys1, field, geo, RATES, motion,
                              config=IntegratorConfig(dt_us=dt, t_max_us=1.0, scheme="expm"))
            res_r = propagate(sys1, field, geo, RATES, motion,
                              config=IntegratorConfig(dt_us=dt, t_max_us=1.0, scheme="rk4"))
            n = min(len(res_e.p_s), len(res_r.p_s))
            return np.abs(res_e.p_s[:n] - res_r.p_s[:n]).max()

        coarse = disagreement(1e-4)
        fine = disagreement(2.5e-5)
        assert fine < 1e-6
        assert fine < coarse / 8.0

    def test_step_halving_changes_yield_below_tolerance(self):
        sys1 = proton_system(0.5)
        geo = Geometry(j0_rad_us=2 * np.pi * 10.0)
        field = FieldSpec(50.0, 1.0, 0.0)
        motion = HarmonicMotion(5.0)
        base = default_config(sys1, field, geo, RATES, motion)
        res1 = propagate(sys1, field, geo, RATES, motion, config=base)
        cfg2 = IntegratorConfig(dt_us=base.dt_us / 2, t_max_us=base.t_max_us)
        res2 = propagate(sys1, field, geo, RATES, motion, config=cfg2)
        assert abs(res1.phi_s - res2.phi_s) < 1e-6

    def test_rk4_matches_expm_with_rfr(self):
        sys0 = SpinSystem([])
        cfg_e = IntegratorConfig(dt_us=2e-4, t_max_us=1.0, scheme="expm")
        cfg_r = IntegratorConfig(dt_us=2e-4, t_max_us=1.0, scheme="rk4")
        args = (sys0, FieldSpec(50.0, 0.7, 0.0), BARE_GEO, RATES, StaticMotion())
        res_e = propagate(*args, gamma_per_us=1.0, config=cfg_e)
        res_r = propagate(*args, gamma_per_us=1.0, config=cfg_r)
        assert np.abs(res_e.p_s - res_r.p_s).max() < 1e-8

    def test_rfr_split_matches_exact_liouville_exponential(self):
        # driven one-nucleus model: the half-step RFR split stays within
        # its O(dt^2 gamma ||H||) budget of the exact step exponential
        import scipy.linalg as sla
        from rpmag.dynamics import (
            ModelOperators,
            build_step_plan,
            default_config,
            liouvillian,
            rfr_superoperator,
        )

        sys1 = n5_system()
        geo = Geometry(j0_rad_us=2 * np.pi * 10.0)
        field = FieldSpec(50.0, 1.0, 0.0)
        motion = HarmonicMotion(3.0)
        cfg = default_config(sys1, field, geo, RATES, motion, t_max_us=1.0)
        res = propagate(sys1, field, geo, RATES, motion, gamma_per_us=1.0, config=cfg)

        plan = build_step_plan(motion, geo, cfg.dt_us, cfg.t_max_us)
        ops = ModelOperators.build(sys1, field, geo)
        rfr = rfr_superoperator(1.0, sys1.layout)
        heffs = ops.effective_stack(geo, RATES, plan.unique_r)
        exact = sla.expm(plan.dt_us * np.stack([liouvillian(h, rfr) for h in heffs]))
        y = (ops.p_s / sys1.nuclear_dim).ravel()
        p_vec = ops.p_s.T.ravel()
        n = len(res.p_s) - 1
        dev = 0.0
        for step in range(n):
            y = exact[plan.step_r_idx[step]] @ y
            dev = max(dev, abs((p_vec @ y).real - res.p_s[step + 1]))
        assert dev < 1e-6


class TestContinuousTimeOracle:
    @pytest.mark.parametrize("gamma,tol", [(0.0, 1e-5), (1.0, 1e-5)])
    def test_driven_dynamics_match_adaptive_integrator(self, gamma, tol):
        # fully independent route: scipy's DOP853 on the continuous master
        # equation with the exact r(t), evaluated at the step-grid nodes
        from scipy.integrate import solve_ivp
        from rpmag.dynamics import ModelOperators
        from rpmag.model import radial_trajectory

        sys1 = n5_system()
        field = FieldSpec(50.0, 1.0, 0.0)
        geo = Geometry(j0_rad_us=2 * np.pi * 10.0)
        motion = HarmonicMotion(3.0)
        cfg = IntegratorConfig(dt_us=5e-4, t_max_us=1.0)
        res = propagate(sys1, field, geo, RATES, motion, gamma_per_us=gamma, config=cfg)

        ops = ModelOperators.build(sys1, field, geo)
        dissipate = rfr_dissipator(gamma, sys1.layout)
        d = sys1.dim

        def rhs(t, y):
            rho = y.reshape(d, d)
            heff = ops.effective_at(geo, RATES, radial_trajectory(motion, geo, t))
            out = -1j * (heff @ rho - rho @ heff.conj().T)
            if gamma > 0:
                out = out + dissipate(rho)
            return out.ravel()

        t_eval = res.times_us[::100]
        sol = solve_ivp(rhs, (0.0, res.times_us[-1]), (ops.p_s / sys1.nuclear_dim).ravel(),
                        method="DOP853", t_eval=t_eval, rtol=1e-11, atol=1e-13)
        ps_ivp = np.einsum("ab,tba->t", ops.p_s, sol.y.T.reshape(-1, d, d)).real
        assert np.abs(ps_ivp - res.p_s[::100]).max() < tol


class TestPlanAndConfig:
    def test_step_bound_violation_rejected(self):
        sys1 = n5_system()
        field = FieldSpec(50.0)
        geo = Geometry(j0_rad_us=2 * np.pi * 80.0)
        cfg = IntegratorConfig(dt_us=1e-3, t_max_us=15.0)
        assert max_step_us(sys1, field, geo, HarmonicMotion(2.0)) < 1e-3
        with pytest.raises(ConfigError):
            propagate(sys1, field, geo, RATES, HarmonicMotion(2.0), config=cfg)

    def test_harmonic_step_snaps_to_period(self):
        geo = Geometry()
        plan = build_step_plan(HarmonicMotion(3.0), geo, 1e-3, 5.0)
        period = 1.0 / 3.0
        m = round(period / plan.dt_us)
        assert m * plan.dt_us == pytest.approx(period, rel=1e-12)

    def test_piecewise_step_snaps_to_segment(self):
        geo = Geometry()
        motion = PiecewiseMotion(1e-3, np.array([0.0, 1.0, 2.0]))
        plan = build_step_plan(motion, geo, 0.9e-3, 0.01)
        n_sub = round(motion.segment_dt_us / plan.dt_us)
        assert n_sub * plan.dt_us == pytest.approx(motion.segment_dt_us, rel=1e-12)
        # nodes at segment boundaries take the incoming segment's value
        idx_boundary = n_sub
        assert plan.node_segment[idx_boundary] == 1

    def test_piecewise_kb_nodes_follow_displacement(self):
        geo = Geometry()
        motion = PiecewiseMotion(1e-3, np.array([0.0, 2.0]))
        plan = build_step_plan(motion, geo, 1e-3, 0.004)
        kb = recombination_rate(1.0, geo.beta_per_A, plan.node_r, geo.r0_A)
        assert kb[0] == pytest.approx(1.0)
        assert kb[-1] == pytest.approx(np.exp(-geo.beta_per_A * 2.0))

    def test_horizon_error_when_no_escape(self):
        # k_f = 0 and a horizon too short for recombination to empty the trap
        sys0 = SpinSystem([])
        cfg = IntegratorConfig(dt_us=1e-3, t_max_us=0.5, trace_epsilon=1e-7)
        with pytest.raises(HorizonError):
            propagate(sys0, FieldSpec(0.0), BARE_GEO, Rates(0.0, 1.0), StaticMotion(), config=cfg)

    def test_default_config_requires_escape_for_default_horizon(self):
        sys0 = SpinSystem([])
        with pytest.raises(ConfigError):
            default_config(sys0, FieldSpec(0.0), BARE_GEO, Rates(0.0, 1.0), StaticMotion())

    def test_trace_dump(self, tmp_path):
        res = propagate(SpinSystem([]), FieldSpec(0.0), BARE_GEO, RATES, StaticMotion())
        out = tmp_path / "trace.txt"
        res.dump_trace(out)
        data = np.loadtxt(out)
        assert data.shape[1] == 5
        assert data[0, 1] == pytest.approx(1.0)
