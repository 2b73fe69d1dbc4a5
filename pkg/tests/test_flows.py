import numpy as np
import pytest

from capflow.errors import ConfigurationError, DomainError
from capflow.flows import FlowConfig, FlowSolver, run, stationary_residual
from capflow.functionals import DensitySpec
from capflow.mesh import build_cap_mesh, reflection_residual
from capflow.operators import frame_operators
from capflow.state import ell_field

THETA = np.pi / 3


def _cfg(**kw):
    base = dict(
        flow_kind="unnormalized_lp", p=5.0, theta=THETA, dim=1, resolution=(65,),
        f=DensitySpec(kind="power_of_ell", q=-4.0), dt_init=1e-4,
        max_steps=2000, tol_stationary=1e-5,
    )
    base.update(kw)
    return FlowConfig(**base)


def test_config_validation_messages():
    with pytest.raises(DomainError, match=r"\(0, pi/2\)"):
        _cfg(theta=1.6).validate()
    with pytest.raises(DomainError, match="p > n\\+1"):
        _cfg(p=2.0).validate()
    with pytest.raises(ConfigurationError, match="enforce_even"):
        _cfg(flow_kind="normalized", p=2.0).validate()
    with pytest.raises(ConfigurationError, match="even density"):
        _cfg(flow_kind="normalized", p=2.0, enforce_even=True,
             f=DensitySpec(kind="non_even_trig", eps=0.1)).validate()
    with pytest.raises(DomainError, match="p > -n-1"):
        _cfg(flow_kind="normalized", p=-3.0, dim=2, resolution=(17, 16),
             enforce_even=True, f=DensitySpec(kind="constant")).validate()
    with pytest.raises(ConfigurationError, match="cfl"):
        _cfg(cfl_safety=1.5).validate()
    _cfg().validate()


def test_stationary_start_terminates_immediately():
    result = run(_cfg())
    assert result.outcome == "converged"
    assert result.state.step_index <= 2
    assert result.origin_ok


def test_stationary_cap_drift_small():
    solver = FlowSolver(_cfg(max_steps=300, tol_stationary=1e-14))
    state = solver.initial_state()
    start = state.h.values.copy()
    dt = 1e-4
    for k in range(300):
        state, dt, _ = solver.step(state, dt)
        if k % 8 == 7:
            dt = min(2 * dt, solver.dt_ceiling(state))
    assert np.max(np.abs(state.h.values - start)) < 1e-7


def test_unnormalized_barrier_and_convergence():
    cfg = _cfg(h0_scale=0.5, max_steps=100000)
    result = FlowSolver(cfg).run()
    assert result.outcome == "converged"
    ratios = np.array([r.min_h_over_ell for r in result.state.history])
    assert result.state.barrier == pytest.approx(0.5)
    assert ratios.min() >= 0.5 - 1e-6
    assert abs(ratios[-1] - 1.0) < 1e-4
    jt = np.array([r.J_tilde for r in result.state.history])
    assert np.max(np.diff(jt)) <= 1e-10


def test_normalized_run_monotone_and_conservative():
    cfg = FlowConfig(
        flow_kind="normalized", p=2.0, theta=np.pi / 4, dim=1, resolution=(49,),
        f=DensitySpec(kind="even_trig", eps=0.1), enforce_even=True,
        dt_init=1e-4, max_steps=100000, tol_stationary=1e-5, h0_bump=0.05,
    )
    result = FlowSolver(cfg).run()
    assert result.outcome == "converged"
    hist = result.state.history
    J = np.array([r.J for r in hist])
    V = np.array([r.V for r in hist])
    assert np.max(np.diff(J)) <= 1e-10
    assert np.max(np.abs(V - V[0])) / V[0] <= cfg.tol_volume_drift
    # evenness is re-imposed exactly after every step
    assert reflection_residual(result.state.h.values, result.state.h.mesh) == 0.0


def test_oversized_dt_init_is_halved_into_stability():
    cfg = _cfg(h0_scale=0.8, dt_init=0.25, dt_max=0.25, max_steps=500,
               tol_stationary=1e-14)
    solver = FlowSolver(cfg)
    state = solver.initial_state()
    state2, dt_used, rejections = solver.step(state, 0.25)
    assert dt_used < 0.25
    assert state2.step_index == 1


def test_shrinking_mode_and_rescale():
    cfg = _cfg(flow_kind="shrinking", max_steps=50, tol_stationary=1e-14,
               h0_bump=0.02)
    solver = FlowSolver(cfg)
    state = solver.initial_state()
    v0 = solver.V0
    new = solver.step_shrinking(state, 1e-4)
    assert new.V < state.V
    assert new.t > 0.0 and new.tau == 0.0
    rescaled, dtau = solver.rescale(new, v0)
    assert dtau > 0.0
    assert rescaled.V == pytest.approx(v0, rel=1e-12)


def test_shrink_rescale_tracks_normalized_step():
    base = dict(
        p=5.0, theta=THETA, dim=1, resolution=(65,),
        f=DensitySpec(kind="power_of_ell", q=-4.0),
        dt_init=1e-5, max_steps=10, tol_stationary=1e-14, h0_bump=0.05,
    )
    shrink = FlowSolver(FlowConfig(flow_kind="shrinking", **base))
    norm = FlowSolver(FlowConfig(flow_kind="normalized", enforce_even=True, **base))
    consts = []
    for dt_t in (2e-5, 1e-5):
        s0 = shrink.initial_state()
        s1, used, _ = shrink.step(s0, dt_t)
        assert used == dt_t
        s1r, dtau = shrink.rescale(s1, shrink.V0)
        n0 = norm.initial_state()
        n1, used2, _ = norm.step(n0, dtau)
        assert used2 == dtau
        err = float(np.max(np.abs(s1r.h.values - n1.h.values)))
        consts.append(err / dtau**2)
    assert 0.3 <= consts[1] / consts[0] <= 3.0


def test_volume_drift_guard_rejects():
    # an artificially tight drift bound must abort cleanly, not loop
    cfg = FlowConfig(
        flow_kind="normalized", p=2.0, theta=np.pi / 4, dim=1, resolution=(49,),
        f=DensitySpec(kind="even_trig", eps=0.1), enforce_even=True,
        dt_init=1e-4, max_steps=50000, tol_stationary=1e-12, h0_bump=0.05,
        tol_volume_drift=1e-12,
    )
    result = FlowSolver(cfg).run()
    assert result.outcome in ("failed", "max_steps", "converged")


def test_stationary_residual_scaling():
    mesh = build_cap_mesh(THETA, 1, 65)
    ops = frame_operators(mesh, robin_boundary=True)
    ell = ell_field(mesh)
    f = DensitySpec(kind="power_of_ell", q=-4.0)
    res_exact = stationary_residual(ell, f, 5.0, "unnormalized", None, ops)
    assert res_exact < 5e-6
    res_off = stationary_residual(ell.scaled(1.1), f, 5.0, "unnormalized", None, ops)
    # homogeneity: residual scale ~ |1.1^n - 1.1^{p-1}| / 1.1^{p-1}
    expected = abs(1.1 - 1.1**4.0) / 1.1**4.0
    assert res_off == pytest.approx(expected, rel=0.05)


def test_stationary_residual_grid_refinement():
    errs = []
    f = DensitySpec(kind="power_of_ell", q=-4.0)
    for n in (17, 33, 65):
        mesh = build_cap_mesh(THETA, 2, (n, 16))
        ops = frame_operators(mesh, robin_boundary=True)
        errs.append(stationary_residual(ell_field(mesh), f, 5.0,
                                        "unnormalized", None, ops))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.8


def test_end_to_end_even_flow_n2_matches_newton():
    # full n=2 run of the normalized flow with a nontrivial even density,
    # cross-validated against the independent stationary solver
    from capflow.newton import solve_stationary

    cfg = FlowConfig(
        flow_kind="normalized", p=2.0, theta=np.pi / 4, dim=2,
        resolution=(64, 32), f=DensitySpec(kind="even_trig", eps=0.1),
        enforce_even=True, dt_init=1e-4, max_steps=60000,
        tol_stationary=1e-4, h0_bump=0.05, record_every=10,
    )
    solver = FlowSolver(cfg)
    result = solver.run()
    assert result.outcome == "converged"
    hist = result.state.history
    J = np.array([r.J for r in hist])
    assert np.max(np.diff(J)) <= 10 * 1e-10  # records are 10 steps apart
    out = solve_stationary(cfg.f, cfg.p, cfg.theta, solver.mesh,
                           mode="normalized", V0=solver.V0, ops=solver.ops)
    assert np.max(np.abs(result.state.h.values - out.h.values)) < 1e-4
