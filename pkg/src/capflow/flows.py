"""Time steppers for the three Gauss-curvature-type flows.

Support-function form of the flows (speed at each cap node):

  normalized       dh/dtau = -alpha f h^p K + h,  alpha = (n+1) V / int f h^p
  unnormalized_lp  dh/dtau = -f h^p K + h        (requires p > n+1)
  shrinking        dh/dt   = -f h^p K

Each step is explicit Euler followed by exact re-imposition of the Robin
boundary condition (the boundary value is eliminated from the one-sided
normal-derivative stencil) and, when requested, of evenness.  A step is
accepted only if the new state is positive and strictly convex and the
mode's monotone functional did not increase beyond +1e-10; otherwise dt
halves and the step is retried.  With this acceptance rule the discrete
flow inherits the continuum monotonicity by construction.

The normalization factor is evaluated with the instantaneous enclosed
volume, which makes the discrete J-dissipation identity exact (the key
cancellation sum w * speed * sigma_n == 0 holds in exact arithmetic for
any quadrature weights).  With that choice the flow map is exactly
scale-equivariant, so the overall scale is a neutral direction; the
continuum flow pins it through exact volume conservation, and the
discrete stepper does the same by rescaling each accepted state to the
initial volume (renormalize_volume, on by default).  Disabling it
exposes the raw scheme's O(drho^4) volume production for convergence
studies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, StepFailureError
from .functionals import (
    DensitySpec,
    DiagnosticsRecord,
    J_tilde_value,
    J_value,
    density_values,
    origin_in_flat_face,
)
from .mesh import CapMesh, build_cap_mesh, symmetrize_even
from .operators import FrameOperators, frame_operators
from .state import (
    CurvatureData,
    SupportField,
    curvature,
    ell_field,
    embed,
    scale_curvature,
    validate_admissible,
)

logger = logging.getLogger(__name__)

FLOW_KINDS = ("normalized", "unnormalized_lp", "shrinking")
MONOTONE_SLACK = 1e-10
BARRIER_TOL = 1e-6
MAX_CONSECUTIVE_HALVINGS = 40
ACCEPTS_BEFORE_GROWTH = 8
VOLUME_FLOOR_FRACTION = 1e-8


@dataclass
class FlowConfig:
    """Full description of one flow run; validate() enforces the
    admissibility hypotheses (p-range per mode, theta range, evenness
    requirements) under which the flows are well behaved."""

    flow_kind: str
    p: float
    theta: float
    dim: int
    resolution: tuple
    f: DensitySpec
    dt_init: float = 1e-4
    dt_min: float = 1e-14
    dt_max: float = 0.25
    cfl_safety: float = 0.8
    tol_stationary: float = 1e-5
    tol_volume_drift: float = 1e-3
    max_steps: int = 50000
    enforce_even: bool = False
    h0_scale: float = 1.0
    h0_bump: float = 0.0
    h0_bump_kind: str = "even"
    h0_values: np.ndarray | None = None
    record_every: int = 1
    renormalize_volume: bool = True

    def validate(self) -> None:
        if self.flow_kind not in FLOW_KINDS:
            raise ConfigurationError(
                f"flow_kind must be one of {FLOW_KINDS}, got {self.flow_kind!r}"
            )
        if not (0.0 < self.theta < np.pi / 2.0):
            raise DomainError(
                f"theta must lie in (0, pi/2), got {self.theta!r}"
            )
        n = self.dim
        if self.flow_kind == "normalized":
            if self.p <= -n - 1:
                raise DomainError(
                    f"normalized flow requires p > -n-1 = {-n - 1}, got {self.p}"
                )
            if not self.enforce_even:
                raise ConfigurationError(
                    "normalized flow requires enforce_even=true: its uniform "
                    "bounds hold only in the even class"
                )
            if not self.f.even:
                raise ConfigurationError("normalized flow requires an even density f")
        elif self.flow_kind == "unnormalized_lp":
            if self.p <= n + 1:
                raise DomainError(
                    f"unnormalized flow requires p > n+1 = {n + 1}, got {self.p}"
                )
        else:  # shrinking: hypotheses of the post-rescaling target apply
            if self.enforce_even and self.f.even:
                if self.p <= -n - 1:
                    raise DomainError(
                        f"shrinking flow (even target) requires p > {-n - 1}, got {self.p}"
                    )
            elif self.p <= n + 1:
                raise DomainError(
                    f"shrinking flow without evenness requires p > n+1 = {n + 1}, "
                    f"got {self.p}"
                )
        if not (0.0 < self.cfl_safety <= 1.0):
            raise ConfigurationError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if not (0.0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ConfigurationError(
                f"need 0 < dt_min <= dt_init <= dt_max, got "
                f"({self.dt_min}, {self.dt_init}, {self.dt_max})"
            )
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be at least 1")
        if self.h0_bump_kind not in ("even", "non_even"):
            raise ConfigurationError(
                f"h0_bump_kind must be 'even' or 'non_even', got {self.h0_bump_kind!r}"
            )


@dataclass
class FlowState:
    """Evolving state plus its cached per-step quantities."""

    h: SupportField
    tau: float = 0.0
    t: float = 0.0
    step_index: int = 0
    history: list = field(default_factory=list)
    barrier: float | None = None
    volume_prev: float | None = None
    curv: CurvatureData | None = field(default=None, repr=False)
    speed: np.ndarray | None = field(default=None, repr=False)
    alpha: float = 0.0
    V: float = 0.0
    J: float = 0.0
    J_tilde: float = 0.0
    residual: float = 0.0


@dataclass
class RunResult:
    state: FlowState
    outcome: str  # converged | max_steps | failed | extinction_floor
    message: str = ""
    origin_ok: bool = True


def neumann_bump(mesh: CapMesh, kind: str = "even") -> np.ndarray:
    """Smooth bump with vanishing normal derivative at the cap boundary.

    Multiplying ell by (1 + eps * bump) then keeps the Robin condition
    exact, so perturbed initial data is admissible as given.
    """
    s = np.sin(np.pi * mesh.rho / mesh.theta) ** 2
    if kind == "even":
        return s * np.cos(2.0 * mesh.phi) if mesh.dim == 2 else s
    if mesh.dim == 2:
        return s * np.cos(mesh.phi)
    return s * mesh.rho / mesh.theta


def stationary_residual(
    h: SupportField,
    f,
    p: float,
    mode: str,
    V0: float | None,
    ops: FrameOperators,
    curv: CurvatureData | None = None,
    include_robin: bool = True,
) -> float:
    """Sup-norm residual of the stationary Monge-Ampere equation.

    max over nodes of |det(b) - rhs| / max |rhs|, plus the Robin residual
    at the boundary.  mode 'normalized' uses
    rhs = (n+1) V0 f h^{p-1} / int f h^p, mode 'unnormalized' uses
    rhs = f h^{p-1}.  With Robin-embedded operators the one-sided Robin
    diagnostic is a fixed O(drho^3) boundary-closure measure; callers that
    need a convergence indicator free of that floor pass
    include_robin=False.
    """
    mesh = h.mesh
    if curv is None:
        curv = curvature(h, ops)
    fv = density_values(f, mesh)
    rhs = fv * h.values ** (p - 1.0)
    if mode == "normalized":
        if V0 is None or V0 <= 0.0:
            raise DomainError("normalized residual requires V0 > 0")
        hp = np.ones_like(h.values) if p == 0.0 else h.values**p
        rhs = rhs * (mesh.dim + 1) * V0 / float(mesh.weights @ (fv * hp))
    elif mode != "unnormalized":
        raise ConfigurationError(f"mode must be 'normalized' or 'unnormalized', got {mode!r}")
    err = float(np.max(np.abs(curv.sigma_n - rhs))) / float(np.max(np.abs(rhs)))
    if include_robin:
        err += ops.robin_residual(h.values)
    return err


class FlowSolver:
    """Drives one configured flow on one mesh.

    The solver owns the mesh, the frame operators and the evaluated
    density; states are value-semantic, so independent runs and parameter
    sweeps can share a solver without mutating each other.
    """

    def __init__(self, config: FlowConfig, mesh: CapMesh | None = None,
                 ops: FrameOperators | None = None):
        config.validate()
        self.config = config
        self.mesh = mesh if mesh is not None else build_cap_mesh(
            config.theta, config.dim, config.resolution
        )
        if self.mesh.theta != config.theta or self.mesh.dim != config.dim:
            raise ConfigurationError("mesh does not match the flow configuration")
        self.ops = ops if ops is not None else frame_operators(
            self.mesh, robin_boundary=True
        )
        self.f = config.f.evaluate(self.mesh)
        if config.flow_kind == "normalized" and not config.f.is_even_on(self.mesh):
            raise ConfigurationError("density is not even on the mesh")
        self.ell = ell_field(self.mesh).values
        self.V0 = 0.0  # set by initial_state

    # ---- state construction -------------------------------------------

    def initial_state(self, h0: SupportField | None = None) -> FlowState:
        cfg = self.config
        if h0 is None:
            if cfg.h0_values is not None:
                values = np.asarray(cfg.h0_values, dtype=float)
            else:
                bump = neumann_bump(self.mesh, cfg.h0_bump_kind)
                values = cfg.h0_scale * self.ell * (1.0 + cfg.h0_bump * bump)
        else:
            values = np.array(h0.values, dtype=float)
        values = self.ops.robin_close(values)
        if cfg.enforce_even:
            values = symmetrize_even(values, self.mesh)
        h = SupportField(values, self.mesh, even=cfg.enforce_even)

        report = validate_admissible(h, self.ops)
        if not report.passed:
            raise DomainError(
                f"initial data is not admissible: {', '.join(report.failures)} "
                f"(min h = {report.min_h:.3e}, min eig b = {report.min_eigenvalue:.3e})"
            )
        state = FlowState(h=h)
        self._refresh(state)
        self.V0 = state.V
        if cfg.flow_kind == "unnormalized_lp":
            ratio = float(np.min(h.values / self.ell))
            supply = float(np.max(self.f * self.ell ** (cfg.p - 1.0)))
            state.barrier = min(ratio, supply ** (-1.0 / (cfg.p - self.mesh.dim - 1)))
        self._record(state)
        return state

    # ---- per-state quantities ------------------------------------------

    def _refresh(self, state: FlowState, curv: CurvatureData | None = None) -> None:
        """Recompute curvature (unless given), volume and flow speed."""
        cfg = self.config
        h = state.h.values
        curv = curv if curv is not None else curvature(state.h, self.ops)
        state.curv = curv
        state.V = float(self.mesh.weights @ (h * curv.sigma_n)) / (self.mesh.dim + 1)
        hp = np.ones_like(h) if cfg.p == 0.0 else h**cfg.p
        flp = self.f * hp
        if cfg.flow_kind == "normalized":
            alpha = (self.mesh.dim + 1) * state.V / float(self.mesh.weights @ flp)
        else:
            alpha = 1.0
        state.alpha = alpha
        gc = alpha * flp * curv.gauss
        state.speed = -gc if cfg.flow_kind == "shrinking" else -gc + h

    def _residual(self, state: FlowState) -> float:
        """Convergence indicator: the Monge-Ampere residual component.

        The normalized mode measures stationarity at the state's own
        conserved volume (the V0-based residual would plateau at the
        accumulated volume drift), and the Robin diagnostic is excluded:
        the boundary condition lives inside the operators, so the
        one-sided measure is a fixed discretization floor rather than a
        property of the evolving state.  Diagnostic rows record the full
        residual (including the Robin diagnostic) alongside.
        """
        if self.config.flow_kind == "normalized":
            return stationary_residual(
                state.h, self.f, self.config.p, "normalized", state.V, self.ops,
                curv=state.curv, include_robin=False,
            )
        return stationary_residual(
            state.h, self.f, self.config.p, "unnormalized", None, self.ops,
            curv=state.curv, include_robin=False,
        )

    def _functional(self, state: FlowState) -> float:
        """The monotone quantity guarding step acceptance in this mode."""
        if self.config.flow_kind == "normalized":
            return J_value(state.h, self.f, self.config.p, self.V0)
        if self.config.flow_kind == "unnormalized_lp":
            return J_tilde_value(state.h, self.f, self.config.p, state.curv)
        return state.V  # shrinking: volume must strictly decrease

    def _record(self, state: FlowState) -> None:
        cfg = self.config
        h = state.h.values
        curv = state.curv
        grad = self.ops.gradient(h)
        hp = np.ones_like(h) if cfg.p == 0.0 else h**cfg.p
        alpha_report = (self.mesh.dim + 1) * self.V0 / float(
            self.mesh.weights @ (self.f * hp)
        )
        state.J = J_value(state.h, self.f, cfg.p, self.V0)
        state.J_tilde = (
            J_tilde_value(state.h, self.f, cfg.p, curv) if cfg.p != 0.0 else 0.0
        )
        state.residual = self._residual(state)
        robin = self.ops.robin_residual(h)
        rec = DiagnosticsRecord(
            tau=state.t if cfg.flow_kind == "shrinking" else state.tau,
            J=state.J,
            J_tilde=state.J_tilde,
            V=state.V,
            alpha=alpha_report,
            min_h=float(np.min(h)),
            max_h=float(np.max(h)),
            max_grad_h=float(np.max(np.linalg.norm(grad, axis=1))),
            min_K=float(np.min(curv.gauss)),
            max_K=float(np.max(curv.gauss)),
            min_kappa=float(np.min(curv.kappas)),
            max_kappa=float(np.max(curv.kappas)),
            min_h_over_ell=float(np.min(h / self.ell)),
            robin_residual=robin,
            speed_sup=float(np.max(np.abs(state.speed))),
            stationary_residual=state.residual + robin,
        )
        state.history.append(rec)

    # ---- stepping -------------------------------------------------------

    def dt_ceiling(self, state: FlowState) -> float:
        """Curvature-based heuristic cap combined with an explicit parabolic
        stability estimate for the linearized diffusion coefficient."""
        cfg = self.config
        h = state.h.values
        curv = state.curv
        hp = np.ones_like(h) if cfg.p == 0.0 else h**cfg.p
        gc = state.alpha * self.f * hp * curv.gauss
        heuristic = cfg.cfl_safety / (
            1.0 + float(np.max(gc)) * float(np.max(curv.kappas))
        )
        diffusion = float(np.max(gc / curv.eig_min))
        parabolic = 2.0 * cfg.cfl_safety / (diffusion * self.ops.explicit_stiffness)
        return min(cfg.dt_max, heuristic, parabolic)

    def _attempt(self, state: FlowState, dt: float, f_old: float):
        """One explicit Euler trial; returns the new state or None if rejected."""
        cfg = self.config
        new_vals = state.h.values + dt * state.speed
        if cfg.enforce_even:
            new_vals = symmetrize_even(new_vals, self.mesh)
        if np.min(new_vals) <= 0.0:
            return None
        curv = curvature(state.h.copy_with(new_vals), self.ops)
        if not curv.convex:
            return None
        if cfg.flow_kind == "normalized" and cfg.renormalize_volume:
            vol = float(self.mesh.weights @ (new_vals * curv.sigma_n)) / (
                self.mesh.dim + 1
            )
            c = (self.V0 / vol) ** (1.0 / (self.mesh.dim + 1))
            new_vals = c * new_vals
            curv = scale_curvature(curv, c)
        new = FlowState(
            h=state.h.copy_with(new_vals),
            tau=state.tau + (0.0 if cfg.flow_kind == "shrinking" else dt),
            t=state.t + (dt if cfg.flow_kind == "shrinking" else 0.0),
            step_index=state.step_index + 1,
            history=state.history,
            barrier=state.barrier,
            volume_prev=state.V,
        )
        self._refresh(new, curv=curv)
        if cfg.flow_kind == "normalized":
            if self._functional(new) > f_old + MONOTONE_SLACK:
                return None
            if abs(new.V - self.V0) / self.V0 > cfg.tol_volume_drift:
                return None
        elif cfg.flow_kind == "unnormalized_lp":
            if self._functional(new) > f_old + MONOTONE_SLACK:
                return None
            if float(np.min(new.h.values / self.ell)) < state.barrier - BARRIER_TOL:
                return None
        else:
            if new.V >= state.V:
                return None
        return new

    def step(self, state: FlowState, dt: float):
        """One accepted step, halving dt on rejection.

        Returns (new_state, dt_accepted, rejections).  Raises
        StepFailureError after MAX_CONSECUTIVE_HALVINGS rejections or when
        dt underflows dt_min.
        """
        cfg = self.config
        dt = min(dt, self.dt_ceiling(state))
        f_old = self._functional(state)
        for rejections in range(MAX_CONSECUTIVE_HALVINGS):
            if dt < cfg.dt_min:
                raise StepFailureError(
                    f"dt underflow at step {state.step_index} (dt = {dt:.3e})"
                )
            new = self._attempt(state, dt, f_old)
            if new is not None:
                return new, dt, rejections
            dt *= 0.5
        raise StepFailureError(
            f"step rejected {MAX_CONSECUTIVE_HALVINGS} times in a row at "
            f"step {state.step_index}"
        )

    def step_normalized(self, state: FlowState, dt: float) -> FlowState:
        if self.config.flow_kind != "normalized":
            raise ConfigurationError("solver is not configured for the normalized flow")
        new, _, _ = self.step(state, dt)
        self._record(new)
        return new

    def step_unnormalized_lp(self, state: FlowState, dt: float) -> FlowState:
        if self.config.flow_kind != "unnormalized_lp":
            raise ConfigurationError("solver is not configured for the unnormalized flow")
        new, _, _ = self.step(state, dt)
        self._record(new)
        return new

    def step_shrinking(self, state: FlowState, dt: float) -> FlowState:
        if self.config.flow_kind != "shrinking":
            raise ConfigurationError("solver is not configured for the shrinking flow")
        new, _, _ = self.step(state, dt)
        self._record(new)
        return new

    def rescale(self, state: FlowState, V0: float):
        """Rescale a (shrinking) state back to volume V0.

        Returns (rescaled state, dtau) with dtau = -(1/(n+1)) * d(log V) over
        the last shrink step.  The rescaled volume equals V0 exactly because
        the discrete volume is homogeneous of degree n+1.
        """
        n1 = self.mesh.dim + 1
        c = (V0 / state.V) ** (1.0 / n1)
        v_prev = state.volume_prev if state.volume_prev is not None else V0
        dtau = -(np.log(state.V) - np.log(v_prev)) / n1
        new = FlowState(
            h=state.h.scaled(c),
            tau=state.tau + dtau,
            t=state.t,
            step_index=state.step_index,
            history=state.history,
            barrier=state.barrier,
        )
        self._refresh(new)
        return new, dtau

    # ---- full run -------------------------------------------------------

    def run(self, h0: SupportField | None = None) -> RunResult:
        cfg = self.config
        state = self.initial_state(h0)
        origin_ok = origin_in_flat_face(
            embed(state.h, self.ops)[self.mesh.boundary_ids]
        )
        if not origin_ok:
            logger.warning(
                "origin is not inside the flat face at run start; the cone "
                "volume formula is unreliable for this state"
            )
        if cfg.flow_kind != "shrinking" and state.residual <= cfg.tol_stationary:
            return RunResult(state, "converged", "stationary at start", origin_ok)

        dt = cfg.dt_init
        accepts = 0
        floor = VOLUME_FLOOR_FRACTION * self.V0
        while state.step_index < cfg.max_steps:
            try:
                state, dt, rejections = self.step(state, dt)
            except StepFailureError as exc:
                logger.warning("flow run aborted: %s", exc)
                return RunResult(state, "failed", str(exc), origin_ok)
            recorded = state.step_index % cfg.record_every == 0
            if recorded:
                self._record(state)
            else:
                state.residual = self._residual(state)
            if cfg.flow_kind == "shrinking" and state.V <= floor:
                if not recorded:
                    self._record(state)
                return RunResult(
                    state, "extinction_floor",
                    f"volume reached {state.V:.3e} <= floor {floor:.3e}", origin_ok,
                )
            if cfg.flow_kind != "shrinking" and state.residual <= cfg.tol_stationary:
                if not recorded:
                    self._record(state)
                return RunResult(state, "converged", "", origin_ok)
            accepts = 0 if rejections else accepts + 1
            if accepts >= ACCEPTS_BEFORE_GROWTH:
                dt = min(2.0 * dt, self.dt_ceiling(state))
                accepts = 0
        if state.step_index % cfg.record_every != 0:
            self._record(state)
        return RunResult(
            state, "max_steps",
            f"residual {state.residual:.3e} after {cfg.max_steps} steps", origin_ok,
        )


def run(config: FlowConfig, h0: SupportField | None = None) -> RunResult:
    """Build a solver for the configuration and run it to termination."""
    return FlowSolver(config).run(h0)
