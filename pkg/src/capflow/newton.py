"""Damped Newton solver for the stationary capillary Monge-Ampere problems.

Solves det(Hess h + h I) = rhs(h) with the Robin rows replacing the
boundary equations, where

  unnormalized : rhs = f h^{p-1}
  normalized   : rhs = alpha f h^{p-1} with alpha unknown and the scalar
                 constraint V(h) = V0 appended (bordered sparse system).

The linearization uses the cofactor matrix of b: for a symmetric
perturbation db, d det(b) = sum_ij cof(b)_ij db_ij.  A continuation path
in the density, starting from f0 = ell^{1-p} whose solution is an exact
cap, carries the solver to the target density; blend steps halve when an
iterate leaves the elliptic (convex) cone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DomainError, NewtonFailureError
from .flows import stationary_residual
from .functionals import density_values
from .mesh import CapMesh, cap_volume
from .operators import FrameOperators, frame_operators
from .state import SupportField, curvature, ell_field

logger = logging.getLogger(__name__)


@dataclass
class NewtonConfig:
    tol_residual: float = 1e-11
    max_iters: int = 40
    damping_init: float = 1.0
    damping_ratio: float = 0.5
    max_backtracks: int = 25
    continuation_steps: int = 5
    max_continuation_points: int = 80


@dataclass
class NewtonResult:
    h: SupportField
    residual: float
    iterations: int
    alpha: float
    trace: list = field(default_factory=list)


class _StationarySystem:
    """Residual and Jacobian of the discrete stationary problem.

    The Robin condition is embedded in the boundary rows of the operators
    (same flavor the flow uses), so the Monge-Ampere equation is imposed at
    every node; the normalized mode appends the volume constraint with the
    normalization factor as the extra unknown.
    """

    def __init__(self, mesh: CapMesh, ops: FrameOperators, p: float,
                 mode: str, V0: float | None):
        if mode not in ("normalized", "unnormalized"):
            raise ConfigurationError(f"unknown stationary mode {mode!r}")
        if mode == "normalized" and (V0 is None or V0 <= 0.0):
            raise DomainError("normalized mode requires V0 > 0")
        self.mesh = mesh
        self.ops = ops
        self.p = p
        self.mode = mode
        self.V0 = V0

    def residual_vector(self, h: np.ndarray, alpha: float, fv: np.ndarray):
        hf = SupportField(h, self.mesh)
        curv = curvature(hf, self.ops)
        rhs = alpha * fv * h ** (self.p - 1.0)
        r = curv.sigma_n - rhs
        if self.mode == "normalized":
            vol = float(self.mesh.weights @ (h * curv.sigma_n)) / (self.mesh.dim + 1)
            return np.concatenate([r, [vol - self.V0]]), curv
        return r, curv

    def jacobian(self, h: np.ndarray, alpha: float, fv: np.ndarray, curv):
        mesh, ops, p = self.mesh, self.ops, self.p
        m = mesh.n_nodes
        if mesh.dim == 1:
            j_ma = ops.hess[0] + sp.identity(m)
            trace_cof = np.ones(m)
        else:
            h11, h12, h22 = ops.hess
            b11 = curv.b[:, 0, 0]
            b12 = curv.b[:, 0, 1]
            b22 = curv.b[:, 1, 1]
            j_ma = (
                sp.diags(b22) @ h11
                + sp.diags(b11) @ h22
                - 2.0 * (sp.diags(b12) @ h12)
            )
            trace_cof = b11 + b22
            j_ma = j_ma + sp.diags(trace_cof)
        d_rhs = sp.diags(alpha * (p - 1.0) * fv * h ** (p - 2.0))
        j_h = j_ma - d_rhs

        if self.mode == "unnormalized":
            return j_h.tocsc()

        # bordered system: extra column dF/dalpha and volume-constraint row
        col = -fv * h ** (p - 1.0)
        w = mesh.weights
        row = w * curv.sigma_n + w * h * trace_cof
        if mesh.dim == 2:
            h11, h12, h22 = ops.hess
            b11 = curv.b[:, 0, 0]
            b12 = curv.b[:, 0, 1]
            b22 = curv.b[:, 1, 1]
            row = row + h11.T @ (w * h * b22) + h22.T @ (w * h * b11) \
                - 2.0 * (h12.T @ (w * h * b12))
        else:
            row = row + ops.hess[0].T @ (w * h)
        row = row / (mesh.dim + 1)
        return sp.bmat(
            [[j_h, col.reshape(-1, 1)], [row.reshape(1, -1), None]], format="csc"
        )


def _newton_solve(system: _StationarySystem, fv: np.ndarray, h: np.ndarray,
                  alpha: float, cfg: NewtonConfig):
    """Damped Newton iteration; returns (h, alpha, trace) or raises."""
    mesh = system.mesh
    trace = []
    r, curv = system.residual_vector(h, alpha, fv)
    rnorm = float(np.max(np.abs(r)))
    for it in range(cfg.max_iters):
        trace.append(rnorm)
        if rnorm <= cfg.tol_residual:
            return h, alpha, trace
        jac = system.jacobian(h, alpha, fv, curv)
        try:
            delta = spla.splu(jac).solve(-r)
        except RuntimeError as exc:
            raise NewtonFailureError(f"linear solve failed: {exc}", trace)
        dh = delta[: mesh.n_nodes]
        dalpha = delta[mesh.n_nodes] if system.mode == "normalized" else 0.0

        step = cfg.damping_init
        for _ in range(cfg.max_backtracks):
            h_try = h + step * dh
            a_try = alpha + step * dalpha
            if np.min(h_try) > 0.0 and (system.mode != "normalized" or a_try > 0.0):
                r_try, curv_try = system.residual_vector(h_try, a_try, fv)
                rn_try = float(np.max(np.abs(r_try)))
                # ellipticity guard: reject iterates outside the convex cone
                if curv_try.convex and rn_try <= (1.0 - 0.25 * step) * rnorm:
                    h, alpha, r, curv, rnorm = h_try, a_try, r_try, curv_try, rn_try
                    break
            step *= cfg.damping_ratio
        else:
            # a stall at the roundoff floor is convergence, not failure
            if rnorm <= 100.0 * cfg.tol_residual:
                trace.append(rnorm)
                return h, alpha, trace
            raise NewtonFailureError(
                f"backtracking stalled at residual {rnorm:.3e}", trace
            )
    raise NewtonFailureError(
        f"no convergence in {cfg.max_iters} iterations (residual {rnorm:.3e})",
        trace,
    )


def solve_stationary(
    f,
    p: float,
    theta: float,
    mesh: CapMesh,
    mode: str = "unnormalized",
    V0: float | None = None,
    config: NewtonConfig | None = None,
    ops: FrameOperators | None = None,
    h0: SupportField | None = None,
) -> NewtonResult:
    """Solve the stationary problem by damped Newton with density continuation.

    The continuation starts from f0 = ell^{1-p}, whose exact solution is a
    cap (scaled to volume V0 in normalized mode), and blends linearly
    towards the target density.  A blend step that fails to converge is
    halved; ellipticity loss inside Newton triggers damping first.
    """
    if abs(mesh.theta - theta) > 1e-12:
        raise ConfigurationError(
            f"mesh was built for theta={mesh.theta}, got theta={theta}"
        )
    cfg = config or NewtonConfig()
    ops = ops if ops is not None else frame_operators(mesh, robin_boundary=True)
    system = _StationarySystem(mesh, ops, p, mode, V0)
    f_target = density_values(f, mesh)

    ell = ell_field(mesh).values
    f_start = ell ** (1.0 - p)
    if mode == "normalized":
        c = (V0 / cap_volume(theta, mesh.dim)) ** (1.0 / (mesh.dim + 1))
        h = c * ell if h0 is None else np.array(h0.values, dtype=float)
    else:
        h = ell.copy() if h0 is None else np.array(h0.values, dtype=float)

    def alpha_of(hv: np.ndarray, fv: np.ndarray) -> float:
        if mode == "unnormalized":
            return 1.0
        hp = np.ones_like(hv) if p == 0.0 else hv**p
        return (mesh.dim + 1) * V0 / float(mesh.weights @ (fv * hp))

    total_iters = 0
    trace_all: list = []
    s = 0.0
    ds = 1.0 / cfg.continuation_steps
    points = 0
    while s < 1.0 - 1e-12:
        points += 1
        if points > cfg.max_continuation_points:
            raise NewtonFailureError(
                f"continuation exceeded {cfg.max_continuation_points} points",
                trace_all,
            )
        s_next = min(1.0, s + ds)
        fv = (1.0 - s_next) * f_start + s_next * f_target
        try:
            h_new, alpha_new, trace = _newton_solve(
                system, fv, h.copy(), alpha_of(h, fv), cfg
            )
        except NewtonFailureError:
            ds *= 0.5
            if ds < 1e-4:
                raise
            continue
        h, alpha = h_new, alpha_new
        s = s_next
        total_iters += len(trace)
        trace_all.extend(trace)
        logger.debug("continuation s=%.3f converged, residual %.2e", s, trace[-1])

    hf = SupportField(h, mesh, even=False)
    res = stationary_residual(hf, f_target, p, mode, V0, ops)
    return NewtonResult(
        h=hf,
        residual=res,
        iterations=total_iters,
        alpha=alpha_of(h, f_target) if mode == "normalized" else 1.0,
        trace=trace_all,
    )
