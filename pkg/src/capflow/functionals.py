"""Prescribed densities, enclosed volume, monotone functionals and measures.

The flows dissipate one of two functionals:

  J       = -log(V0)/(n+1) + (1/p) log( int f h^p )      (p != 0,
            with the log-average branch at p = 0); non-increasing along
            the volume-normalized flow,
  J_tilde = -V(h) + (1/p) int f h^p                      (p != 0);
            non-increasing along the unnormalized flow.

Volume uses the cone formula V = (1/(n+1)) int h / K, whose discrete
variation matches the flow's conservation identity by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .mesh import CapMesh, reflection_residual
from .state import CurvatureData, SupportField, ell_field

DENSITY_KINDS = ("constant", "power_of_ell", "even_trig", "non_even_trig", "tabulated")


@dataclass
class DensitySpec:
    """Prescribed positive density f on the cap.

    kinds:
      constant       : c
      power_of_ell   : c * ell^q
      even_trig      : c * (1 + eps * (xi_1^2 - xi_2^2))   [n=1: c*(1+eps*xi_1^2)]
      non_even_trig  : c * (1 + eps * xi_1)
      tabulated      : explicit per-node values
    """

    kind: str
    c: float = 1.0
    q: float = 0.0
    eps: float = 0.0
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise ConfigurationError(
                f"unknown density kind {self.kind!r}; expected one of {DENSITY_KINDS}"
            )
        if self.kind == "tabulated" and self.values is None:
            raise ConfigurationError("tabulated density needs explicit values")

    @property
    def even(self) -> bool:
        if self.kind in ("constant", "power_of_ell", "even_trig"):
            return True
        if self.kind == "non_even_trig":
            return self.eps == 0.0
        return False  # tabulated: decided against the mesh in evaluate()

    def evaluate(self, mesh: CapMesh) -> np.ndarray:
        if self.kind == "constant":
            out = np.full(mesh.n_nodes, self.c)
        elif self.kind == "power_of_ell":
            out = self.c * ell_field(mesh).values ** self.q
        elif self.kind == "even_trig":
            xi1 = mesh.nodes[:, 0]
            shape = xi1**2 - mesh.nodes[:, 1] ** 2 if mesh.dim == 2 else xi1**2
            out = self.c * (1.0 + self.eps * shape)
        elif self.kind == "non_even_trig":
            out = self.c * (1.0 + self.eps * mesh.nodes[:, 0])
        else:
            out = np.asarray(self.values, dtype=float)
            if out.shape != (mesh.n_nodes,):
                raise ConfigurationError(
                    f"tabulated density has shape {out.shape}, mesh has "
                    f"{mesh.n_nodes} nodes"
                )
        if np.min(out) <= 0.0:
            raise DomainError(f"density {self.kind!r} is not strictly positive")
        return out

    def is_even_on(self, mesh: CapMesh) -> bool:
        return reflection_residual(self.evaluate(mesh), mesh) < 1e-12


def density_values(f, mesh: CapMesh) -> np.ndarray:
    """Accept a DensitySpec or a raw per-node array."""
    if isinstance(f, DensitySpec):
        return f.evaluate(mesh)
    arr = np.asarray(f, dtype=float)
    if arr.shape != (mesh.n_nodes,):
        raise ValueError(f"density shape {arr.shape} does not match mesh")
    return arr


@dataclass
class DiagnosticsRecord:
    """One row of the per-step diagnostics trail (CSV schema = field order)."""

    tau: float
    J: float
    J_tilde: float
    V: float
    alpha: float
    min_h: float
    max_h: float
    max_grad_h: float
    min_K: float
    max_K: float
    min_kappa: float
    max_kappa: float
    min_h_over_ell: float
    robin_residual: float
    speed_sup: float
    stationary_residual: float


def volume(h: SupportField, curv: CurvatureData) -> float:
    """Enclosed volume via the cone formula (1/(n+1)) int h det(b).

    The flat face contributes nothing because the origin lies in it; this
    is asserted at run start by the flow driver, not here.
    """
    mesh = h.mesh
    return float(mesh.weights @ (h.values * curv.sigma_n)) / (mesh.dim + 1)


def lp_integral(h: SupportField, f, p: float) -> float:
    """int f h^p (p != 0) or int f (p = 0) over the cap."""
    fv = density_values(f, h.mesh)
    if p == 0.0:
        return float(h.mesh.weights @ fv)
    return float(h.mesh.weights @ (fv * h.values**p))


def normalization_factor(h: SupportField, f, p: float, V_hat: float) -> float:
    """alpha = (n+1) V_hat / int f h^p, the speed normalization of the flow."""
    return (h.mesh.dim + 1) * V_hat / lp_integral(h, f, p)


def J_value(h: SupportField, f, p: float, V0: float) -> float:
    """Entropy-type functional dissipated by the normalized flow."""
    if np.min(h.values) <= 0.0:
        raise DomainError("J requires a strictly positive support function")
    if V0 <= 0.0:
        raise DomainError("J requires V0 > 0")
    mesh = h.mesh
    fv = density_values(f, mesh)
    lead = -np.log(V0) / (mesh.dim + 1)
    if p == 0.0:
        return lead + float(mesh.weights @ (fv * np.log(h.values))) / float(
            mesh.weights @ fv
        )
    return lead + np.log(float(mesh.weights @ (fv * h.values**p))) / p


def J_dissipation(h: SupportField, f, p: float, V0: float, curv: CurvatureData) -> float:
    """Exact dJ/dtau along the normalized flow: -int s^2 / ((n+1) V0 h K).

    s = -h + alpha f h^p K is minus the flow speed; the value is <= 0 and
    vanishes exactly at stationary solutions.
    """
    mesh = h.mesh
    fv = density_values(f, mesh)
    alpha = normalization_factor(h, f, p, V0)
    hp = np.ones_like(h.values) if p == 0.0 else h.values**p
    s = -h.values + alpha * fv * hp * curv.gauss
    integrand = s**2 * curv.sigma_n / h.values  # s^2/(h K) with 1/K = sigma_n
    return -float(mesh.weights @ integrand) / ((mesh.dim + 1) * V0)


def J_tilde_value(h: SupportField, f, p: float, curv: CurvatureData) -> float:
    """Free-energy functional dissipated by the unnormalized flow (p != 0)."""
    if p == 0.0:
        raise DomainError("J_tilde is defined for p != 0")
    return -volume(h, curv) + lp_integral(h, f, p) / p


def J_tilde_dissipation(h: SupportField, f, p: float, curv: CurvatureData) -> float:
    """Exact dJ_tilde/dtau along the unnormalized flow: -int s^2/(h K) <= 0."""
    mesh = h.mesh
    fv = density_values(f, mesh)
    s = -h.values + fv * h.values**p * curv.gauss
    return -float(mesh.weights @ (s**2 * curv.sigma_n / h.values))


def measure_densities(h: SupportField, p: float, curv: CurvatureData):
    """Capillary area density ell/K and L_p density ell h^{1-p}/K vs d(xi)."""
    ell = ell_field(h.mesh).values
    area = ell * curv.sigma_n
    lp = area * h.values ** (1.0 - p)
    return area, lp


def origin_in_flat_face(x_boundary: np.ndarray) -> bool:
    """Check the origin lies strictly inside the boundary trace in the hyperplane.

    x_boundary holds the embedded boundary nodes; for n=1 these are two
    points that must bracket the origin, for n=2 a closed convex curve whose
    planar support function must be positive in every direction.
    """
    horizontal = x_boundary[:, :-1]
    if horizontal.shape[1] == 1:
        return float(np.min(horizontal)) < 0.0 < float(np.max(horizontal))
    angles = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    support = np.max(horizontal @ dirs.T, axis=0)
    return bool(np.all(support > 0.0))
