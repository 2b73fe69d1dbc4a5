"""Support-function state: curvature data, embedding, admissibility.

A strictly convex capillary hypersurface is represented by its capillary
support function h on the cap mesh (Gauss-map parametrization).  The
second fundamental form in this parametrization is b = Hess(h) + h I,
the Gauss curvature is 1/det(b), and the surface itself is recovered as
X = grad(h) + h nu with nu the unit normal identified with the cap point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvexityLossError, DomainError
from .mesh import CapMesh, reflection_residual
from .operators import FrameOperators

# relative floor below which the smallest eigenvalue of b counts as a
# convexity loss; discrete violations indicate an oversized step
CONVEXITY_REL_TOL = 1e-10


@dataclass
class SupportField:
    """Scalar field h on a cap mesh (units: length).

    even=True marks fields that are (and must remain) invariant under the
    even reflection; flows re-impose this after every step.
    """

    values: np.ndarray
    mesh: CapMesh
    even: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError(
                f"field shape {self.values.shape} does not match mesh "
                f"({self.mesh.n_nodes} nodes)"
            )

    def copy_with(self, values: np.ndarray) -> "SupportField":
        return replace(self, values=np.asarray(values, dtype=float))

    def scaled(self, c: float) -> "SupportField":
        return self.copy_with(c * self.values)


def ell_field(mesh: CapMesh) -> SupportField:
    """Capillary support function of the unit cap itself.

    ell(xi) = sin^2(theta) + cos(theta) (xi . e); strictly positive for
    theta in (0, pi/2).
    """
    e_component = -mesh.nodes[:, -1]  # xi . e with e = -E_{n+1}
    values = np.sin(mesh.theta) ** 2 + np.cos(mesh.theta) * e_component
    return SupportField(values=values, mesh=mesh, even=True)


@dataclass
class CurvatureData:
    """Per-node curvature quantities of the hypersurface with support h.

    b has shape (M, n, n); kappas holds the principal curvatures sorted
    ascending; gauss * sigma_n == 1 holds identically by construction.
    convex is False when the smallest eigenvalue of b anywhere drops below
    CONVEXITY_REL_TOL times the largest |b| entry; worst_node/min_eigenvalue
    then identify the offender.
    """

    b: np.ndarray
    sigma_n: np.ndarray
    gauss: np.ndarray
    kappas: np.ndarray
    eig_min: np.ndarray
    convex: bool
    worst_node: int
    min_eigenvalue: float
    hessian: tuple = field(repr=False, default=())


def curvature(h: SupportField, ops: FrameOperators) -> CurvatureData:
    """Second fundamental form, Gauss and principal curvatures of h.

    Fails softly on convexity loss: the returned data carries a flag and
    the worst node instead of raising, so steppers can shrink the step.
    """
    mesh = h.mesh
    comps = ops.hessian_components(h.values)
    if mesh.dim == 1:
        b11 = comps[0] + h.values
        b = b11.reshape(-1, 1, 1)
        sigma = b11
        eig_min = b11
        eig_max = b11
        kappas = (1.0 / b11).reshape(-1, 1)
    else:
        h11, h12, h22 = comps
        b11 = h11 + h.values
        b12 = h12
        b22 = h22 + h.values
        b = np.empty((mesh.n_nodes, 2, 2))
        b[:, 0, 0] = b11
        b[:, 0, 1] = b[:, 1, 0] = b12
        b[:, 1, 1] = b22
        sigma = b11 * b22 - b12**2
        half_tr = 0.5 * (b11 + b22)
        disc = np.sqrt(np.maximum((0.5 * (b11 - b22)) ** 2 + b12**2, 0.0))
        eig_min = half_tr - disc
        eig_max = half_tr + disc
        with np.errstate(divide="ignore"):
            kappas = np.column_stack([1.0 / eig_max, 1.0 / eig_min])

    with np.errstate(divide="ignore"):
        gauss = 1.0 / sigma

    worst = int(np.argmin(eig_min))
    floor = CONVEXITY_REL_TOL * float(np.max(np.abs(b)))
    convex = bool(eig_min[worst] > floor)
    return CurvatureData(
        b=b,
        sigma_n=sigma,
        gauss=gauss,
        kappas=kappas,
        eig_min=eig_min,
        convex=convex,
        worst_node=worst,
        min_eigenvalue=float(eig_min[worst]),
        hessian=comps,
    )


def require_convex(curv: CurvatureData) -> None:
    if not curv.convex:
        raise ConvexityLossError(curv.worst_node, curv.min_eigenvalue)


def scale_curvature(curv: CurvatureData, c: float) -> CurvatureData:
    """Curvature data of c*h from that of h (exact homogeneity, c > 0)."""
    n = curv.b.shape[1]
    return CurvatureData(
        b=c * curv.b,
        sigma_n=c**n * curv.sigma_n,
        gauss=c**-n * curv.gauss,
        kappas=curv.kappas / c,
        eig_min=c * curv.eig_min,
        convex=curv.convex,
        worst_node=curv.worst_node,
        min_eigenvalue=c * curv.min_eigenvalue,
        hessian=tuple(c * comp for comp in curv.hessian),
    )


def ambient_frame(mesh: CapMesh):
    """Unit normal nu and tangent frame vectors at every node, ambient coords."""
    nu = mesh.nodes.copy()
    nu[:, -1] += np.cos(mesh.theta)  # nu = xi - cos(theta) e
    if mesh.dim == 1:
        e1 = np.column_stack([np.cos(mesh.rho), -np.sin(mesh.rho)])
        return nu, (e1,)
    cr, sr = np.cos(mesh.rho), np.sin(mesh.rho)
    cp, sp_ = np.cos(mesh.phi), np.sin(mesh.phi)
    e1 = np.column_stack([cr * cp, cr * sp_, -sr])
    e2 = np.column_stack([-sp_, cp, np.zeros_like(sp_)])
    return nu, (e1, e2)


def embed(h: SupportField, ops: FrameOperators) -> np.ndarray:
    """Ambient positions X = grad(h) + h nu of the hypersurface, shape (M, n+1).

    Raises ConvexityLossError when h is not admissible.
    """
    curv = curvature(h, ops)
    require_convex(curv)
    if np.min(h.values) <= 0.0:
        raise DomainError("support function must be strictly positive")
    nu, frame = ambient_frame(h.mesh)
    grad = ops.gradient(h.values)
    x = h.values[:, None] * nu
    for k, ek in enumerate(frame):
        x += grad[:, k][:, None] * ek
    return x


@dataclass
class AdmissibilityReport:
    """Result of validate_admissible; report-only, never raises."""

    min_h: float
    min_eigenvalue: float
    robin_residual: float
    evenness_residual: float
    passed: bool
    failures: tuple


def validate_admissible(
    h: SupportField,
    ops: FrameOperators,
    robin_tol: float = 1e-4,
    even_tol: float = 1e-12,
) -> AdmissibilityReport:
    """Check positivity, strict convexity, the Robin condition and evenness.

    The Robin check uses the one-sided normal-derivative diagnostic; states
    evolved with Robin-embedded operators satisfy the condition through the
    boundary rows and carry an O(drho^3) diagnostic floor, hence the
    default tolerance.
    """
    curv = curvature(h, ops)
    min_h = float(np.min(h.values))
    robin = ops.robin_residual(h.values)
    even_res = reflection_residual(h.values, h.mesh) if h.even else 0.0

    failures = []
    if min_h <= 0.0:
        failures.append("positivity")
    if not curv.convex:
        failures.append("convexity")
    if robin > robin_tol:
        failures.append("robin")
    if h.even and even_res > even_tol:
        failures.append("evenness")
    return AdmissibilityReport(
        min_h=min_h,
        min_eigenvalue=curv.min_eigenvalue,
        robin_residual=robin,
        evenness_residual=even_res,
        passed=not failures,
        failures=tuple(failures),
    )
