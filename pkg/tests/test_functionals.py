import numpy as np
import pytest

from capflow.errors import ConfigurationError, DomainError
from capflow.mesh import build_cap_mesh
from capflow.operators import frame_operators
from capflow.functionals import (
    DensitySpec,
    J_dissipation,
    J_tilde_dissipation,
    J_tilde_value,
    J_value,
    lp_integral,
    measure_densities,
    volume,
)
from capflow.state import SupportField, curvature, ell_field

THETA = np.pi / 3


@pytest.fixture(scope="module")
def cap2():
    mesh = build_cap_mesh(THETA, 2, (49, 48))
    ops = frame_operators(mesh)
    ell = ell_field(mesh)
    return mesh, ops, ell, curvature(ell, ops)


@pytest.fixture(scope="module")
def cap1():
    mesh = build_cap_mesh(THETA, 1, 129)
    ops = frame_operators(mesh)
    ell = ell_field(mesh)
    return mesh, ops, ell, curvature(ell, ops)


def test_volume_matches_solid_cap(cap2, cap1):
    _, _, ell2, curv2 = cap2
    assert volume(ell2, curv2) == pytest.approx(5 * np.pi / 24, abs=2e-6)
    _, _, ell1, curv1 = cap1
    exact = THETA - np.sin(THETA) * np.cos(THETA)
    assert volume(ell1, curv1) == pytest.approx(exact, abs=1e-6)


def test_volume_homogeneity(cap2):
    _, ops, ell, curv = cap2
    c = 1.3
    v1 = volume(ell, curv)
    v2 = volume(ell.scaled(c), curvature(ell.scaled(c), ops))
    assert abs(v2 - c**3 * v1) / v1 < 1e-10


def test_J_closed_form_example(cap2):
    _, _, ell, curv = cap2
    f = DensitySpec(kind="constant")
    J = J_value(ell, f, 1.0, volume(ell, curv))
    exact = -np.log(5 * np.pi / 24) / 3 + np.log(5 * np.pi / 8)
    assert J == pytest.approx(exact, abs=5e-5)


def test_J_p0_constant_field(cap2):
    mesh, _, _, _ = cap2
    c = 2.5
    h = SupportField(np.full(mesh.n_nodes, c), mesh)
    f = DensitySpec(kind="even_trig", eps=0.3)
    J = J_value(h, f, 0.0, 1.0)  # V0=1 makes the leading term vanish
    assert J == pytest.approx(np.log(c), abs=1e-14)


@pytest.mark.parametrize("p", [-2.0, 0.0, 3.0])
def test_J_doubling_shift(cap2, p):
    _, _, ell, curv = cap2
    f = DensitySpec(kind="power_of_ell", q=1.0 - 5.0)
    v0 = volume(ell, curv)
    shift = J_value(ell.scaled(2.0), f, p, v0) - J_value(ell, f, p, v0)
    assert shift == pytest.approx(np.log(2.0), abs=1e-12)


@pytest.mark.parametrize("p", [-1.0, 0.0, 2.0])
def test_J_scale_invariance_with_rescaled_volume(cap2, p):
    _, ops, ell, curv = cap2
    f = DensitySpec(kind="even_trig", eps=0.1)
    c = 1.9
    v0 = volume(ell, curv)
    J0 = J_value(ell, f, p, v0)
    J1 = J_value(ell.scaled(c), f, p, c**3 * v0)
    assert abs(J1 - J0) < 1e-10


def test_J_rejects_bad_inputs(cap2):
    mesh, _, ell, curv = cap2
    with pytest.raises(DomainError):
        J_value(ell.copy_with(ell.values - 1.0), DensitySpec(kind="constant"), 1.0, 1.0)
    with pytest.raises(DomainError):
        J_value(ell, DensitySpec(kind="constant"), 1.0, -1.0)


def test_dissipations_vanish_at_stationary_cap(cap2):
    _, _, ell, curv = cap2
    p = 5.0
    f = DensitySpec(kind="power_of_ell", q=1.0 - p)
    assert abs(J_tilde_dissipation(ell, f, p, curv)) < 1e-7
    # and are strictly negative away from stationarity
    assert J_tilde_dissipation(ell.scaled(2.0), f, p,
                               curvature(ell.scaled(2.0), _ops(cap2))) < -1e-3
    v0 = volume(ell, curv)
    assert J_dissipation(ell.scaled(1.2), f, p, v0,
                         curvature(ell.scaled(1.2), _ops(cap2))) < -1e-4


def _ops(cap):
    return cap[1]


def test_J_finite_difference_oracle(cap2):
    # (J(h + delta*speed) - J(h))/delta matches the dissipation formula
    mesh, ops, ell, _ = cap2
    p = 2.0
    f = DensitySpec(kind="even_trig", eps=0.1)
    fv = f.evaluate(mesh)
    values = ops.robin_close(ell.values * (1.0 + 0.05 * np.sin(mesh.rho) ** 2))
    h = SupportField(values, mesh)
    curv = curvature(h, ops)
    v0 = volume(h, curv)
    alpha = 3.0 * v0 / lp_integral(h, f, p)
    speed = -alpha * fv * h.values**p * curv.gauss + h.values
    delta = 1e-7
    fd = (J_value(h.copy_with(h.values + delta * speed), f, p, v0)
          - J_value(h, f, p, v0)) / delta
    predicted = J_dissipation(h, f, p, v0, curv)
    assert abs(fd - predicted) <= 1e-3 * abs(predicted)


def test_J_tilde_requires_p_nonzero(cap2):
    _, _, ell, curv = cap2
    with pytest.raises(DomainError):
        J_tilde_value(ell, DensitySpec(kind="constant"), 0.0, curv)


def test_measure_densities(cap2):
    mesh, _, ell, curv = cap2
    area, lp = measure_densities(ell, 3.0, curv)
    assert np.max(np.abs(area - ell.values)) < 1e-6
    assert np.max(np.abs(lp - ell.values ** (2.0 - 3.0))) < 1e-5
    a1, l1 = measure_densities(ell, 1.0, curv)
    assert np.array_equal(a1, l1)
    assert mesh.weights @ area == pytest.approx(5 * np.pi / 8, abs=1e-5)


def test_density_specs(cap2):
    mesh, _, _, _ = cap2
    assert DensitySpec(kind="constant", c=2.0).even
    assert DensitySpec(kind="even_trig", eps=0.2).even
    assert not DensitySpec(kind="non_even_trig", eps=0.2).even
    f = DensitySpec(kind="non_even_trig", eps=0.1)
    assert not f.is_even_on(mesh)
    assert DensitySpec(kind="even_trig", eps=0.1).is_even_on(mesh)
    with pytest.raises(DomainError):
        DensitySpec(kind="non_even_trig", eps=2.0).evaluate(mesh)
    with pytest.raises(ConfigurationError):
        DensitySpec(kind="nope")
    with pytest.raises(ConfigurationError):
        DensitySpec(kind="tabulated")
