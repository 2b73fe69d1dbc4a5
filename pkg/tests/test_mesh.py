import numpy as np
import pytest

from capflow.errors import ConfigurationError, DomainError
from capflow.mesh import (
    build_cap_mesh,
    cap_area,
    integrate,
    mesh_from_json,
    mesh_to_json,
    reflection_residual,
    symmetrize_even,
)
from capflow.state import ell_field

THETA = np.pi / 3


def test_theta_domain():
    with pytest.raises(DomainError):
        build_cap_mesh(1.6, 2, (16, 16))
    with pytest.raises(DomainError):
        build_cap_mesh(0.0, 1, 16)
    with pytest.raises(ConfigurationError):
        build_cap_mesh(THETA, 2, (16, 15))  # odd N_phi
    with pytest.raises(ConfigurationError):
        build_cap_mesh(THETA, 1, 4)


@pytest.mark.parametrize("dim,res", [(1, 64), (2, (32, 32))])
def test_nodes_on_cap(dim, res):
    mesh = build_cap_mesh(THETA, dim, res)
    center = np.zeros(dim + 1)
    center[-1] = -np.cos(THETA)
    radii = np.linalg.norm(mesh.nodes - center, axis=1)
    assert np.allclose(radii, 1.0, atol=1e-14)
    heights = mesh.nodes[:, -1]
    assert np.all(heights >= -1e-14)
    on_plane = np.flatnonzero(np.abs(heights) < 1e-14)
    assert sorted(on_plane) == sorted(mesh.boundary_ids)
    horizontal = np.linalg.norm(mesh.nodes[mesh.boundary_ids, :-1], axis=1)
    assert np.allclose(horizontal, np.sin(THETA), atol=1e-14)


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 4, np.pi / 3])
@pytest.mark.parametrize("dim", [1, 2])
def test_quadrature_total_weight_converges(dim, theta):
    # doubling the grid must reduce the area error at order >= 1.8
    errs = []
    for n in (16, 32, 64, 128):
        mesh = build_cap_mesh(theta, dim, (n, n) if dim == 2 else n)
        errs.append(abs(integrate(np.ones(mesh.n_nodes), mesh) - cap_area(theta, dim)))
    if dim == 1:
        assert max(errs) < 1e-12  # exact for constants on the interval
    else:
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(3)]
        assert min(orders) >= 1.8


def test_integrate_ell_n1():
    mesh = build_cap_mesh(THETA, 1, 128)
    exact = 2 * THETA - np.sin(2 * THETA)
    assert abs(integrate(ell_field(mesh).values, mesh) - exact) < 1e-7


def test_integrate_ell_n2():
    mesh = build_cap_mesh(THETA, 2, (64, 64))
    assert abs(integrate(ell_field(mesh).values, mesh) - 5 * np.pi / 8) < 1e-6


def test_integrate_zero_field():
    mesh = build_cap_mesh(THETA, 2, (16, 16))
    assert integrate(np.zeros(mesh.n_nodes), mesh) == 0.0


@pytest.mark.parametrize("dim,res", [(1, 33), (2, (17, 16))])
def test_reflection_involution(dim, res):
    mesh = build_cap_mesh(THETA, dim, res)
    perm = mesh.reflection
    assert np.array_equal(perm[perm], np.arange(mesh.n_nodes))
    # the reflection is an isometry of the node set
    reflected = mesh.nodes.copy()
    reflected[:, :-1] *= -1.0
    assert np.allclose(reflected, mesh.nodes[perm], atol=1e-13)


def test_symmetrize_even_fixed_points_and_odd_kill():
    mesh = build_cap_mesh(THETA, 2, (17, 16))
    even = mesh.nodes[:, -1] ** 2 + 1.0
    assert np.array_equal(symmetrize_even(even, mesh), even)
    odd = mesh.nodes[:, 0]
    assert np.max(np.abs(symmetrize_even(odd, mesh))) < 1e-15
    ell = ell_field(mesh).values
    assert np.array_equal(symmetrize_even(ell, mesh), ell)
    # idempotent
    mixed = even + odd
    once = symmetrize_even(mixed, mesh)
    assert np.array_equal(symmetrize_even(once, mesh), once)
    assert reflection_residual(once, mesh) == 0.0


def test_mesh_json_roundtrip():
    mesh = build_cap_mesh(0.9, 2, (12, 10))
    again = mesh_from_json(mesh_to_json(mesh))
    assert np.allclose(again.nodes, mesh.nodes)
    assert np.allclose(again.weights, mesh.weights)
    assert np.array_equal(again.boundary_ids, mesh.boundary_ids)
