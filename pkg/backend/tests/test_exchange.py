import numpy as np
import pytest

from helmddm.core.errors import InvalidArgumentError
from helmddm.core.exchange import apply_pi, project_single_trace, single_trace_coefficients
from helmddm.core.impedance import assemble_t_sigma, build_impedances
from helmddm.core.skeleton import (
    MultiTrace,
    build_interface_pairing,
    build_skeleton_map,
    is_single_trace,
    lift_single_trace,
    swap_apply,
)
from helmddm.schemas import ALL_IMPEDANCES, ImpedanceSpec

TOL = 1e-11


def _impedance(mesh, partition, kind, kappa=1.0):
    skeleton = build_skeleton_map(mesh, partition)
    spec = ImpedanceSpec.for_wavenumber(kind, kappa)
    matrices = build_impedances(mesh, partition, spec, kappa_inf=max(1.0, kappa))
    return skeleton, assemble_t_sigma(skeleton, matrices)


@pytest.fixture(scope="module", params=ALL_IMPEDANCES)
def cross_point_setup(request, small_disk, four_way):
    return _impedance(small_disk, four_way, request.param)


def test_pi_is_an_isometric_involution(cross_point_setup, rng):
    skeleton, impedance = cross_point_setup
    for _ in range(100):
        q = MultiTrace.random(skeleton, rng)
        norm = impedance.norm(q)
        pi_q = apply_pi(skeleton, impedance, q)
        assert impedance.norm(apply_pi(skeleton, impedance, pi_q) - q) <= TOL * norm
        assert abs(impedance.norm(pi_q) - norm) <= TOL * norm


def test_projection_is_orthogonal(cross_point_setup, rng):
    skeleton, impedance = cross_point_setup
    for _ in range(100):
        q = MultiTrace.random(skeleton, rng)
        norm = impedance.norm(q)
        projected = project_single_trace(skeleton, impedance, q)
        again = project_single_trace(skeleton, impedance, projected)
        assert impedance.norm(again - projected) <= TOL * norm
        assert is_single_trace(skeleton, projected)
        remainder = q - projected
        pythagoras = impedance.norm(projected) ** 2 + impedance.norm(remainder) ** 2
        assert pythagoras == pytest.approx(norm**2, rel=TOL)
        v = lift_single_trace(skeleton, rng.standard_normal(skeleton.n_sigma))
        assert abs(impedance.inner(remainder, v)) <= TOL * norm * impedance.norm(v)


def test_pi_is_half_sum_of_projection(cross_point_setup, rng):
    skeleton, impedance = cross_point_setup
    q = MultiTrace.random(skeleton, rng)
    pi_q = apply_pi(skeleton, impedance, q)
    projected = project_single_trace(skeleton, impedance, q)
    assert impedance.norm((q + pi_q) / 2 - projected) <= TOL * impedance.norm(q)


def test_pi_fixes_single_traces(cross_point_setup, rng):
    skeleton, impedance = cross_point_setup
    v = lift_single_trace(skeleton, rng.standard_normal(skeleton.n_sigma) + 1j * rng.standard_normal(skeleton.n_sigma))
    assert impedance.norm(apply_pi(skeleton, impedance, v) - v) <= TOL * impedance.norm(v)


def test_coefficients_reject_foreign_layout(cross_point_setup):
    skeleton, impedance = cross_point_setup
    with pytest.raises(InvalidArgumentError):
        single_trace_coefficients(skeleton, impedance, MultiTrace(np.zeros(2), np.array([0, 2])))


@pytest.mark.parametrize("layers", [2, 3])
@pytest.mark.parametrize("kind", ["M", "K", "W"])
def test_pi_reduces_to_swap_without_cross_points(small_disk, onion2, onion3, rng, layers, kind):
    partition = onion2 if layers == 2 else onion3
    skeleton, impedance = _impedance(small_disk, partition, kind)
    pairing = build_interface_pairing(skeleton)
    for _ in range(50):
        q = MultiTrace.random(skeleton, rng)
        difference = apply_pi(skeleton, impedance, q) - swap_apply(skeleton, pairing, q)
        assert impedance.norm(difference) <= TOL * impedance.norm(q)


def test_schur_impedance_is_not_a_swap(small_disk, onion2, rng):
    skeleton, impedance = _impedance(small_disk, onion2, "Lambda")
    pairing = build_interface_pairing(skeleton)
    q = MultiTrace.random(skeleton, rng)
    difference = apply_pi(skeleton, impedance, q) - swap_apply(skeleton, pairing, q)
    assert impedance.norm(difference) > 1e-6 * impedance.norm(q)
