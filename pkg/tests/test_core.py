import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import popmf
from popmf import (KernelError, PopulationModel, SimplexError, TransitionKernel,
                   as_occupancy, phi1, renormalize, tangent_basis, trajectory)

from conftest import all_builtin_models, simplex_points


def simplex_strategy(n):
    return (st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n)
            .map(lambda v: np.array(v) / np.sum(v)))


# ---------------------------------------------------------------------------
# occupancy vectors
# ---------------------------------------------------------------------------

def test_as_occupancy_accepts_valid():
    m = as_occupancy([0.2, 0.3, 0.5])
    assert not m.flags.writeable
    np.testing.assert_allclose(m, [0.2, 0.3, 0.5])


@pytest.mark.parametrize("bad", [
    [0.5, 0.6],                # sum != 1
    [-0.1, 1.1],               # entries outside [0, 1]
    [1.2, -0.2],
    [np.nan, 1.0],
    [[0.5, 0.5]],              # not 1-D
])
def test_as_occupancy_rejects_invalid(bad):
    with pytest.raises(SimplexError):
        as_occupancy(bad)


def test_as_occupancy_tolerance():
    as_occupancy([0.5, 0.5 + 5e-10])
    with pytest.raises(SimplexError):
        as_occupancy([0.5, 0.5 + 5e-9])


def test_renormalize_is_explicit():
    np.testing.assert_allclose(renormalize([2.0, 2.0]), [0.5, 0.5])
    with pytest.raises(SimplexError):
        renormalize([0.0, 0.0])


def test_tangent_basis_orthonormal_and_mean_zero():
    for n in (2, 3, 4, 5):
        q = tangent_basis(n)
        assert q.shape == (n, n - 1)
        np.testing.assert_allclose(q.T @ q, np.eye(n - 1), atol=1e-12)
        np.testing.assert_allclose(np.ones(n) @ q, 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# phi1
# ---------------------------------------------------------------------------

def identity_model(n=3):
    return popmf.constant_kernel_model(np.eye(n))


def test_phi1_identity_kernel_fixes_everything():
    m = [0.5, 0.2, 0.3]
    np.testing.assert_array_equal(phi1(identity_model(), m), m)


def test_phi1_seir_hand_evaluated():
    # hand evaluation of the SEIR drift at m=(0.2, 0.2, 0.2, 0.4) with the
    # default parameters:
    #   S: 0.2*(1 - 0.01 - 0.08*0.2) + 0.01*0.4 = 0.1988
    #   E: 0.2*(0.01 + 0.08*0.2) + 0.96*0.2     = 0.1972
    #   I: 0.04*0.2 + 0.98*0.2                  = 0.2040
    #   R: 0.02*0.2 + 0.99*0.4                  = 0.4000
    out = phi1(popmf.seir(), [0.2, 0.2, 0.2, 0.4])
    np.testing.assert_allclose(out, [0.1988, 0.1972, 0.204, 0.4], atol=1e-15)


def test_phi1_two_state_fixed_point():
    fp = popmf.two_state_fixed_point(0.75)
    assert fp == pytest.approx(2 / 3)
    model = popmf.two_state(popmf.TwoStateParams(0.75))
    np.testing.assert_allclose(phi1(model, [fp, 1 - fp]), [fp, 1 - fp], atol=1e-15)


def test_phi1_dimension_mismatch():
    with pytest.raises(SimplexError):
        phi1(popmf.seir(), [0.5, 0.5])


def test_phi1_flags_non_row_stochastic_kernel():
    broken = PopulationModel(
        TransitionKernel(2, lambda m: np.array([[0.5, 0.4], [1.0, 0.0]])),
        ("x", "y"))
    with pytest.raises(KernelError):
        phi1(broken, [0.5, 0.5])


# ---------------------------------------------------------------------------
# trajectory
# ---------------------------------------------------------------------------

def test_trajectory_tmax_zero():
    tr = trajectory(popmf.seir(), [0.2, 0.2, 0.2, 0.4], 0)
    assert tr.shape == (1, 4)
    np.testing.assert_array_equal(tr[0], [0.2, 0.2, 0.2, 0.4])


def test_trajectory_doubly_stochastic_uniform_is_constant():
    p = np.array([[0.2, 0.5, 0.3], [0.5, 0.3, 0.2], [0.3, 0.2, 0.5]])
    model = popmf.constant_kernel_model(p)
    tr = trajectory(model, np.full(3, 1 / 3), 20)
    np.testing.assert_allclose(tr, np.full((21, 3), 1 / 3), atol=1e-14)


def test_trajectory_two_state_converges_to_closed_form():
    model = popmf.two_state(popmf.TwoStateParams(0.6))
    tr = trajectory(model, [0.7, 0.3], 200)
    assert tr[-1][0] == pytest.approx((np.sqrt(3.4) - 1) / 1.2, abs=1e-12)


def test_trajectory_rejects_negative_horizon():
    with pytest.raises(ValueError):
        trajectory(popmf.seir(), [0.2, 0.2, 0.2, 0.4], -1)


def test_trajectory_simplex_preservation_builtin_models():
    for name, model in all_builtin_models():
        m0 = simplex_points(model.dim, 1, seed=5)[0]
        for row in trajectory(model, m0, 100):
            as_occupancy(row)


def test_trajectory_semigroup_property():
    for name, model in all_builtin_models():
        m0 = simplex_points(model.dim, 1, seed=11)[0]
        whole = trajectory(model, m0, 30)
        first = trajectory(model, m0, 12)
        rest = trajectory(model, first[-1], 18)
        np.testing.assert_array_equal(whole[-1], rest[-1])


@settings(max_examples=100, deadline=None)
@given(point=simplex_strategy(4), scale=st.floats(0.1, 3.0))
def test_phi1_mass_identity_off_simplex(point, scale):
    # kernel rows sum to 1 identically in m, so the drift conserves total
    # mass even off the simplex
    for name, model in (("seir", popmf.seir()), ("mrdl", popmf.mrdl())):
        scaled = scale * point
        out = phi1(model, scaled, validate=False)
        assert np.sum(out) == pytest.approx(np.sum(scaled), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(point=simplex_strategy(5), scale=st.floats(0.1, 3.0))
def test_phi1_mass_identity_off_simplex_wsn(point, scale):
    out = phi1(popmf.wsn(), scale * point, validate=False)
    assert np.sum(out) == pytest.approx(scale, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(point=simplex_strategy(4))
def test_phi1_stays_on_simplex(point):
    for name, model in (("seir", popmf.seir()), ("mrdl", popmf.mrdl())):
        as_occupancy(phi1(model, point))
