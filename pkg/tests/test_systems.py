import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmfl import StateBox, VarianceCost, empirical, make_kernel
from kmfl.exceptions import DomainError, EstimationError, InputError, InvariantError
from kmfl.measures import measure_equal
from kmfl.systems import (
    COSTS,
    KernelCohesionCost,
    MODEL_ZOO,
    bounded_confidence,
    cucker_smale_discrete,
    linear_consensus,
    measure_variance,
    sampled_lipschitz,
    smooth_cutoff,
    stage_cost,
    step,
    total_cost,
    trajectory,
)

ZERO = np.zeros(1)


def test_consensus_two_agents_hand_step(consensus):
    # drift h * M/(M-1) * (mean - x_i) = 0.5 * 2 * (+-0.1)
    np.testing.assert_allclose(step(consensus, [0.4, 0.6], ZERO).ravel(), [0.5, 0.5], atol=1e-15)


def test_consensus_trajectory(consensus):
    states = trajectory(consensus, [0.4, 0.6], np.zeros((2, 1)))
    np.testing.assert_allclose(np.vstack([s.ravel() for s in states]), [[0.4, 0.6], [0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    one = trajectory(consensus, [0.4, 0.6], np.zeros((1, 1)))
    assert np.array_equal(one[1], step(consensus, [0.4, 0.6], ZERO))


def test_consensus_state_is_fixed(consensus):
    x = np.full((5, 1), 0.3)
    for s in trajectory(consensus, x, np.zeros((4, 1))):
        assert np.array_equal(s, x)


def test_costs_hand_values(consensus):
    assert stage_cost(consensus, [0.4, 0.6], ZERO) == pytest.approx(0.01, abs=1e-15)
    assert stage_cost(consensus, [0.3, 0.3, 0.3], ZERO) == 0.0
    assert total_cost(consensus, [0.4, 0.6], np.zeros((2, 1))) == pytest.approx(0.01, abs=1e-15)
    assert total_cost(consensus, [0.4, 0.6], [[0.05]]) == stage_cost(consensus, [0.4, 0.6], [0.05])
    assert total_cost(consensus, [0.5, 0.5], np.zeros((3, 1))) == 0.0


def test_control_penalty(consensus):
    assert stage_cost(consensus, [0.5, 0.5], [0.1]) == pytest.approx(0.1 * 0.01, abs=1e-18)


def test_control_outside_U(consensus):
    with pytest.raises(InputError):
        step(consensus, [0.4, 0.6], [0.2])
    with pytest.raises(InputError):
        step(consensus, [0.4, 0.6], [0.0, 0.0])
    with pytest.raises(InputError):
        trajectory(consensus, [0.4, 0.6], [[0.0], [0.5]])
    with pytest.raises(InputError):
        stage_cost(consensus, [0.4], [1.0])
    with pytest.raises(InputError):
        total_cost(consensus, [0.4], np.zeros((0, 1)))


def test_state_outside_box(consensus):
    with pytest.raises(DomainError):
        step(consensus, [0.4, 1.6], ZERO)


def test_clamping_keeps_states_in_box(consensus):
    x = np.full((3, 1), 0.95)
    out = step(consensus, x, [0.1])
    assert consensus.box.contains(out).all()
    assert out.max() == 1.0


def test_invalid_parameters(k05):
    with pytest.raises(InvariantError):
        linear_consensus(k05, h=1.5)
    with pytest.raises(InvariantError):
        linear_consensus(k05, u_max=-0.1)
    with pytest.raises(InvariantError):
        bounded_confidence(k05, r=0.0)
    with pytest.raises(InvariantError):
        cucker_smale_discrete(k05)  # odd-dimensional box
    with pytest.raises(InvariantError):
        VarianceCost(control_weight=-1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.floats(0.0, 1.0))
def test_consensus_variance_contraction(seed, m, h):
    # interior state, zero control: Var+ = (1 - h M/(M-1))^2 Var
    k = make_kernel("gaussian", StateBox.unit(1), bandwidth=0.5)
    model = linear_consensus(k, h=h)
    x = 0.25 + 0.5 * np.random.default_rng(seed).random((m, 1))
    h_eff = h * m / (m - 1)
    var_next = measure_variance(empirical(model.step(x, ZERO)))
    assert var_next == pytest.approx((1 - h_eff) ** 2 * measure_variance(empirical(x)), rel=1e-9, abs=1e-15)


def test_consensus_single_agent_does_not_move(k05):
    model = linear_consensus(k05)
    assert np.array_equal(model.step([[0.3]], [0.05]), [[0.35]])


def test_smooth_cutoff():
    s = np.array([0.0, 0.1, 0.29, 0.3, 0.5])
    vals = smooth_cutoff(s, 0.3)
    assert vals[0] == 1.0 and vals[3] == 0.0 and vals[4] == 0.0
    assert np.all(np.diff(vals) <= 0)


def test_bounded_confidence_far_agents_ignore_each_other(k05):
    model = bounded_confidence(k05, r=0.2)
    x = np.array([[0.1], [0.9]])
    np.testing.assert_array_equal(model.step(x, [0.02]), x + 0.02)


def test_cucker_smale_hand_step():
    box = StateBox((0.0, -1.0), (1.0, 1.0))
    model = cucker_smale_discrete(make_kernel("gaussian", box, bandwidth=0.5), h=0.1, beta=0.5)
    x = np.array([[0.2, 0.5], [0.4, -0.5]])
    psi = (1 + 0.2**2) ** -0.5
    v0 = 0.5 + 0.1 * 0.5 * psi * (-1.0)
    v1 = -0.5 + 0.1 * 0.5 * psi * 1.0
    expected = np.array([[0.2 + 0.1 * v0, v0], [0.4 + 0.1 * v1, v1]])
    np.testing.assert_allclose(model.step(x, [0.0]), expected, atol=1e-15)
    assert model.control_dim == 1


@pytest.mark.parametrize("name", sorted(MODEL_ZOO))
def test_restriction_property(zoo, name, rng):
    model = zoo[name]
    x = model.sample_state(rng, 12)
    u = model.sample_control(rng)
    micro, mf = empirical(model.step(x, u)), model.mf_step(empirical(x), u)
    if model.dynamics.exact_restriction:
        assert np.array_equal(micro.atoms, mf.atoms) and np.array_equal(micro.weights, mf.weights)
        assert model.stage_cost(x, u) == model.mf_stage_cost(empirical(x), u)
    else:
        assert not measure_equal(micro, mf)


@pytest.mark.parametrize("name", sorted(MODEL_ZOO))
def test_permutation_equivariance(zoo, name, rng):
    model = zoo[name]
    for _ in range(10):
        x = model.sample_state(rng, 9)
        u = model.sample_control(rng)
        perm = rng.permutation(9)
        assert np.array_equal(model.step(x[perm], u), model.step(x, u)[perm])
        assert model.stage_cost(x[perm], u) == model.stage_cost(x, u)


@pytest.mark.parametrize("cost", sorted(COSTS))
def test_cost_bound(k05, cost, rng):
    model = linear_consensus(k05, cost=COSTS[cost]())
    for m in (2, 5, 50):
        x = model.sample_state(rng, m)
        assert abs(model.stage_cost(x, model.sample_control(rng))) <= model.cost_bound


def test_unbiased_variance_factor(k05):
    model = linear_consensus(k05, cost=VarianceCost(unbiased=True))
    assert model.stage_cost([0.4, 0.6], ZERO) == pytest.approx(0.02, abs=1e-15)
    assert model.mf_stage_cost(empirical([0.4, 0.6]), ZERO) == pytest.approx(0.01, abs=1e-15)


def test_kernel_cohesion_cost(k05):
    model = linear_consensus(k05, cost=KernelCohesionCost(control_weight=0.0))
    assert model.stage_cost([0.3, 0.3], ZERO) == -1.0
    assert model.constants.cost_source == "analytic"
    assert model.lipschitz_cost == pytest.approx(2.0)


def test_analytic_variance_lipschitz():
    box = StateBox.unit(1)
    model = linear_consensus(make_kernel("augmented", box, bandwidth=0.5, poly_weight=1.0))
    c = model.constants
    assert c.cost_source == "analytic"
    state = 1.0 + np.sqrt(2.0)
    assert c.lipschitz_cost == pytest.approx(np.hypot(state, 2 * 0.1 * 0.1))


@pytest.mark.parametrize("name", sorted(MODEL_ZOO))
def test_sampled_estimates_below_declared(zoo, name):
    model = zoo[name]
    for m in (3, 10, 40):
        for target in ("dynamics", "meanfield"):
            assert sampled_lipschitz(model, target, m, 50, 99) <= model.lipschitz_dynamics
        assert sampled_lipschitz(model, "stage_cost", m, 50, 99) <= model.lipschitz_cost


def test_sampled_lipschitz_constant_map_and_errors(consensus):
    assert sampled_lipschitz(consensus, lambda x, u: 3.0, 10, 20, 0) == 0.0
    with pytest.raises(InputError):
        sampled_lipschitz(consensus, "dynamics", 10, 0, 0)
    with pytest.raises(InputError):
        sampled_lipschitz(consensus, "nonsense", 10, 5, 0)


def test_sampled_lipschitz_all_degenerate():
    # a single agent perturbed inside a tiny box: every pair collapses onto the same point
    tiny = make_kernel("gaussian", StateBox((0.5,), (0.5 + 1e-14,)), bandwidth=0.5)
    model = linear_consensus(tiny, u_max=0.0)
    with pytest.raises(EstimationError):
        sampled_lipschitz(model, "dynamics", 1, 5, 0)


def test_sampled_lipschitz_reproducible(consensus):
    assert sampled_lipschitz(consensus, "dynamics", 10, 30, 4) == sampled_lipschitz(consensus, "dynamics", 10, 30, 4)
