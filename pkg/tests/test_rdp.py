import math

import numpy as np
import pytest

from kmfl import AtomicMeasure, StateBox, dirac, empirical, make_kernel
from kmfl.exceptions import CertificateError, EstimationError, InputError
from kmfl.rdp import (
    CustomFeedback,
    CustomValue,
    KernelCohesionValue,
    VarianceValue,
    ZeroFeedback,
    declared_value_lipschitz,
    feedback_lipschitz,
    greedy_feedback,
    lipschitz_check_value,
    max_alpha_meanfield,
    max_alpha_micro,
    max_alpha_states,
    rdp_check_meanfield,
    rdp_residual_meanfield,
    rdp_residual_micro,
)
from kmfl.systems import VarianceCost, linear_consensus


@pytest.fixture(scope="module")
def plain(k05):
    """Consensus with a pure variance cost, so the RDP threshold has a closed form."""
    return linear_consensus(k05, h=0.5, u_max=0.1, cost=VarianceCost(control_weight=0.1))


def threshold(h, m=None):
    h_eff = h if m is None else h * m / (m - 1)
    return 1 - (1 - h_eff) ** 2


def two_atom_measures(seed, n):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        w = rng.random(2) + 1e-3
        out.append(AtomicMeasure(0.2 + 0.6 * rng.random((2, 1)), w / w.sum()))
    return out


def test_residual_two_agents(plain):
    v, kappa = VarianceValue(), ZeroFeedback(1)
    # h_eff = 1 collapses the pair: residual = 0.01 - 0 - alpha * 0.01
    for alpha in (0.1, 0.5, 1.0):
        assert rdp_residual_micro(plain, v, kappa, [0.4, 0.6], alpha) == pytest.approx(0.01 * (1 - alpha), abs=1e-15)


@pytest.mark.parametrize("m", [3, 10, 50])
def test_residual_closed_form(plain, m, rng):
    v, kappa = VarianceValue(), ZeroFeedback(1)
    x = 0.3 + 0.4 * rng.random((m, 1))
    var = float(np.var(x))
    for alpha in (0.2, 0.7):
        expected = (threshold(0.5, m) - alpha) * var
        assert rdp_residual_micro(plain, v, kappa, x, alpha) == pytest.approx(expected, abs=1e-14)


def test_residual_affine_in_alpha(plain, rng):
    v, kappa = VarianceValue(), ZeroFeedback(1)
    x = plain.sample_state(rng, 12)
    r = [rdp_residual_micro(plain, v, kappa, x, a) for a in (0.2, 0.5, 0.8)]
    assert r[0] - r[1] == pytest.approx(r[1] - r[2], abs=1e-15)


def test_alpha_range(plain):
    for alpha in (0.0, -0.1, 1.1):
        with pytest.raises(InputError):
            rdp_residual_micro(plain, VarianceValue(), ZeroFeedback(1), [0.4, 0.6], alpha)


def test_max_alpha_micro_formula(plain):
    est = max_alpha_micro(plain, VarianceValue(), ZeroFeedback(1), 100, 50, 0)
    assert not est.vacuous
    assert est.alpha == pytest.approx(threshold(0.5, 100), abs=1e-9)
    assert float(est) == est.alpha


def test_max_alpha_vacuous_on_consensus(plain):
    states = [np.full((4, 1), c) for c in (0.2, 0.5, 0.9)]
    est = max_alpha_states(plain, VarianceValue(), ZeroFeedback(1), states)
    assert est.vacuous and est.alpha == 1.0 and est.n_zero_cost == 3


def test_max_alpha_zero_cost_violation(plain):
    rising = CustomValue(lambda mu, k: 0.0, micro=lambda x, k: float(np.sum(np.asarray(x))))
    # consensus state at 0.5 pushed by u = 0.1 leaves V increasing while the variance stays 0
    push = CustomFeedback(lambda mu: [0.1])
    model = linear_consensus(plain.kernel, cost=VarianceCost(control_weight=0.0))
    with pytest.raises(CertificateError):
        max_alpha_states(model, rising, push, [np.full((3, 1), 0.5)])


def test_max_alpha_non_positive(plain):
    with pytest.raises(CertificateError):
        max_alpha_states(plain, CustomValue(lambda mu, k: 1.0), ZeroFeedback(1), [[0.2, 0.8]])


def test_max_alpha_needs_samples(plain):
    with pytest.raises(InputError):
        max_alpha_micro(plain, VarianceValue(), ZeroFeedback(1), 10, 0, 0)


def test_meanfield_threshold(plain):
    v, kappa = VarianceValue(), ZeroFeedback(1)
    tests = two_atom_measures(3, 40)
    assert rdp_check_meanfield(plain, v, kappa, tests, 0.74).passed
    assert not rdp_check_meanfield(plain, v, kappa, tests, 0.76).passed
    assert max_alpha_meanfield(plain, v, kappa, tests).alpha == pytest.approx(0.75, abs=1e-12)


def test_meanfield_dirac_residual_zero(plain):
    assert rdp_residual_meanfield(plain, VarianceValue(), ZeroFeedback(1), dirac([0.4]), 0.9) == 0.0


def test_finite_m_certificate_transfers(plain, rng):
    v, kappa = VarianceValue(), ZeroFeedback(1)
    alpha = max_alpha_micro(plain, v, kappa, 100, 30, 1).alpha - 0.01
    # empirical measures of sampled interior states, quantized to a 1/64 grid
    tests = []
    for _ in range(20):
        x = np.round((0.3 + 0.4 * rng.random((100, 1))) * 64) / 64
        tests.append(empirical(x))
    cert = rdp_check_meanfield(plain, v, kappa, tests, alpha)
    assert cert.passed and len(cert.residuals) == 20
    d = cert.to_dict()
    assert d["pass"] and d["alpha"] == alpha and d["min_residual"] == cert.min_residual


def test_check_meanfield_needs_measures(plain):
    with pytest.raises(InputError):
        rdp_check_meanfield(plain, VarianceValue(), ZeroFeedback(1), [], 0.5)


# -- greedy feedback ---------------------------------------------------------------------


def test_greedy_zero_at_consensus(plain):
    kappa = greedy_feedback(plain, VarianceValue(), 5)
    np.testing.assert_array_equal(kappa.micro(np.full((6, 1), 0.4)), [0.0])
    np.testing.assert_array_equal(kappa.meanfield(dirac([0.4])), [0.0])


def test_greedy_grid_oracle(plain, rng):
    value = KernelCohesionValue()
    kappa = greedy_feedback(plain, value, 7)
    x = plain.sample_state(rng, 8)
    grid = np.linspace(-0.1, 0.1, 7)
    scores = [plain.stage_cost(x, [u]) + value.micro(plain.step(x, [u]), plain.kernel) for u in grid]
    assert kappa.micro(x)[0] == grid[int(np.argmin(scores))]


def test_greedy_bad_resolution(plain):
    with pytest.raises(InputError):
        greedy_feedback(plain, VarianceValue(), 1)


def test_greedy_permutation_invariant(plain, rng):
    kappa = greedy_feedback(plain, KernelCohesionValue(), 5)
    for _ in range(5):
        x = plain.sample_state(rng, 7)
        assert np.array_equal(kappa.micro(x[rng.permutation(7)]), kappa.micro(x))


# -- Lipschitz checks -------------------------------------------------------------------------


def test_value_lipschitz_constant_value(plain):
    assert lipschitz_check_value(CustomValue(lambda mu, k: 2.0), plain, 20, 0) == 0.0


def test_kernel_cohesion_value_lipschitz(plain):
    est = lipschitz_check_value(KernelCohesionValue(), plain, 100, 2)
    assert 0 < est <= 2 * math.sqrt(plain.kernel.bound)
    assert est == lipschitz_check_value(KernelCohesionValue(), plain, 100, 2)
    assert declared_value_lipschitz(KernelCohesionValue(), plain) == (2.0, "analytic")


def test_variance_value_declared_is_sampled_for_gaussian(plain):
    lip, source = declared_value_lipschitz(VarianceValue(), plain)
    assert source == "sampled"
    assert lipschitz_check_value(VarianceValue(), plain, 100, 5) <= lip


def test_value_lipschitz_all_degenerate():
    tiny = make_kernel("gaussian", StateBox((0.5,), (0.5 + 1e-14,)), bandwidth=0.5)
    model = linear_consensus(tiny, u_max=0.0)
    with pytest.raises(EstimationError):
        lipschitz_check_value(VarianceValue(), model, 5, 0, m=1)


def test_feedback_lipschitz_zero(plain):
    assert feedback_lipschitz(ZeroFeedback(1), plain, 20, 0) == 0.0


def test_certificate_at_m800_transfers(plain):
    v, kappa = VarianceValue(), ZeroFeedback(1)
    alpha = max_alpha_micro(plain, v, kappa, 800, 40, 0).alpha - 0.02
    assert rdp_check_meanfield(plain, v, kappa, two_atom_measures(8, 100), alpha).passed


def test_greedy_output_inside_U(plain, rng):
    kappa = greedy_feedback(plain, KernelCohesionValue(), 4)
    for _ in range(10):
        x = plain.sample_state(rng, 5)
        assert np.all(np.abs(kappa.micro(x)) <= plain.u_max)
        assert np.all(np.abs(kappa.meanfield(empirical(x))) <= plain.u_max)
