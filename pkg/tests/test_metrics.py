import math

import numpy as np
import pytest

from qclab.adversaries import GeodesicPush, IdentityPerturbation, whitebox_best_response
from qclab.classifiers import ConfigurationError, EllipsoidClassifier, OneNNClassifier, \
    implant_classifier, sample_cap_error
from qclab.geometry import cap_threshold, make_rng
from qclab.metrics import (
    LOWER_BOUND_ONLY,
    bestepsilon_quantity,
    estimate_ar_of_perturbation,
    estimate_ar_opt,
    estimate_consistency_family,
    estimate_consistency_prob,
    estimate_preimage_mass,
    estimate_risk,
    grid_reach,
    success_event,
    theorem1_lower_bound,
    theorem3_bound,
    two_intervals_ar_exact,
)
from qclab.tasks import ConcentricSpheresTask, Estimate, TwoIntervalsTask, sample_two_intervals_poisson


@pytest.fixture(scope="module")
def cap200():
    d = 200
    task = ConcentricSpheresTask(d)
    E = sample_cap_error(0.01, 1, d, make_rng(1))
    return task, implant_classifier(task.ground_truth, E, d), cap_threshold(0.01, d)


def test_risk_trivial():
    task = ConcentricSpheresTask(10)
    X = task.sample_support(1000, make_rng(0))
    assert estimate_risk(task.ground_truth, task, X=X).value == 0.0
    assert estimate_risk(lambda x: -task.ground_truth(x), task, X=X).value == 1.0
    with pytest.raises(ValueError):
        estimate_risk(task.ground_truth, task, n=0, rng=make_rng(0))


def test_risk_of_implanted_cap(cap200):
    task, o, _ = cap200
    est = estimate_risk(o, task, 200_000, make_rng(2))
    assert abs(est.value - 0.005) < 3 * est.stderr


def test_identity_perturbation_equals_risk(cap200):
    task, o, eps = cap200
    X = task.sample_support(20000, make_rng(3))
    assert estimate_ar_of_perturbation(o, IdentityPerturbation(eps), task, X=X).value == \
        estimate_risk(o, task, X=X).value


def test_ar_opt_quarter_and_dominance(cap200):
    task, o, eps = cap200
    X = task.sample_support(40000, make_rng(4))
    opt = estimate_ar_opt(o, task, eps, X=X)
    assert abs(opt.value - 0.25) < 3 * opt.stderr + 0.005
    axis = o.rule.error_set.axes[0]
    for p in (GeodesicPush(axis, eps), GeodesicPush(-axis, eps), whitebox_best_response(o, task, eps)):
        ar = estimate_ar_of_perturbation(o, p, task, X=X)
        assert ar.value <= opt.value + 3 * math.hypot(ar.stderr, opt.stderr)


def test_push_away_does_not_help(cap200):
    task, o, eps = cap200
    X = task.sample_support(40000, make_rng(5))
    away = GeodesicPush(-o.rule.error_set.axes[0], eps)
    r = estimate_risk(o, task, X=X)
    assert estimate_ar_of_perturbation(o, away, task, X=X).value <= r.value + 3 * r.stderr


def test_ar_opt_eps_zero_and_monotone(cap200):
    task, o, eps = cap200
    X = task.sample_support(20000, make_rng(6))
    assert estimate_ar_opt(o, task, 0.0, X=X).value == estimate_risk(o, task, X=X).value
    vals = [estimate_ar_opt(o, task, e, X=X).value for e in np.linspace(0, eps, 6)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_ar_opt_one_nn_matches_brute_force():
    z, m = 3.0, 300.0
    task = TwoIntervalsTask(m, z)
    ds = sample_two_intervals_poisson(m, z, make_rng(8))
    f = OneNNClassifier(ds)
    step = z / 2000
    opt = estimate_ar_opt(f, task, z / 10, X=task.quadrature_points(step))
    brute = grid_reach(ds, m, z, z / 10, step=step).total / (2 * m)
    assert opt.value == pytest.approx(brute, rel=1e-9, abs=1e-12)
    # opposite-line gaps only shrink the 1-NN regions relative to the continuum formula
    assert opt.value <= two_intervals_ar_exact(ds, m, z).fraction * 1.001 + 1e-9


def test_ar_opt_unsupported_pair():
    task = ConcentricSpheresTask(5)
    f = EllipsoidClassifier(None, np.full(5, 1 / 1.15**2))
    with pytest.raises(ConfigurationError):
        estimate_ar_opt(f, task, 0.1, 100, make_rng(0))
    est = estimate_ar_opt(f, task, 0.1, 200, make_rng(0), fallback=True, directions=4, radii=2)
    assert est.flag == LOWER_BOUND_ONLY


def test_preimage_mass_modes(cap200):
    task, o, eps = cap200
    X = task.sample_support(5000, make_rng(9))
    p = GeodesicPush(o.rule.error_set.axes[0], eps)
    a = estimate_preimage_mass(o, p, task, X=X)
    b = estimate_preimage_mass(o, p, task, X=X, mixture_mode="average")
    assert a.value == b.value


def test_success_event_cases():
    assert success_event(0.0, 0.0, 0.5)
    assert success_event(0.0, 0.3, 0.0)
    assert success_event(0.13, 0.25, 0.5)
    assert not success_event(0.12, 0.25, 0.5)
    assert success_event(Estimate(0.2, 0.01, 100), Estimate(0.25, 0.01, 100), 0.5, conservative=True)
    assert not success_event(Estimate(0.13, 0.01, 100), Estimate(0.25, 0.01, 100), 0.5, conservative=True)
    with pytest.raises(ValueError):
        success_event(0.1, 0.1, 1.5)


def test_entropy_bound_arithmetic():
    assert theorem1_lower_bound(0.9, 0.1) == pytest.approx(0.0, abs=1e-15)
    assert theorem1_lower_bound(0.05, 0.1) == pytest.approx(math.log2(18))
    assert theorem1_lower_bound(0.2, 0.1) == pytest.approx(math.log2(4.5))
    assert theorem1_lower_bound(0.0, 0.1) == math.inf
    with pytest.raises(ValueError):
        theorem1_lower_bound(1.2, 0.1)


def test_log_ratio_and_bestepsilon_arithmetic():
    assert theorem3_bound(3 * 0.5 * 0.01, 0.5, 0.01) == 0.0
    assert theorem3_bound(0.2, 1.0, 2**-20) == pytest.approx(math.log2(0.2 / 3) + 20)
    assert theorem3_bound(0.2, 1.0, 2**-19) == pytest.approx(theorem3_bound(0.2, 1.0, 2**-20) - 1)
    assert theorem3_bound(0.001, 1.0, 0.5) == 0.0
    assert bestepsilon_quantity(0.3, 0.3, 10) == 0.0
    assert bestepsilon_quantity(0.5, 1e-20, 1000) == pytest.approx(bestepsilon_quantity(0.5, 1e-20, 500) / 2)
    assert bestepsilon_quantity(0.5, 1e-20, 500) == pytest.approx(math.log(0.5e20) / 500, rel=1e-15)
    with pytest.raises(ValueError):
        bestepsilon_quantity(0.1, 0.2, 10)


def _nn_train(m, z):
    def train(rng):
        ds = sample_two_intervals_poisson(m, z, rng)
        return OneNNClassifier(ds), ds
    return train


def test_consistency_whitebox_on_own_dataset_is_one():
    z, m = 3.0, 100.0
    task = TwoIntervalsTask(m, z)
    X = task.quadrature_points(z / 300)
    family = [lambda f, S: whitebox_best_response(f, task, z / 10)]
    p = estimate_consistency_family(family, task, _nn_train(m, z), 5, make_rng(0), z / 10, X=X)
    assert p[0] == 1.0


def test_consistency_identity_is_rare():
    # m large enough that AR > 0 in almost every draw
    z, m = 3.0, 500.0
    task = TwoIntervalsTask(m, z)
    X = task.quadrature_points(z / 300)
    prob = estimate_consistency_prob(IdentityPerturbation(z / 10), task, _nn_train(m, z), 10, make_rng(1), z / 10, X=X)
    assert prob <= 0.2


def test_consistency_fixed_axis_decays_with_d():
    # at Cap(0.01) the success cone is already empty for d >= 20, so use a wider cap
    probs = []
    for d in (8, 12, 20, 50):
        task = ConcentricSpheresTask(d)
        eps = cap_threshold(0.1, d)
        u = np.eye(d)[0]

        def train(rng, d=d, task=task):
            E = sample_cap_error(0.1, 1, d, rng)
            return implant_classifier(task.ground_truth, E, d), None

        X = task.sample_support(4000, make_rng(2))
        probs.append(estimate_consistency_prob(GeodesicPush(u, eps), task, train, 400, make_rng(3), eps, X=X))
    assert probs[0] > probs[1] > probs[2] >= probs[3]
