import math

import numpy as np
import pytest

from fluidcd.errors import ParameterError
from fluidcd.fluidgraph import transition_probability
from fluidcd.tdrw import TdrwParams, random_tuples, splitting_probability_analytic, splitting_probability_mc


def scale_function_quadrature(vp, vm, bp, bm):
    """Splitting probability from numerically integrated scale density exp(-int v/b)."""
    from scipy.integrate import quad
    s_right = quad(lambda y: math.exp(-vp / bp * y), 0, 1)[0]
    s_left = quad(lambda y: math.exp(-vm / bm * y), -1, 0)[0]
    return s_left / (s_left + s_right)


def test_analytic_matches_quadrature():
    for vp, vm, bp, bm in random_tuples(20, seed=4):
        p = TdrwParams(vp, vm, bp, bm)
        assert splitting_probability_analytic(p) == pytest.approx(scale_function_quadrature(vp, vm, bp, bm), abs=1e-10)


def test_symmetric_subfamily_is_sigmoid():
    for v in np.linspace(-1, 0, 11):
        for b in (0.25, 1.0):
            p = splitting_probability_analytic(TdrwParams(v, v, b, b))
            assert p == pytest.approx(1 / (1 + math.exp(-v / b)), abs=1e-12)


def test_driftless_is_half():
    assert splitting_probability_analytic(TdrwParams(0.0, 0.0, 0.3, 0.9)) == pytest.approx(0.5, abs=1e-15)


def test_random_tuple_ranges():
    tuples = random_tuples(200, seed=1)
    arr = np.array(tuples)
    assert np.all((arr[:, :2] >= -1) & (arr[:, :2] <= 0))
    assert np.all((arr[:, 2:] > 0.2) & (arr[:, 2:] <= 1))
    assert random_tuples(5, 3) == random_tuples(5, 3)


@pytest.mark.parametrize("tup", [(-0.3, -0.6, 1.0, 1.0), (-0.9, -0.1, 0.25, 0.8), (0.0, 0.0, 0.3, 1.0)])
def test_mc_agrees_with_analytic(tup):
    p = TdrwParams(*tup, dt=1e-3, paths=20_000, seed=2)
    est, se = splitting_probability_mc(p)
    assert abs(est - splitting_probability_analytic(p)) <= 3.5 * se


def test_mc_independent_of_worker_count():
    p = TdrwParams(-0.4, -0.2, 0.5, 0.9, paths=4000, seed=8)
    assert splitting_probability_mc(p, workers=1) == splitting_probability_mc(p, workers=3)


def test_halving_dt_does_not_drift_away():
    p = TdrwParams(-0.7, -0.2, 0.4, 0.9, dt=4e-3, paths=20_000, seed=5)
    exact = splitting_probability_analytic(p)
    coarse, se_c = splitting_probability_mc(p)
    fine, se_f = splitting_probability_mc(TdrwParams(**{**p.__dict__, "dt": 2e-3}))
    assert abs(fine - exact) <= abs(coarse - exact) + se_f


def test_closed_form_and_analytic_agree_exactly_enough():
    for tup in random_tuples(50, seed=0):
        assert abs(transition_probability(*tup) - splitting_probability_analytic(TdrwParams(*tup))) <= 1e-10


def test_parameter_validation():
    with pytest.raises(ParameterError):
        TdrwParams(-0.1, -0.1, 0.0, 1.0)
    with pytest.raises(ParameterError):
        splitting_probability_mc(TdrwParams(-0.1, -0.1, 1.0, 1.0, dt=0.2, paths=10))
