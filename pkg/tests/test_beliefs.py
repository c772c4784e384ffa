import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopirl.beliefs import (
    Belief,
    GaussianObservationModel,
    SearchObservationModel,
    bayes_update,
    bayes_update_log,
    bayes_update_search,
    validate_search_costs,
    validate_simplex,
    validate_stop_costs,
)
from stopirl.errors import InvalidModel, NotASimplexPoint, ZeroEvidence


def test_identical_likelihoods_leave_belief():
    out = bayes_update(Belief([0.5, 0.5]), [1.0, 1.0])
    np.testing.assert_allclose(out.probs, [0.5, 0.5])


def test_update_by_hand():
    out = bayes_update(Belief([0.5, 0.5]), [0.8, 0.2])
    np.testing.assert_allclose(out.probs, [0.8, 0.2], atol=1e-15)


def test_zero_evidence():
    with pytest.raises(ZeroEvidence):
        bayes_update(Belief([1.0, 0.0]), [0.0, 1.0])


def test_log_update_survives_underflow():
    # raw likelihoods e^-2000 and e^-2010 underflow to 0
    out = bayes_update_log(Belief([0.5, 0.5]), [-2000.0, -2010.0])
    np.testing.assert_allclose(out.probs, [1 / (1 + np.exp(-10)), np.exp(-10) / (1 + np.exp(-10))])


def test_gaussian_update_matches_density_ratio():
    model = GaussianObservationModel([1.0, -1.0], [2.0, 2.0])
    y = 0.3
    post = model.update(Belief([0.5, 0.5]), y)
    f = lambda mu: np.exp(-((y - mu) ** 2) / 4.0)  # noqa: E731
    np.testing.assert_allclose(post.probs[0], f(1.0) / (f(1.0) + f(-1.0)), rtol=1e-14)


def test_search_update_certain_reveal():
    out = bayes_update_search(Belief([0.5, 0.5]), 0, False, SearchObservationModel([1.0, 0.5]))
    np.testing.assert_allclose(out.probs, [0.0, 1.0])


def test_search_update_three_locations():
    alpha = [0.7, 0.68, 0.6]
    out = bayes_update_search(Belief([1 / 3] * 3), 1, False, SearchObservationModel(alpha))
    z = 2 / 3 + (1 / 3) * 0.32
    np.testing.assert_allclose(out.probs, [(1 / 3) / z, (1 / 3) * 0.32 / z, (1 / 3) / z], rtol=1e-14)


def test_search_update_zero_mass_location():
    out = bayes_update_search(Belief([1.0, 0.0]), 1, False, SearchObservationModel([0.3, 0.9]))
    np.testing.assert_array_equal(out.probs, [1.0, 0.0])


def test_search_update_impossible_miss():
    with pytest.raises(ZeroEvidence):
        bayes_update_search(Belief([1.0, 0.0]), 0, False, SearchObservationModel([1.0, 1.0]))


def test_search_update_rejects_found():
    with pytest.raises(ValueError):
        bayes_update_search(Belief([0.5, 0.5]), 0, True, SearchObservationModel([0.5, 0.5]))


def test_validate_simplex():
    assert isinstance(validate_simplex([0.5, 0.5]), Belief)
    b = validate_simplex([0.5, 0.5 + 1e-12])
    assert abs(b.probs.sum() - 1.0) < 1e-15
    with pytest.raises(NotASimplexPoint):
        validate_simplex([0.7, 0.4])
    with pytest.raises(NotASimplexPoint):
        validate_simplex([1.2, -0.2])


def test_beliefs_are_immutable():
    b = Belief([0.5, 0.5])
    with pytest.raises(ValueError):
        b.probs[0] = 1.0


def test_cost_validation():
    validate_stop_costs([[0, 2], [2.5, 0]], zero_diagonal=True)
    with pytest.raises(InvalidModel):
        validate_stop_costs([[1, 2], [2.5, 0]], zero_diagonal=True)
    with pytest.raises(InvalidModel):
        validate_stop_costs([[0, -1], [1, 0]])
    np.testing.assert_allclose(validate_search_costs([2, 4, 6], normalize=True), [1, 2, 3])
    with pytest.raises(InvalidModel):
        validate_search_costs([1, 0, 2])


def test_model_validation():
    with pytest.raises(InvalidModel):
        GaussianObservationModel([0, 1], [1, 0])
    with pytest.raises(InvalidModel):
        SearchObservationModel([0.0, 0.5])


simplex = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5).map(lambda v: np.array(v) / sum(v))


@settings(max_examples=100, deadline=None)
@given(simplex, st.data())
def test_update_stays_on_simplex(pi, data):
    lik = np.array(data.draw(st.lists(st.floats(1e-3, 10.0), min_size=len(pi), max_size=len(pi))))
    out = bayes_update(Belief(pi), lik).probs
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.all(out >= 0)
    # log and linear kernels agree
    np.testing.assert_allclose(out, bayes_update_log(Belief(pi), np.log(lik)).probs, rtol=1e-10)


@settings(max_examples=100, deadline=None)
@given(simplex, st.data())
def test_sequential_updates_commute(pi, data):
    n = len(pi)
    l1 = np.array(data.draw(st.lists(st.floats(1e-3, 10.0), min_size=n, max_size=n)))
    l2 = np.array(data.draw(st.lists(st.floats(1e-3, 10.0), min_size=n, max_size=n)))
    a = bayes_update(bayes_update(Belief(pi), l1), l2).probs
    b = bayes_update(bayes_update(Belief(pi), l2), l1).probs
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)
