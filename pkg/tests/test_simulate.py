import numpy as np
import pytest

from llmpsych.core import QuestionnaireError
from llmpsych.simulate import (discretize, facet_loadings, key_signs, simulate_latent,
                               simulate_respondents)


def _offdiag_mean(C):
    p = C.shape[0]
    return (C.sum() - np.trace(C)) / (p * (p - 1))


def test_null_model_uncorrelated(bfi2):
    rm = simulate_respondents(bfi2, np.zeros((60, 5)), 3000, seed=1)
    C = np.corrcoef(rm.scores.T.astype(float))
    assert abs(_offdiag_mean(C)) < 0.01
    assert np.abs(C - np.eye(60)).max() < 0.1


def test_single_factor_correlation_continuous_oracle(bfi2):
    L = np.zeros((60, 5))
    L[:, 0] = 0.8
    X, _ = simulate_latent(bfi2, L, 500, 0.6, seed=2, apply_keys=False)
    r = _offdiag_mean(np.corrcoef(X.T))
    assert r == pytest.approx(0.64 / (0.64 + 0.36), abs=0.03)


def test_keys_make_raw_correlations_negative(bfi2):
    rm = simulate_respondents(bfi2, facet_loadings(bfi2), 1000, seed=3)
    C = np.corrcoef(rm.scores.T.astype(float))
    s = key_signs(bfi2)
    e = [k for k, it in enumerate(bfi2.items) if it.facet == "E"]
    for i in e:
        for j in e:
            if i < j:
                assert np.sign(C[i, j]) == s[i] * s[j]


def test_codes_in_range_and_deterministic(bfi2):
    a = simulate_respondents(bfi2, facet_loadings(bfi2), 50, seed=9)
    b = simulate_respondents(bfi2, facet_loadings(bfi2), 50, seed=9)
    assert a == b
    assert a.scores.min() >= 1 and a.scores.max() <= 5


def test_discretize_symmetric_thresholds():
    L = np.array([[1.0]])
    codes = discretize(np.array([[-10.0], [-1.0], [0.0], [1.0], [10.0]]), L, 0.0)
    assert codes.ravel().tolist() == [1, 2, 3, 4, 5]


def test_bad_loading_spec(bfi2):
    with pytest.raises(QuestionnaireError):
        simulate_respondents(bfi2, np.zeros((50, 5)), 10)


def test_n_at_least_two(bfi2):
    with pytest.raises(ValueError):
        simulate_respondents(bfi2, facet_loadings(bfi2), 1)


def test_factor_correlation(bfi2):
    R = np.full((5, 5), 0.5) + 0.5 * np.eye(5)
    _, W = simulate_latent(bfi2, facet_loadings(bfi2), 20000, 0.5, seed=0, factor_corr=R)
    np.testing.assert_allclose(np.corrcoef(W.T), R, atol=0.03)
