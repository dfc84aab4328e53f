"""Synthetic respondents drawn from a linear latent-factor model."""
from __future__ import annotations

import numpy as np

from .core import Questionnaire, QuestionnaireError, ResponseMatrix

# Cut points on the standardized continuous response; 5 categories.
DEFAULT_THRESHOLDS = (-1.5, -0.5, 0.5, 1.5)


def facet_loadings(q: Questionnaire, value: float = 0.7) -> np.ndarray:
    """Items x facets magnitudes with ``value`` on each item's own facet."""
    facets = q.facet_ids
    L = np.zeros((len(q.items), len(facets)))
    for i, it in enumerate(q.items):
        L[i, facets.index(it.facet)] = value
    return L


def key_signs(q: Questionnaire) -> np.ndarray:
    return np.array([-1.0 if it.is_false_key else 1.0 for it in q.items])


def simulate_latent(q: Questionnaire, loadings, n: int, noise_sd: float, seed=None,
                    apply_keys: bool = True, factor_corr=None):
    """Draw ``X = W L' + noise`` on a continuous scale.

    Parameters
    ----------
    loadings : array-like, items x factors
        Loading magnitudes. With ``apply_keys`` false-key rows are negated.
    factor_corr : array-like, optional
        Factor correlation matrix; identity by default.

    Returns
    -------
    X : ndarray, n x items
    W : ndarray, n x factors
    """
    L = np.asarray(loadings, dtype=float)
    if n < 2:
        raise ValueError("need at least 2 respondents")
    if L.ndim != 2 or L.shape[0] != len(q.items):
        raise QuestionnaireError(f"loading spec has {L.shape[0] if L.ndim else 0} rows, "
                                 f"questionnaire has {len(q.items)} items")
    if apply_keys:
        L = L * key_signs(q)[:, None]
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((n, L.shape[1]))
    if factor_corr is not None:
        W = W @ np.linalg.cholesky(np.asarray(factor_corr, dtype=float)).T
    X = W @ L.T + noise_sd * rng.standard_normal((n, L.shape[0]))
    return X, W


def discretize(X, L, noise_sd, scale_codes: int = 5, thresholds=DEFAULT_THRESHOLDS):
    """Map continuous responses to codes 1..k by fixed cut points on the model-implied z-scale."""
    sd = np.sqrt((np.asarray(L, dtype=float) ** 2).sum(axis=1) + noise_sd**2)
    sd = np.where(sd > 0, sd, 1.0)
    if len(thresholds) != scale_codes - 1:
        raise ValueError("need k-1 thresholds")
    return np.searchsorted(np.asarray(thresholds), X / sd, side="right") + 1


def simulate_respondents(q: Questionnaire, loadings, n: int, noise_sd: float = 0.5, seed=None,
                         thresholds=DEFAULT_THRESHOLDS, factor_corr=None) -> ResponseMatrix:
    """Likert responses from the latent model; false-key items load negatively."""
    X, _ = simulate_latent(q, loadings, n, noise_sd, seed, factor_corr=factor_corr)
    codes = discretize(X, loadings, noise_sd, len(q.scale.codes), thresholds)
    return ResponseMatrix(tuple(f"sim{r:04d}" for r in range(n)), tuple(q.item_ids), codes,
                          provenance=f"simulate seed={seed} noise_sd={noise_sd}")
