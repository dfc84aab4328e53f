"""Cronbach's alpha, hierarchical omega and the fit gate on both."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cfa import GENERAL_FACTOR, FitReport, acceptability_flags


@dataclass(frozen=True)
class Gate:
    interpretable: bool
    reason: str = ""

    def __str__(self):
        return "interpretable" if self.interpretable else f"not_interpretable({self.reason})"


@dataclass(frozen=True)
class ReliabilityReport:
    facet: str
    alpha: float | None
    omega_h: float | None
    gating: Gate
    omega_reason: str = ""
    source_fits: tuple[FitReport, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {"facet": self.facet, "alpha": self.alpha, "omega_h": self.omega_h,
                "interpretable": self.gating.interpretable, "gate_reason": self.gating.reason,
                "omega_reason": self.omega_reason,
                "source_fits": [f"{r.model}[{r.facet}]" if r.facet else r.model for r in self.source_fits]}


def cronbach_alpha(items) -> float | None:
    """``k/(k-1) * (1 - sum item variances / variance of the sum score)``.

    ``items`` is respondents x items. Returns ``None`` when the sum score
    has no variance. Not clamped: adversarial data can give alpha < 0.
    """
    X = np.asarray(items, dtype=float)
    n, k = X.shape
    if k < 2 or n < 2:
        raise ValueError("alpha needs at least 2 items and 2 respondents")
    var_sum = X.sum(axis=1).var(ddof=1)
    if not var_sum > 0:
        return None
    return float(k / (k - 1) * (1.0 - X.var(axis=0, ddof=1).sum() / var_sum))


class OmegaUnavailable(ValueError):
    pass


def omega_h_from_parameters(general, sub_factor_loadings, residual_variances) -> float:
    """Hierarchical omega from a bifactor parameter set with unit factor variances.

    ``general``: general-factor loading per item; ``sub_factor_loadings``:
    one sequence of loadings per sub-factor; ``residual_variances``: per item.
    """
    g = float(np.sum(general)) ** 2
    s = sum(float(np.sum(l)) ** 2 for l in sub_factor_loadings)
    var_s = g + s + float(np.sum(residual_variances))
    return g / var_s


def omega_h(fit: FitReport, general_factor: str = GENERAL_FACTOR) -> float:
    """Hierarchical omega from a fitted general-plus-sub-factor model.

    Raises :class:`OmegaUnavailable` when the fit is not converged or not
    valid, or lacks the general factor. The sum-score variance is the
    model-implied one, which reduces to general + sub-factor + residual
    parts when factors are orthogonal.
    """
    if not fit.converged:
        raise OmegaUnavailable("non-convergence")
    if not fit.valid:
        raise OmegaUnavailable(f"invalid solution ({fit.message})" if fit.message else "invalid solution")
    loads = {}
    for key, v in fit.loadings.items():
        f, item = key.split("=~")
        loads.setdefault(f, {})[item] = v
    if general_factor not in loads:
        raise OmegaUnavailable(f"model has no factor named {general_factor}")
    items = [k.split("~~")[0] for k in fit.estimates if "~~" in k and k.split("~~")[0] == k.split("~~")[1]]
    factors = list(loads)
    Lam = np.array([[loads[f].get(i, 0.0) for f in factors] for i in items])
    Phi = np.eye(len(factors))
    for key, v in fit.estimates.items():
        a, _, b = key.partition("~~")
        if a in factors and b in factors and a != b:
            ia, ib = factors.index(a), factors.index(b)
            Phi[ia, ib] = Phi[ib, ia] = v
    theta = np.array([fit.estimates[f"{i}~~{i}"] for i in items])
    ones = Lam.sum(axis=0)
    var_s = float(ones @ Phi @ ones + theta.sum())
    g = ones[factors.index(general_factor)] ** 2
    return float(g / var_s)


def gated_report(facet: str, alpha: float | None, omega: float | None, fits, omega_reason: str = "") -> ReliabilityReport:
    """Attach the fit gate: interpretable only if every fit passes all thresholds."""
    fits = tuple(fits)
    reasons = []
    for r in fits:
        label = f"{r.model}[{r.facet}]" if r.facet else r.model
        if not r.usable:
            reasons.append(f"{label}: {'non-convergence' if not r.converged else 'invalid solution'}")
            continue
        bad = [k.upper() for k, fl in acceptability_flags(r).items() if not fl.passed]
        if bad:
            reasons.append(f"{label}: poor fit ({', '.join(bad)})")
    if omega is None and not reasons:
        reasons.append(omega_reason or "omega_h unavailable")
    if not fits:
        reasons.append("no model fit available")
    gate = Gate(not reasons, "; ".join(reasons))
    return ReliabilityReport(facet, alpha, omega, gate, omega_reason, fits)


def mean_or_none(values):
    vals = [v for v in values]
    if not vals or any(v is None or (isinstance(v, float) and math.isnan(v)) for v in vals):
        return None
    return float(np.mean(vals))
