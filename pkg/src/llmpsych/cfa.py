"""Confirmatory factor analysis by maximum likelihood.

Models are written in a small lavaan-like syntax::

    Sociability =~ E1 + E16 + E31 + E46
    Assertiveness =~ E6 + E21 + E36 + E51
    Sociability ~~ 0*Assertiveness

Every factor has unit variance; declared loadings are free unless given as
``value*item``; factor covariances are free unless fixed with ``value*``;
each observed item has a free residual variance.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .core import Questionnaire, QuestionnaireError

CFI_MIN = 0.95
TLI_MIN = 0.95
RMSEA_MAX = 0.06

MODEL_NAMES = ("single_component", "three_subcomponents", "three_plus_acquiescence", "full_five_factor")
GENERAL_FACTOR = "general_factor"


class ModelSyntaxError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ModelError(ValueError):
    """Structurally impossible model, e.g. more free parameters than moments."""


class NumericalError(ValueError):
    """Sample covariance unusable for ML (not positive definite)."""


@dataclass(frozen=True)
class SemModel:
    name: str
    factors: tuple[str, ...]
    items: tuple[str, ...]
    free_loadings: np.ndarray  # items x factors, bool
    fixed_loadings: np.ndarray  # values where not free
    factor_cov: dict = field(default_factory=dict)  # (a, b) index pair -> fixed value; absent = free

    @property
    def p(self) -> int:
        return len(self.items)

    @property
    def m(self) -> int:
        return len(self.factors)

    @property
    def loading_index(self) -> list[tuple[int, int]]:
        return [tuple(ij) for ij in np.argwhere(self.free_loadings)]

    @property
    def cov_index(self) -> list[tuple[int, int]]:
        return [(a, b) for a in range(self.m) for b in range(a + 1, self.m) if (a, b) not in self.factor_cov]

    @property
    def n_params(self) -> int:
        return len(self.loading_index) + len(self.cov_index) + self.p

    @property
    def df(self) -> int:
        return self.p * (self.p + 1) // 2 - self.n_params

    def param_names(self) -> list[str]:
        names = [f"{self.factors[j]}=~{self.items[i]}" for i, j in self.loading_index]
        names += [f"{self.factors[a]}~~{self.factors[b]}" for a, b in self.cov_index]
        names += [f"{it}~~{it}" for it in self.items]
        return names

    def unpack(self, theta):
        """Split a parameter vector into (Lambda, Phi, residual variances)."""
        theta = np.asarray(theta, dtype=float)
        nl, nc = len(self.loading_index), len(self.cov_index)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        Lam = np.where(self.free_loadings, 0.0, self.fixed_loadings)
        li = np.array(self.loading_index, dtype=int).reshape(-1, 2)
        Lam[li[:, 0], li[:, 1]] = theta[:nl]
        Phi = np.eye(self.m)
        for (a, b), v in self.factor_cov.items():
            Phi[a, b] = Phi[b, a] = v
        for (a, b), v in zip(self.cov_index, theta[nl:nl + nc]):
            Phi[a, b] = Phi[b, a] = v
        return Lam, Phi, theta[nl + nc:].copy()

    def start_values(self, S) -> np.ndarray:
        return np.concatenate([np.full(len(self.loading_index), 0.5), np.zeros(len(self.cov_index)),
                               0.5 * np.diag(np.asarray(S, dtype=float))])


_IDENT = r"[A-Za-z_][A-Za-z0-9_.]*"
_TERM = re.compile(rf"^\s*(?:(?P<val>[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?|NA)\s*\*\s*)?(?P<name>{_IDENT})\s*$")


def _strip_wrapper(text):
    m = re.match(r"^\s*(?P<name>" + _IDENT + r")\s*<-\s*(?P<q>['\"])(?P<body>.*?)(?P=q)?\s*$", text, re.S)
    if m:
        return m.group("name"), m.group("body")
    return None, text


def parse_model(spec: str, q: Questionnaire | None = None, name: str | None = None) -> SemModel:
    """Parse model syntax. ``q`` (optional) validates item ids and fixes their order."""
    wrapped, body = _strip_wrapper(spec)
    name = name or wrapped or "model"
    statements = []  # (lineno, text)
    for lineno, raw in enumerate(body.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("+") and statements:
            statements[-1] = (statements[-1][0], statements[-1][1] + " " + line)
        else:
            statements.append((lineno, line))
    factors, loadings, covs = [], {}, []
    for lineno, line in statements:
        if "=~" in line:
            lhs, rhs = line.split("=~", 1)
            lhs = lhs.strip()
            if not re.fullmatch(_IDENT, lhs):
                raise ModelSyntaxError(f"bad factor name {lhs!r}", lineno)
            if lhs in factors:
                raise ModelSyntaxError(f"factor {lhs} declared twice", lineno)
            factors.append(lhs)
            for term in rhs.split("+"):
                m = _TERM.match(term)
                if not m:
                    raise ModelSyntaxError(f"malformed term {term.strip()!r}", lineno)
                item = m.group("name")
                if (item, lhs) in loadings:
                    raise ModelSyntaxError(f"duplicate loading {lhs} =~ {item}", lineno)
                val = m.group("val")
                loadings[(item, lhs)] = None if val in (None, "NA") else float(val)
        elif "~~" in line:
            lhs, rhs = line.split("~~", 1)
            m = _TERM.match(rhs)
            if not re.fullmatch(_IDENT, lhs.strip()) or not m:
                raise ModelSyntaxError(f"malformed covariance {line!r}", lineno)
            val = m.group("val")
            covs.append((lineno, lhs.strip(), m.group("name"), None if val in (None, "NA") else float(val)))
        else:
            raise ModelSyntaxError(f"expected '=~' or '~~' in {line!r}", lineno)
    if not factors:
        raise ModelSyntaxError("no factors declared")
    referenced = list(dict.fromkeys(item for item, _ in loadings))
    for item in referenced:
        if item in factors:
            raise ModelSyntaxError(f"{item} is a factor; higher-order factors are not supported")
    if q is not None:
        known = set(q.item_ids)
        for item in referenced:
            if item not in known:
                line = next(ln for ln, t in statements if re.search(rf"(?<![\w.]){re.escape(item)}(?![\w.])", t))
                raise ModelSyntaxError(f"unknown item {item!r}", line)
        pos = {iid: k for k, iid in enumerate(q.item_ids)}
        referenced.sort(key=pos.__getitem__)
    p, m = len(referenced), len(factors)
    free = np.zeros((p, m), dtype=bool)
    fixed = np.zeros((p, m))
    for (item, f), val in loadings.items():
        i, j = referenced.index(item), factors.index(f)
        if val is None:
            free[i, j] = True
        else:
            fixed[i, j] = val
    factor_cov = {}
    for lineno, a, b, val in covs:
        for f in (a, b):
            if f not in factors:
                raise ModelSyntaxError(f"unknown factor {f!r} in covariance", lineno)
        if a == b:
            if val is not None and val != 1.0:
                raise ModelSyntaxError("factor variances are fixed to 1", lineno)
            continue
        ia, ib = sorted((factors.index(a), factors.index(b)))
        if val is None:
            factor_cov.pop((ia, ib), None)
        else:
            if abs(val) > 1:
                raise ModelSyntaxError("fixed factor covariance must lie in [-1, 1]", lineno)
            factor_cov[(ia, ib)] = val
    return SemModel(name, tuple(factors), tuple(referenced), free, fixed, factor_cov)


def _terms(ids, per_line=6):
    chunks = [" + ".join(ids[k:k + per_line]) for k in range(0, len(ids), per_line)]
    return "\n    + ".join(chunks)


def builtin_model_text(q: Questionnaire, model: str, facet: str | None = None,
                       exclude=()) -> str:
    """Syntax for one of the four built-in structures.

    Facet-level models (all but ``full_five_factor``) need ``facet``; the
    sub-component variants need a questionnaire with sub-facets. Items in
    ``exclude`` are left out, and factors left without items disappear.
    """
    exclude = set(exclude)
    keep = lambda its: [it.id for it in its if it.id not in exclude]  # noqa: E731
    if model == "full_five_factor":
        blocks = [(f, keep(q.facet_items(f))) for f in q.facet_ids]
        return "\n".join(f"{f} =~ {_terms(ids)}" for f, ids in blocks if ids)
    if model not in MODEL_NAMES:
        raise ValueError(f"unknown model {model!r}; choose from {MODEL_NAMES}")
    if facet is None:
        raise ValueError(f"{model} is fitted per facet")
    items = keep(q.facet_items(facet))
    if not items:
        raise ModelError(f"facet {facet} has no items left")
    if model == "single_component":
        return f"{facet} =~ {_terms(items)}"
    if not q.has_sub_facets(facet):
        raise QuestionnaireError(f"{q.name} facet {facet} declares no sub-facets")
    subs = {s: keep(its) for s, its in q.sub_facet_items(facet).items()}
    subs = {s: ids for s, ids in subs.items() if ids}
    lines = [f"{s} =~ {' + '.join(ids)}" for s, ids in subs.items()]
    names = list(subs)
    if model == "three_plus_acquiescence":
        lines.append(f"{GENERAL_FACTOR} =~ {_terms(items)}")
        names.append(GENERAL_FACTOR)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            lines.append(f"{names[a]} ~~ 0*{names[b]}")
    return "\n".join(lines)


def builtin_models(q: Questionnaire) -> dict:
    """All built-in model texts: ``{model: {facet: text}}``, full model under key ``None``."""
    out = {"single_component": {f: builtin_model_text(q, "single_component", f) for f in q.facet_ids}}
    if q.has_sub_facets():
        for name in ("three_subcomponents", "three_plus_acquiescence"):
            out[name] = {f: builtin_model_text(q, name, f) for f in q.facet_ids}
    out["full_five_factor"] = {None: builtin_model_text(q, "full_five_factor")}
    return out


def implied_covariance(model: SemModel, theta) -> np.ndarray:
    """``Lambda Phi Lambda' + diag(residual variances)``."""
    Lam, Phi, resid = model.unpack(theta)
    return Lam @ Phi @ Lam.T + np.diag(resid)


def _logdet_pd(A):
    try:
        C = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    return 2.0 * np.log(np.diag(C)).sum()


def ml_discrepancy(model: SemModel, theta, S, logdet_S=None) -> float:
    """``ln|Sigma| + tr(S Sigma^-1) - ln|S| - p``; ``inf`` if Sigma is not PD."""
    S = np.asarray(S, dtype=float)
    Sigma = implied_covariance(model, theta)
    ld = _logdet_pd(Sigma)
    if ld is None:
        return math.inf
    if logdet_S is None:
        logdet_S = np.linalg.slogdet(S)[1]
    return float(ld + np.trace(np.linalg.solve(Sigma, S)) - logdet_S - S.shape[0])


def ml_gradient(model: SemModel, theta, S) -> np.ndarray:
    """Analytic gradient of :func:`ml_discrepancy`.

    With ``W = Sigma^-1 - Sigma^-1 S Sigma^-1``: d/dLambda = 2 W Lambda Phi,
    d/dPhi_ab = 2 (Lambda' W Lambda)_ab, d/dtheta_i = W_ii.
    """
    Lam, Phi, resid = model.unpack(theta)
    Sigma = Lam @ Phi @ Lam.T + np.diag(resid)
    Si = np.linalg.inv(Sigma)
    W = Si - Si @ np.asarray(S, dtype=float) @ Si
    W = (W + W.T) / 2
    gL = 2.0 * W @ Lam @ Phi
    gP = 2.0 * Lam.T @ W @ Lam
    li = np.array(model.loading_index, dtype=int).reshape(-1, 2)
    parts = [gL[li[:, 0], li[:, 1]], np.array([gP[a, b] for a, b in model.cov_index]), np.diag(W)]
    return np.concatenate(parts)


def fit_indices(chi_square, df, baseline_chi_square, baseline_df, n):
    """(CFI, TLI, RMSEA) against the independence baseline; ``None`` where undefined."""
    if df <= 0 or baseline_df <= 0:
        return None, None, None
    d = max(chi_square - df, 0.0)
    d_b = max(baseline_chi_square - baseline_df, d, 0.0)
    cfi = 1.0 if d_b == 0 else 1.0 - d / d_b
    ratio_b = baseline_chi_square / baseline_df
    tli = None if ratio_b == 1 else (ratio_b - chi_square / df) / (ratio_b - 1.0)
    rmsea = math.sqrt(d / (df * (n - 1)))
    return cfi, tli, rmsea


@dataclass
class FitReport:
    model: str
    converged: bool
    valid: bool
    n: int
    df: int
    f_min: float | None = None
    chi_square: float | None = None
    baseline_chi_square: float | None = None
    baseline_df: int | None = None
    cfi: float | None = None
    tli: float | None = None
    rmsea: float | None = None
    estimates: dict = field(default_factory=dict)
    loadings: dict = field(default_factory=dict)
    message: str = ""
    iterations: int = 0
    grad_norm: float | None = None
    ridge: float = 0.0
    facet: str | None = None
    dropped_items: tuple[str, ...] = ()

    @property
    def usable(self) -> bool:
        return self.converged and self.valid

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "model", "facet", "converged", "valid", "n", "df", "f_min", "chi_square",
            "baseline_chi_square", "baseline_df", "cfi", "tli", "rmsea", "message",
            "iterations", "grad_norm", "ridge")}
        d["dropped_items"] = list(self.dropped_items)
        d["estimates"] = dict(self.estimates)
        d["loadings"] = dict(self.loadings)
        return d

    def to_json(self) -> str:
        return json.dumps(_rounded(self.to_dict()), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        d = dict(d)
        d["dropped_items"] = tuple(d.get("dropped_items", ()))
        return cls(**d)

    def record(self) -> str:
        """Plain-text summary: indices then the parameter table."""
        fmt = lambda v: "NA" if v is None else f"{v:.4f}"  # noqa: E731
        out = [f"model: {self.model}" + (f" [{self.facet}]" if self.facet else ""),
               f"converged: {self.converged}", f"valid: {self.valid}",
               f"chi_square: {fmt(self.chi_square)}", f"df: {self.df}",
               f"CFI: {fmt(self.cfi)}", f"TLI: {fmt(self.tli)}", f"RMSEA: {fmt(self.rmsea)}"]
        if self.message:
            out.append(f"note: {self.message}")
        out.append("parameters:")
        out += [f"  {k:<32} {v: .4f}" for k, v in self.estimates.items()]
        return "\n".join(out)


def _rounded(obj, digits=10):
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}") if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _rounded(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v, digits) for v in obj]
    return obj


def check_sample_cov(S, ridge: bool | float = False):
    S = np.asarray(S, dtype=float)
    S = (S + S.T) / 2
    eps = 0.0
    if _logdet_pd(S) is None:
        if not ridge:
            raise NumericalError("sample covariance is not positive definite")
        eps = 1e-6 if ridge is True else float(ridge)
        S = S + eps * np.eye(S.shape[0])
        if _logdet_pd(S) is None:
            raise NumericalError("sample covariance is not positive definite even after ridge repair")
    return S, eps


def fit_ml(model: SemModel, sample_cov, n: int, *, tol: float = 1e-6, max_iter: int = 500,
           ridge: bool | float = False, start=None, facet: str | None = None) -> FitReport:
    """Minimize the ML discrepancy with BFGS and the analytic gradient.

    ``converged`` requires the final gradient infinity-norm below ``tol``;
    ``valid`` requires positive residual variances and factor correlations
    within [-1, 1]. Fit indices are ``None`` unless both hold. Optimizer
    trouble never raises: it yields ``converged=False``.
    """
    S, eps = check_sample_cov(sample_cov, ridge)
    p = S.shape[0]
    if p != model.p:
        raise ModelError(f"model has {model.p} items, covariance has {p}")
    if model.df < 0:
        raise ModelError(f"model not identified: {model.n_params} parameters for {p * (p + 1) // 2} moments")
    if n <= p:
        raise ModelError(f"need n > p (n={n}, p={p})")
    logdet_S = np.linalg.slogdet(S)[1]
    diagS = np.diag(S)
    f_base = float(np.log(diagS).sum() - logdet_S)
    base = dict(baseline_chi_square=(n - 1) * f_base, baseline_df=p * (p - 1) // 2)

    def fun(theta):
        f = ml_discrepancy(model, theta, S, logdet_S)
        if not math.isfinite(f):
            return 1e10, np.zeros_like(theta)
        return f, ml_gradient(model, theta, S)

    x0 = model.start_values(S) if start is None else np.asarray(start, dtype=float)
    with np.errstate(all="ignore"):
        res = minimize(fun, x0, jac=True, method="BFGS", options={"gtol": tol, "maxiter": max_iter})
    theta = res.x
    f = ml_discrepancy(model, theta, S, logdet_S)
    if math.isfinite(f):
        g = ml_gradient(model, theta, S)
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    else:
        gnorm = math.inf
    converged = math.isfinite(f) and gnorm < tol
    Lam, Phi, resid = model.unpack(theta)
    all_loadings = {f"{model.factors[j]}=~{model.items[i]}": float(Lam[i, j])
                    for i, j in zip(*np.nonzero(model.free_loadings | (model.fixed_loadings != 0)))}
    off = Phi[np.triu_indices(model.m, 1)]
    problems = []
    if np.any(resid <= 0):
        problems.append("negative residual variance (Heywood case)")
    if off.size and np.any(np.abs(off) > 1):
        problems.append("factor correlation outside [-1, 1]")
    valid = not problems
    msg = "; ".join(problems)
    if not converged:
        msg = "; ".join(filter(None, [f"did not converge (|grad|={gnorm:.2e}, {res.message})", msg]))
    if eps:
        msg = "; ".join(filter(None, [msg, f"ridge {eps:g} added to sample covariance"]))
    report = FitReport(model=model.name, converged=bool(converged), valid=bool(valid), n=int(n),
                       df=model.df, f_min=f if math.isfinite(f) else None,
                       estimates=dict(zip(model.param_names(), map(float, theta))),
                       loadings=all_loadings,
                       message=msg, iterations=int(res.nit), grad_norm=gnorm, ridge=eps,
                       facet=facet, **base)
    if report.usable:
        report.f_min = max(f, 0.0)
        report.chi_square = (n - 1) * report.f_min
        report.cfi, report.tli, report.rmsea = fit_indices(
            report.chi_square, report.df, report.baseline_chi_square, report.baseline_df, n)
    return report


@dataclass(frozen=True)
class Flag:
    passed: bool
    reason: str = ""


def acceptability_flags(report=None, *, cfi=None, tli=None, rmsea=None) -> dict[str, Flag]:
    """Pass/fail per index against CFI/TLI >= 0.95 and RMSEA <= 0.06."""
    if report is not None:
        cfi, tli, rmsea = report.cfi, report.tli, report.rmsea
        na_reason = report.message or "index undefined"
    else:
        na_reason = "index undefined"
    out = {}
    for name, v, ok in (("cfi", cfi, lambda x: x >= CFI_MIN), ("tli", tli, lambda x: x >= TLI_MIN),
                        ("rmsea", rmsea, lambda x: x <= RMSEA_MAX)):
        if v is None or (isinstance(v, float) and math.isnan(v)):
            out[name] = Flag(False, f"not interpretable: NA ({na_reason})")
        else:
            out[name] = Flag(bool(ok(v)), "" if ok(v) else "outside acceptable range")
    return out


def passes(report) -> bool:
    return all(f.passed for f in acceptability_flags(report).values())


def sample_covariance(X, correlation: bool = False) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    S = np.cov(X, rowvar=False, ddof=1)
    if correlation:
        d = np.sqrt(np.diag(S))
        S = S / np.outer(d, d)
    return np.atleast_2d(S)


def fit_scores(model: SemModel, scored, *, correlation: bool = False, **options) -> FitReport:
    """Fit ``model`` to the model's item columns of a :class:`ScoredMatrix`."""
    X = scored.columns(model.items)
    return fit_ml(model, sample_covariance(X, correlation), X.shape[0], **options)
