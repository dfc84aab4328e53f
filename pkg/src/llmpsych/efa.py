"""PCA of standardized item scores with varimax rotation and facet alignment."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .core import Questionnaire, ResponseMatrix, ScoredMatrix, impute_neutral, standardize


class NumericalError(ValueError):
    pass


@dataclass(frozen=True)
class LoadingMatrix:
    loadings: np.ndarray
    item_ids: tuple[str, ...]
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    component_labels: tuple[str, ...] | None = None
    rotation: np.ndarray | None = None
    converged: bool = True
    criterion_history: tuple[float, ...] = ()
    congruence: np.ndarray | None = None
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    @property
    def communalities(self) -> np.ndarray:
        return (self.loadings**2).sum(axis=1)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.component_labels or tuple(f"PC{g + 1}" for g in range(self.n_components))


def correlation_matrix(scored, item_ids=None) -> np.ndarray:
    """Pearson correlations of the columns; zero-variance columns are an error."""
    if isinstance(scored, ScoredMatrix):
        X, item_ids = scored.values, scored.item_ids
    else:
        X = np.asarray(scored, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 respondents")
    Z = standardize(X, item_ids)
    R = (Z.T @ Z) / (X.shape[0] - 1)
    R = (R + R.T) / 2
    np.fill_diagonal(R, 1.0)
    return R


def _sign_by_max(L):
    idx = np.argmax(np.abs(L), axis=0)
    s = np.sign(L[idx, np.arange(L.shape[1])])
    return np.where(s == 0, 1.0, s)


def pca(corr, ncomp: int = 5, data=None, item_ids=None) -> LoadingMatrix:
    """Principal components of a correlation matrix.

    Loading column g is ``eigenvector_g * sqrt(eigenvalue_g)``. When
    standardized ``data`` is supplied, component scores ``data @ eigenvectors``
    are attached.
    """
    R = np.asarray(corr, dtype=float)
    p = R.shape[0]
    if R.shape != (p, p) or not np.allclose(R, R.T, atol=1e-10):
        raise NumericalError("correlation matrix must be square and symmetric")
    vals, vecs = np.linalg.eigh(R)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals[-1] < -1e-8:
        raise NumericalError(f"matrix not positive semidefinite (min eigenvalue {vals[-1]:.3g}); "
                             "drop redundant or constant items")
    rank = int(np.sum(vals > 1e-10 * max(vals[0], 1.0)))
    if not 1 <= ncomp <= rank:
        raise NumericalError(f"ncomp={ncomp} exceeds matrix rank {rank}")
    vals = np.clip(vals, 0.0, None)
    V = vecs[:, :ncomp]
    V = V * _sign_by_max(V)
    L = V * np.sqrt(vals[:ncomp])
    scores = None if data is None else np.asarray(data, dtype=float) @ V
    ids = tuple(item_ids) if item_ids is not None else tuple(str(i) for i in range(p))
    return LoadingMatrix(L, ids, vals[:ncomp], vals[:ncomp] / p, scores=scores)


def varimax(lm: LoadingMatrix, kaiser_normalize: bool = True, tol: float = 1e-8,
            max_sweeps: int = 1000) -> LoadingMatrix:
    """Orthogonal varimax rotation by pairwise plane rotations.

    Each pair rotation takes the exact optimal angle, so the criterion never
    decreases across sweeps; iteration stops once a full sweep gains less
    than ``tol``. Rotated columns are re-sorted by explained variance.
    """
    L = np.asarray(lm.loadings, dtype=float)
    if L.shape[1] < 2:
        raise ValueError("varimax needs at least 2 components")
    h = np.sqrt((L**2).sum(axis=1)) if kaiser_normalize else np.ones(L.shape[0])
    h = np.where(h > 0, h, 1.0)
    B, R, history, converged = _kernels.varimax_sweeps(L / h[:, None], tol, max_sweeps)
    B = np.asarray(B) * h[:, None]
    R = np.asarray(R)
    ss = (B**2).sum(axis=0)
    order = np.argsort(-ss, kind="stable")
    B, R = B[:, order], R[:, order]
    s = _sign_by_max(B)
    B, R = B * s, R * s
    p = L.shape[0]
    scores = None if lm.scores is None else lm.scores @ R
    return replace(lm, loadings=B, rotation=R, explained_variance_ratio=(B**2).sum(axis=0) / p,
                   converged=bool(converged), criterion_history=tuple(map(float, history)),
                   component_labels=None, congruence=None, scores=scores)


def tucker_congruence(A, B) -> np.ndarray:
    """Column-by-column congruence coefficients (rows of A x columns of B)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        C = (A.T @ B) / np.outer(na, nb)
    return np.nan_to_num(C)


def facet_target(q: Questionnaire, item_ids) -> tuple[np.ndarray, tuple[str, ...]]:
    """Signed facet indicators: +1 true key, -1 false key, 0 elsewhere."""
    facets = tuple(q.facet_ids)
    T = np.zeros((len(item_ids), len(facets)))
    for i, iid in enumerate(item_ids):
        it = q.item(iid)
        T[i, facets.index(it.facet)] = -1.0 if it.is_false_key else 1.0
    return T, facets


def align_components(lm: LoadingMatrix, reference) -> LoadingMatrix:
    """Permute and sign-flip components to best match ``reference``.

    ``reference`` may be a :class:`Questionnaire` (signed key indicators per
    facet), a ``{label: [item ids]}`` membership map, or a reference
    :class:`LoadingMatrix`/array with rows in ``lm.item_ids`` order.
    """
    L = lm.loadings
    true_sets = None
    if isinstance(reference, Questionnaire):
        T, labels = facet_target(reference, lm.item_ids)
        true_sets = [np.array([reference.item(i).facet == f and not reference.item(i).is_false_key
                               for i in lm.item_ids]) for f in labels]
    elif isinstance(reference, dict):
        labels = tuple(reference)
        T = np.array([[1.0 if iid in set(reference[f]) else 0.0 for f in labels] for iid in lm.item_ids])
    else:
        ref = reference.loadings if isinstance(reference, LoadingMatrix) else np.asarray(reference, float)
        labels = reference.labels if isinstance(reference, LoadingMatrix) else tuple(
            f"F{g + 1}" for g in range(ref.shape[1]))
        T = ref
    if T.shape[1] != L.shape[1]:
        raise ValueError(f"{L.shape[1]} components but reference has {T.shape[1]} factors")
    C = tucker_congruence(L, T)
    k = L.shape[1]
    rows, cols = linear_sum_assignment(-np.abs(C))
    perm = np.empty(k, dtype=int)
    perm[cols] = rows
    L2 = L[:, perm]
    signs = np.sign(C[perm, np.arange(k)])
    if true_sets is not None:
        for f in range(k):
            s = np.sign(L2[true_sets[f], f].sum())
            if s != 0:
                signs[f] = s
    signs = np.where(signs == 0, 1.0, signs)
    L2 = L2 * signs
    R = None if lm.rotation is None else lm.rotation[:, perm] * signs
    scores = None if lm.scores is None else lm.scores[:, perm] * signs
    return replace(lm, loadings=L2, rotation=R, component_labels=tuple(labels),
                   eigenvalues=lm.eigenvalues[perm] if len(lm.eigenvalues) == k else lm.eigenvalues,
                   explained_variance_ratio=lm.explained_variance_ratio[perm],
                   congruence=tucker_congruence(L2, T)[np.arange(k), np.arange(k)], scores=scores)


@dataclass(frozen=True)
class ItemDiagnostic:
    item: str
    facet: str
    false_key: bool
    dominant: str
    dominant_loading: float
    own_loading: float | None
    hit: bool
    key_ok: bool


@dataclass(frozen=True)
class SimpleStructureReport:
    items: tuple[ItemDiagnostic, ...]

    @property
    def hit_rate(self) -> float:
        return float(np.mean([d.hit for d in self.items]))

    @property
    def key_separation_rate(self) -> float:
        return float(np.mean([d.key_ok for d in self.items]))

    def key_failure_rate(self, false_key: bool) -> float:
        sel = [d for d in self.items if d.false_key == false_key]
        return float(np.mean([not d.key_ok for d in sel])) if sel else float("nan")

    def summary(self) -> dict:
        return {"items": len(self.items), "hit_rate": self.hit_rate,
                "key_separation_rate": self.key_separation_rate,
                "key_failure_rate_true_key": self.key_failure_rate(False),
                "key_failure_rate_false_key": self.key_failure_rate(True)}


def simple_structure_report(lm: LoadingMatrix, q: Questionnaire) -> SimpleStructureReport:
    """Per-item dominant component, facet hit and key-sign check on aligned loadings."""
    labels = lm.labels
    out = []
    for i, iid in enumerate(lm.item_ids):
        it = q.item(iid)
        row = lm.loadings[i]
        g = int(np.argmax(np.abs(row)))
        own = float(row[labels.index(it.facet)]) if it.facet in labels else None
        want = -1.0 if it.is_false_key else 1.0
        out.append(ItemDiagnostic(iid, it.facet, it.is_false_key, labels[g], float(abs(row[g])), own,
                                  labels[g] == it.facet, own is not None and np.sign(own) == want))
    return SimpleStructureReport(tuple(out))


def _row_order(lm, q):
    facets = q.facet_ids
    pos = {iid: k for k, iid in enumerate(q.item_ids)}
    return sorted(range(len(lm.item_ids)), key=lambda i: (
        facets.index(q.item(lm.item_ids[i]).facet), q.item(lm.item_ids[i]).is_false_key,
        pos[lm.item_ids[i]]))


def write_loadings_csv(path, lm: LoadingMatrix, q: Questionnaire, header: dict | None = None) -> None:
    """Rows ordered by facet, then key, then questionnaire position."""
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "key", *lm.labels])
        for i in _row_order(lm, q):
            iid = lm.item_ids[i]
            w.writerow([iid, "-" if q.item(iid).is_false_key else "+",
                        *[f"{v:.4f}" for v in lm.loadings[i]]])


def _diverging(v):
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, int(255 * (1 - v)), int(255 * (1 - v))
    else:
        r, g, b = int(255 * (1 + v)), int(255 * (1 + v)), 255
    return f"rgb({r},{g},{b})"


def loadings_svg(lm: LoadingMatrix, q: Questionnaire, cell: int = 12) -> str:
    order = _row_order(lm, q)
    k = lm.n_components
    left, top = 70, 24
    width, height = left + k * cell * 3 + 20, top + len(order) * cell + 20
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for g, lab in enumerate(lm.labels):
        parts.append(f'<text x="{left + g * cell * 3 + cell}" y="{top - 8}" font-size="10">{lab}</text>')
    prev = None
    for r, i in enumerate(order):
        iid = lm.item_ids[i]
        it = q.item(iid)
        y = top + r * cell
        if prev is not None and it.facet != prev:
            parts.append(f'<line x1="0" x2="{width}" y1="{y}" y2="{y}" stroke="black"/>')
        prev = it.facet
        parts.append(f'<text x="2" y="{y + cell - 2}" font-size="9">{iid}{"-" if it.is_false_key else "+"}</text>')
        for g in range(k):
            parts.append(f'<rect x="{left + g * cell * 3}" y="{y}" width="{cell * 3}" height="{cell}" '
                         f'fill="{_diverging(lm.loadings[i, g])}"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def run_pca(scored: ScoredMatrix | ResponseMatrix, q: Questionnaire, ncomp: int = 5,
            kaiser_normalize: bool = True):
    """Standardize, PCA, varimax, align to the questionnaire's facets.

    Pass raw responses (or raw codes as a :class:`ScoredMatrix`): the key-sign
    check expects false-key items to load opposite to true-key items, which
    key correction would erase.
    """
    if isinstance(scored, ResponseMatrix):
        scored = impute_neutral(scored, q)
    Z = standardize(scored.values, scored.item_ids)
    R = correlation_matrix(scored)
    lm = pca(R, ncomp, data=Z, item_ids=scored.item_ids)
    lm = varimax(lm, kaiser_normalize=kaiser_normalize)
    if ncomp == len(q.facets):
        lm = align_components(lm, q)
    return lm, simple_structure_report(lm, q)
