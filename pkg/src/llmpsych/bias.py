"""Agree bias per respondent and a model-free test against a human reference."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Questionnaire, QuestionnaireError, ResponseMatrix, ScoredMatrix


@dataclass(frozen=True)
class AgreeBiasResult:
    respondents: tuple[str, ...]
    values: np.ndarray

    @property
    def per_respondent(self) -> dict[str, float]:
        return dict(zip(self.respondents, map(float, self.values)))

    @property
    def mean_bias(self) -> float:
        return float(np.mean(self.values))

    @property
    def range(self) -> tuple[float, float]:
        return float(np.min(self.values)), float(np.max(self.values))


@dataclass(frozen=True)
class ReferenceDistribution:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float))
        if v.size < 2:
            raise ValueError("reference distribution needs at least 2 values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return int(self.values.size)


def _key_split(item_ids, q):
    fk = np.array([q.item(i).is_false_key for i in item_ids], dtype=np.int8)
    if fk.all() or not fk.any():
        raise QuestionnaireError(f"{q.name}: agree bias needs both true-key and false-key items")
    return fk


def agree_bias(data: ScoredMatrix | ResponseMatrix, q: Questionnaire) -> AgreeBiasResult:
    """Mean key-corrected score on true-key items minus the mean on false-key items.

    Raw :class:`ResponseMatrix` input goes through the fused compiled kernel
    (impute, flip, average in one pass); :class:`ScoredMatrix` input is
    already on the common scale.
    """
    fk = _key_split(data.item_ids, q)
    if isinstance(data, ResponseMatrix):
        sc = q.scale
        vals = _kernels.agree_bias_rows(data.scores, fk, sc.min_code, sc.max_code, sc.neutral_code)
    else:
        fk = fk.astype(bool)
        vals = data.values[:, ~fk].mean(axis=1) - data.values[:, fk].mean(axis=1)
    return AgreeBiasResult(tuple(data.respondents), np.asarray(vals, dtype=float))


def percentile_test(model_bias: float, ref: ReferenceDistribution) -> tuple[float, float]:
    """Exceedance percentile and one-sided add-one p-value.

    percentile = share of reference values strictly below ``model_bias``;
    p = (#{ref >= model_bias} + 1) / (n + 1). Ties count against rejection.
    """
    v = ref.values
    below = int(np.searchsorted(v, model_bias, side="left"))
    at_or_above = ref.n - below
    return below / ref.n, (at_or_above + 1) / (ref.n + 1)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def rows(self):
        return [(float(a), float(b), int(c)) for a, b, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def bias_histogram(results: AgreeBiasResult | np.ndarray, bins: int = 40,
                   value_range: tuple[float, float] | None = None) -> Histogram:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    vals = results.values if isinstance(results, AgreeBiasResult) else np.asarray(results, float)
    counts, edges = np.histogram(vals, bins=bins, range=value_range)
    return Histogram(edges, counts)


def write_histogram_csv(path, hist: Histogram, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for a, b, c in hist.rows():
            w.writerow([f"{a:.6g}", f"{b:.6g}", c])


def histogram_svg(hist: Histogram, markers: dict[str, float] | None = None,
                  width: int = 640, height: int = 320) -> str:
    """Bar chart of ``hist`` with optional labelled vertical markers (one per model)."""
    pad = 40
    lo, hi = float(hist.edges[0]), float(hist.edges[-1])
    span = hi - lo or 1.0
    top = max(int(hist.counts.max()), 1)
    sx = lambda x: pad + (x - lo) / span * (width - 2 * pad)  # noqa: E731
    sy = lambda c: height - pad - c / top * (height - 2 * pad)  # noqa: E731
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for (a, b, c) in hist.rows():
        parts.append(f'<rect x="{sx(a):.2f}" y="{sy(c):.2f}" width="{max(sx(b) - sx(a) - 1, 0.5):.2f}" '
                     f'height="{height - pad - sy(c):.2f}" fill="#8aa4c8"/>')
    for label, x in (markers or {}).items():
        if lo <= x <= hi:
            parts.append(f'<line x1="{sx(x):.2f}" x2="{sx(x):.2f}" y1="{pad}" y2="{height - pad}" '
                         f'stroke="#c0392b" stroke-width="2"/>')
            parts.append(f'<text x="{sx(x) + 3:.2f}" y="{pad + 12}" font-size="11">{label}</text>')
    parts.append(f'<text x="{pad}" y="{height - 10}" font-size="11">{lo:g}</text>')
    parts.append(f'<text x="{width - pad}" y="{height - 10}" font-size="11" text-anchor="end">{hi:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
