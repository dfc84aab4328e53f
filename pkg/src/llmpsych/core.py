"""Questionnaire and response-data model, key-corrected scoring, ingestion."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

MISSING = -1
BUILTIN_QUESTIONNAIRES = {"bfi2": "bfi2.json", "ipip-bffm": "ipip_bffm.json"}


class QuestionnaireError(ValueError):
    """Malformed questionnaire definition or unresolvable item reference."""


class ScaleError(ValueError):
    """A response code outside the Likert range."""


class ParseError(ValueError):
    """A response file that does not match its questionnaire."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class StandardizationError(ValueError):
    def __init__(self, items):
        self.items = list(items)
        super().__init__(f"zero variance, cannot standardize: {', '.join(map(str, self.items))}")


class StructureWarning(UserWarning):
    """Too few items left to model a facet."""


class Key(str, Enum):
    TRUE = "true"
    FALSE = "false"


@dataclass(frozen=True)
class LikertScale:
    codes: tuple[tuple[int, str], ...]
    neutral_code: int = 3

    def __post_init__(self):
        values = [c for c, _ in self.codes]
        if values != list(range(1, len(values) + 1)):
            raise QuestionnaireError(f"scale codes must be consecutive 1..k, got {values}")
        if self.neutral_code not in values:
            raise QuestionnaireError("neutral code outside the scale")

    @property
    def min_code(self) -> int:
        return self.codes[0][0]

    @property
    def max_code(self) -> int:
        return self.codes[-1][0]

    def __contains__(self, code) -> bool:
        return isinstance(code, (int, np.integer)) and self.min_code <= code <= self.max_code


FIVE_POINT = LikertScale(tuple((i, lab) for i, lab in enumerate(
    ["Disagree strongly", "Disagree a little", "Neutral; no opinion", "Agree a little", "Agree strongly"], 1)))


@dataclass(frozen=True)
class Item:
    id: str
    text: str
    facet: str
    key: Key = Key.TRUE
    sub_facet: str | None = None

    def __post_init__(self):
        if not self.text:
            raise QuestionnaireError(f"item {self.id} has empty text")
        object.__setattr__(self, "key", Key(self.key))

    @property
    def is_false_key(self) -> bool:
        return self.key is Key.FALSE


@dataclass(frozen=True)
class Facet:
    id: str
    name: str = ""
    sub_facets: tuple[str, ...] = ()


@dataclass(frozen=True)
class Questionnaire:
    name: str
    items: tuple[Item, ...]
    scale: LikertScale = FIVE_POINT
    facets: tuple[Facet, ...] = ()
    instruction: str = ""

    def __post_init__(self):
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise QuestionnaireError(f"duplicate item ids: {dup}")
        if not self.facets:
            seen = dict.fromkeys(it.facet for it in self.items)
            object.__setattr__(self, "facets", tuple(Facet(f) for f in seen))
        by_id = {f.id: f for f in self.facets}
        for it in self.items:
            if it.facet not in by_id:
                raise QuestionnaireError(f"item {it.id} references unknown facet {it.facet}")
            subs = by_id[it.facet].sub_facets
            if subs and it.sub_facet not in subs:
                raise QuestionnaireError(f"item {it.id} has sub-facet {it.sub_facet!r}, expected one of {subs}")

    @property
    def item_ids(self) -> list[str]:
        return [it.id for it in self.items]

    @property
    def facet_ids(self) -> list[str]:
        return [f.id for f in self.facets]

    def item(self, item_id: str) -> Item:
        try:
            return self._index()[item_id]
        except KeyError:
            raise QuestionnaireError(f"unknown item {item_id!r} for {self.name}") from None

    def _index(self):
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {it.id: it for it in self.items}
            object.__setattr__(self, "_idx", idx)
        return idx

    def facet(self, facet_id: str) -> Facet:
        for f in self.facets:
            if f.id == facet_id:
                return f
        raise QuestionnaireError(f"unknown facet {facet_id!r}")

    def facet_items(self, facet_id: str) -> list[Item]:
        self.facet(facet_id)
        return [it for it in self.items if it.facet == facet_id]

    def sub_facet_items(self, facet_id: str) -> dict[str, list[Item]]:
        facet = self.facet(facet_id)
        return {s: [it for it in self.items if it.facet == facet_id and it.sub_facet == s]
                for s in facet.sub_facets}

    def has_sub_facets(self, facet_id: str | None = None) -> bool:
        facets = self.facets if facet_id is None else [self.facet(facet_id)]
        return all(f.sub_facets for f in facets)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "instruction": self.instruction,
            "facets": [{"id": f.id, "name": f.name, "sub_facets": list(f.sub_facets)} for f in self.facets],
            "scale": {"neutral_code": self.scale.neutral_code, "codes": [list(c) for c in self.scale.codes]},
            "items": [{"id": it.id, "facet": it.facet, "sub_facet": it.sub_facet,
                       "key": it.key.value, "text": it.text} for it in self.items],
        }


def questionnaire_from_dict(data: dict) -> Questionnaire:
    scale = data.get("scale")
    scale = FIVE_POINT if scale is None else LikertScale(
        tuple((int(c), str(lab)) for c, lab in scale["codes"]), int(scale.get("neutral_code", 3)))
    facets = tuple(Facet(f["id"], f.get("name", ""), tuple(f.get("sub_facets") or ()))
                   for f in data.get("facets", ()))
    items = tuple(Item(id=str(r["id"]), text=r["text"], facet=r["facet"],
                       key=Key(str(r.get("key", "true")).lower()), sub_facet=r.get("sub_facet"))
                  for r in data["items"])
    return Questionnaire(data["name"], items, scale, facets, data.get("instruction", ""))


def load_questionnaire(source: str | Path) -> Questionnaire:
    """Load a questionnaire by built-in name (``bfi2``, ``ipip-bffm``) or JSON path."""
    name = str(source)
    if name.lower() in BUILTIN_QUESTIONNAIRES:
        text = resources.files("llmpsych.data").joinpath(BUILTIN_QUESTIONNAIRES[name.lower()]).read_text()
    else:
        text = Path(source).read_text()
    try:
        return questionnaire_from_dict(json.loads(text))
    except (KeyError, TypeError) as exc:
        raise QuestionnaireError(f"malformed questionnaire file {source}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Respondents x items integer codes; ``MISSING`` marks non-responses."""

    respondents: tuple[str, ...]
    item_ids: tuple[str, ...]
    scores: np.ndarray
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.int64)
        if scores.ndim != 2 or scores.shape != (len(self.respondents), len(self.item_ids)):
            raise ValueError(f"scores shape {scores.shape} does not match "
                             f"{len(self.respondents)} respondents x {len(self.item_ids)} items")
        scores.setflags(write=False)
        object.__setattr__(self, "respondents", tuple(self.respondents))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "scores", scores)

    @property
    def shape(self):
        return self.scores.shape

    def check(self, q: Questionnaire) -> None:
        """Validate item ordering and code range against ``q``."""
        order = {iid: k for k, iid in enumerate(q.item_ids)}
        pos = []
        for iid in self.item_ids:
            if iid not in order:
                raise QuestionnaireError(f"unknown item {iid!r} for {q.name}")
            pos.append(order[iid])
        if pos != sorted(pos):
            raise QuestionnaireError("item columns are not in questionnaire order")
        s = self.scores
        bad = (s != MISSING) & ((s < q.scale.min_code) | (s > q.scale.max_code))
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ScaleError(f"code {s[r, c]} out of range for item {self.item_ids[c]}")

    def select_items(self, item_ids: Sequence[str]) -> "ResponseMatrix":
        cols = [self.item_ids.index(i) for i in item_ids]
        return ResponseMatrix(self.respondents, tuple(item_ids), self.scores[:, cols],
                              self.provenance, dict(self.meta))

    def select_rows(self, mask) -> "ResponseMatrix":
        mask = np.asarray(mask, dtype=bool)
        resp = tuple(r for r, keep in zip(self.respondents, mask) if keep)
        return ResponseMatrix(resp, self.item_ids, self.scores[mask], self.provenance, dict(self.meta))

    def complete_rows(self) -> np.ndarray:
        return (self.scores != MISSING).all(axis=1)

    def __eq__(self, other):
        if not isinstance(other, ResponseMatrix):
            return NotImplemented
        return (self.respondents == other.respondents and self.item_ids == other.item_ids
                and np.array_equal(self.scores, other.scores))


@dataclass(frozen=True, eq=False)
class ScoredMatrix:
    """Key-corrected scores on a common scale (missing already imputed)."""

    respondents: tuple[str, ...]
    item_ids: tuple[str, ...]
    values: np.ndarray

    def columns(self, item_ids: Iterable[str]) -> np.ndarray:
        pos = {iid: k for k, iid in enumerate(self.item_ids)}
        return self.values[:, [pos[i] for i in item_ids]]


def flip_score(raw: int, key: Key | str, scale: LikertScale = FIVE_POINT) -> int:
    """Map a raw code to the common scale: identity for true key, mirrored for false key."""
    if raw not in scale:
        raise ScaleError(f"code {raw!r} outside {scale.min_code}..{scale.max_code}")
    if Key(key) is Key.FALSE:
        return scale.max_code + scale.min_code - raw
    return int(raw)


def _false_key_mask(item_ids, q):
    return np.array([q.item(i).is_false_key for i in item_ids], dtype=np.int8)


def score_matrix(responses: ResponseMatrix, q: Questionnaire) -> ScoredMatrix:
    """Impute the neutral code for missing entries, then key-correct every column."""
    fk = _false_key_mask(responses.item_ids, q)
    sc = q.scale
    values = _kernels.key_correct(responses.scores, fk, sc.min_code, sc.max_code, sc.neutral_code)
    values.setflags(write=False)
    return ScoredMatrix(responses.respondents, responses.item_ids, values)


def impute_neutral(responses: ResponseMatrix, q: Questionnaire) -> ScoredMatrix:
    """Raw codes with missing entries set to the neutral code; keys are not applied."""
    values = np.where(responses.scores == MISSING, q.scale.neutral_code, responses.scores).astype(float)
    values.setflags(write=False)
    return ScoredMatrix(responses.respondents, responses.item_ids, values)


def facet_sum_score(scored: ScoredMatrix, q: Questionnaire, facet: str) -> np.ndarray:
    ids = [it.id for it in q.facet_items(facet) if it.id in scored.item_ids]
    return scored.columns(ids).sum(axis=1)


def standardize(matrix, item_ids: Sequence[str] | None = None) -> np.ndarray:
    """Column z-scores with the n-1 standard deviation."""
    X = np.asarray(matrix, dtype=float)
    sd = X.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        names = [item_ids[k] for k in bad] if item_ids is not None else [int(k) for k in bad]
        raise StandardizationError(names)
    return (X - X.mean(axis=0)) / sd


def zero_variance_items(responses: ResponseMatrix) -> list[str]:
    dropped = []
    for k, iid in enumerate(responses.item_ids):
        col = responses.scores[:, k]
        col = col[col != MISSING]
        if col.size == 0 or np.all(col == col[0]):
            dropped.append(iid)
    return dropped


def drop_zero_variance_items(responses: ResponseMatrix, q: Questionnaire | None = None,
                             min_items: int = 3):
    """Remove columns whose observed entries are all equal.

    Returns the reduced matrix and the dropped item ids. A
    :class:`StructureWarning` is issued when a facet of ``q`` keeps fewer
    than ``min_items`` items (or, without ``q``, when nothing is left).
    """
    dropped = zero_variance_items(responses)
    if not dropped:
        return responses, []
    keep = [i for i in responses.item_ids if i not in set(dropped)]
    out = responses.select_items(keep)
    if q is not None:
        thin = [f for f in q.facet_ids
                if sum(1 for it in q.facet_items(f) if it.id in keep) < min_items
                and any(it.id in responses.item_ids for it in q.facet_items(f))]
        if thin:
            warnings.warn(f"facets with fewer than {min_items} items after dropping: {thin}",
                          StructureWarning, stacklevel=2)
    elif not keep:
        warnings.warn("all items have zero variance", StructureWarning, stacklevel=2)
    return out, dropped


def _read_lines(path):
    """Yield (line number, raw line) pairs and collect ``# key=value`` headers."""
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if line.strip():
                rows.append((lineno, line))
    return meta, rows


def load_response_csv(path, q: Questionnaire, delimiter: str | None = None,
                      id_column: str | None = "respondent", ignore_unknown: bool = False,
                      row_filter=None) -> ResponseMatrix:
    """Parse a response CSV whose header names item ids.

    Cells outside the scale range (including ``0`` and blanks) become ``MISSING``.
    ``row_filter`` receives each parsed integer row and may reject it.
    """
    meta, lines = _read_lines(path)
    if not lines:
        raise ParseError("empty file")
    if delimiter is None:
        delimiter = "\t" if "\t" in lines[0][1] else ","
    reader = csv.reader([ln for _, ln in lines], delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    known = set(q.item_ids)
    cols, ids = [], []
    id_col = None
    for k, name in enumerate(header):
        if id_column is not None and name == id_column:
            id_col = k
        elif name in known:
            cols.append(k)
            ids.append(name)
        elif not ignore_unknown:
            raise ParseError(f"unknown item {name!r} in header", lines[0][0])
    order = {iid: k for k, iid in enumerate(q.item_ids)}
    perm = sorted(range(len(ids)), key=lambda j: order[ids[j]])
    cols = [cols[j] for j in perm]
    ids = [ids[j] for j in perm]
    lo, hi = q.scale.min_code, q.scale.max_code
    respondents, rows = [], []
    for (lineno, _), rec in zip(lines[1:], reader):
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(rec)}", lineno)
        row = []
        for k in cols:
            cell = rec[k].strip()
            try:
                v = int(float(cell)) if cell else MISSING
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r} in column {header[k]}", lineno) from None
            row.append(v if lo <= v <= hi else MISSING)
        if row_filter is not None and not row_filter(row):
            continue
        rows.append(row)
        respondents.append(rec[id_col] if id_col is not None else str(len(respondents)))
    scores = np.array(rows, dtype=np.int64).reshape(len(rows), len(ids))
    return ResponseMatrix(tuple(respondents), tuple(ids), scores, meta.get("provenance", str(path)), meta)


def write_response_csv(path, responses: ResponseMatrix, header: dict | None = None) -> None:
    """Write codes with ``MISSING`` as ``0``; ``header`` becomes ``# key=value`` lines."""
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["respondent", *responses.item_ids])
        for rid, row in zip(responses.respondents, responses.scores):
            w.writerow([rid, *[0 if v == MISSING else int(v) for v in row]])
