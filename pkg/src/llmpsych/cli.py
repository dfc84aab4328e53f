"""Command-line entry point: ``llmpsych {administer,bias,pca,cfa,reliability,report}``.

Exit codes: 0 success (including poor fit and NA results), 2 usage or
input errors, 3 partial administration failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bias import (ReferenceDistribution, agree_bias, bias_histogram, histogram_svg, percentile_test,
                   write_histogram_csv)
from .cfa import (MODEL_NAMES, FitReport, ModelError, ModelSyntaxError, NumericalError,
                  acceptability_flags, builtin_model_text, fit_scores, parse_model)
from .core import (MISSING, QuestionnaireError, ResponseMatrix, StructureWarning, drop_zero_variance_items,
                   facet_sum_score, load_questionnaire, load_response_csv, score_matrix, write_response_csv)
from .efa import loadings_svg, run_pca, write_loadings_csv
from .harness import (AgreeBot, ConfigError, Journal, OpenAICompatibleTransport, PromptRegime, RandomBot,
                      SimulatorBot, administer, load_personas)
from .reliability import OmegaUnavailable, cronbach_alpha, gated_report, mean_or_none, omega_h
from .simulate import facet_loadings

log = logging.getLogger("llmpsych")

FOOTNOTE = ("Note: reliability values are not interpretable where the underlying CFA fit is "
            "unacceptable (CFI/TLI < 0.95 or RMSEA > 0.06) or could not be computed (NA).")
TABLE_MODELS = ("single_component", "three_subcomponents", "full_five_factor")


class UsageError(Exception):
    pass


# -- shared output helpers ---------------------------------------------------

def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _config_hash(args, inputs=()) -> str:
    # input files enter by content digest, not by path
    skip = ("out", "func", "jobs", "verbose", "matrix", "reference", "fits", "directory")
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    if getattr(args, "model", None) and args.command == "cfa":
        cfg["model"] = [m if m in MODEL_NAMES else Path(m).name for m in args.model]
    cfg["inputs"] = [_file_digest(p) for p in inputs if p and Path(p).is_file()]
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _header(args, inputs=(), **extra) -> dict:
    h = {"tool": f"llmpsych {__version__}", "config_hash": _config_hash(args, inputs), "seed": args.seed}
    h.update({k: v for k, v in extra.items() if v is not None})
    return h


def _write_json(path, obj, header):
    with open(path, "w") as fh:
        json.dump({"_header": header, **obj}, fh, indent=1, sort_keys=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def _write_csv(path, header, columns, rows):
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _write_svg(path, svg, header):
    comment = " ".join(f"{k}={v}" for k, v in header.items())
    Path(path).write_text(f"<!-- {comment} -->\n{svg}\n")


def _fmt(v, digits=4):
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "NA"
    return f"{v:.{digits}f}"


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    q = load_questionnaire(args.questionnaire)
    rm = load_response_csv(args.matrix, q, ignore_unknown=True)
    if not rm.item_ids:
        raise UsageError(f"{args.matrix}: no {q.name} items in header")
    label = getattr(args, "label", None) or rm.meta.get("label") or Path(args.matrix).stem
    return q, rm, label


def _matrix_meta(rm: ResponseMatrix, q, label):
    return {"questionnaire": q.name, "label": label, "regime": rm.meta.get("regime", "unknown"),
            "persona_mode": rm.meta.get("persona_mode", "unknown"),
            "seed_answer": rm.meta.get("seed_answer")}


# -- administer --------------------------------------------------------------

def _transport(args, q):
    if args.transport == "agree-bot":
        return AgreeBot()
    if args.transport == "random-bot":
        return RandomBot(q.scale, seed=args.seed)
    if args.transport == "simulator":
        return SimulatorBot(q, facet_loadings(q, args.loading), args.noise_sd, seed=args.seed)
    if args.transport == "openai-compatible":
        if not args.endpoint or not args.model:
            raise ConfigError("--endpoint and --model are required for openai-compatible")
        return OpenAICompatibleTransport(args.endpoint, args.model, args.api_key_env,
                                         max_in_flight=args.max_in_flight, logprobs=args.logprobs)
    raise ConfigError(f"unknown transport {args.transport}")


def cmd_administer(args) -> int:
    q = load_questionnaire(args.questionnaire)
    seed_answer = None
    if args.seed_answer is not None:
        seed_answer = "cycle" if args.seed_answer == "cycle" else int(args.seed_answer)
    with_persona = args.personas != "none"
    regime = PromptRegime(args.regime, "with-persona" if with_persona else "empty", seed_answer)
    regime.validate(q.scale)
    personas = None
    if with_persona:
        personas = load_personas(None if args.personas == "default" else args.personas)
    transport = _transport(args, q)
    out = _outdir(args)
    journal = Journal(out / "journal.jsonl")
    rm = administer(q, regime, personas, transport, args.runs, temperature=args.temperature,
                    journal=journal, jobs=args.jobs, seed=args.seed)
    label = args.label or transport.name
    header = _header(args, [args.questionnaire], questionnaire=q.name, label=label,
                     regime=regime.context.value, persona_mode=regime.persona_mode.value,
                     seed_answer=seed_answer, transport=transport.name, provenance=rm.provenance)
    write_response_csv(out / "responses.csv", rm, header)
    failures = rm.meta["failures"]
    missing = int((rm.scores == MISSING).sum())
    print(f"wrote {out / 'responses.csv'}: {len(rm.respondents)} respondents, {missing} missing entries")
    if failures:
        print(f"{failures} items failed after retries; rerun to resume from the journal", file=sys.stderr)
        return 3
    return 0


# -- bias --------------------------------------------------------------------

def cmd_bias(args) -> int:
    q, rm, label = _load(args)
    if args.drop_incomplete:
        rm = rm.select_rows(rm.complete_rows())
    res = agree_bias(rm, q)
    out = _outdir(args)
    header = _header(args, [args.matrix, args.reference], **_matrix_meta(rm, q, label))
    _write_csv(out / "bias_respondents.csv", header, ["respondent", "agree_bias"],
               [(r, _fmt(v, 6)) for r, v in zip(res.respondents, res.values)])
    summary = {"label": label, "questionnaire": q.name, "n": len(res.values),
               "mean_bias": res.mean_bias, "min_bias": res.range[0], "max_bias": res.range[1]}
    hist_source = res
    if args.reference:
        ref_rm = load_response_csv(args.reference, q, ignore_unknown=True)
        if args.drop_incomplete:
            ref_rm = ref_rm.select_rows(ref_rm.complete_rows())
        ref_res = agree_bias(ref_rm, q)
        pct, p = percentile_test(res.mean_bias, ReferenceDistribution(ref_res.values))
        summary.update(reference=Path(args.reference).name, reference_n=len(ref_res.values),
                       reference_mean=ref_res.mean_bias, percentile=pct, p_value=p)
        hist_source = ref_res
    hist = bias_histogram(hist_source, args.bins, (-4.0, 4.0))
    write_histogram_csv(out / "bias_histogram.csv", hist, header)
    _write_svg(out / "bias_histogram.svg", histogram_svg(hist, {label: res.mean_bias}), header)
    _write_json(out / "bias_summary.json", summary, header)
    line = f"{label}: mean agree bias {res.mean_bias:.4f} (n={len(res.values)})"
    if args.reference:
        line += f", percentile {summary['percentile']:.4f}, p={summary['p_value']:.4g}"
    print(line)
    return 0


# -- pca ---------------------------------------------------------------------

def cmd_pca(args) -> int:
    q, rm, label = _load(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StructureWarning)
        reduced, dropped = drop_zero_variance_items(rm, q)
    if len(reduced.item_ids) < args.ncomp:
        raise UsageError(f"only {len(reduced.item_ids)} items with nonzero variance "
                         f"(dropped {len(dropped)}); need at least {args.ncomp}")
    lm, report = run_pca(reduced, q, args.ncomp)
    out = _outdir(args)
    header = _header(args, [args.matrix], **_matrix_meta(rm, q, label))
    write_loadings_csv(out / "loadings.csv", lm, q, header)
    _write_svg(out / "loadings.svg", loadings_svg(lm, q), header)
    _write_csv(out / "simple_structure.csv", header,
               ["item", "facet", "key", "dominant", "dominant_loading", "own_loading", "hit", "key_ok"],
               [(d.item, d.facet, "-" if d.false_key else "+", d.dominant, _fmt(d.dominant_loading),
                 _fmt(d.own_loading), int(d.hit), int(d.key_ok)) for d in report.items])
    summary = {**_matrix_meta(rm, q, label), "dropped_items": dropped, "ncomp": args.ncomp,
               "varimax_converged": lm.converged,
               "explained_variance_ratio": [round(float(v), 10) for v in lm.explained_variance_ratio],
               **{k: round(v, 10) for k, v in report.summary().items()}}
    _write_json(out / "pca_summary.json", summary, header)
    print(f"{label}: hit rate {report.hit_rate:.3f}, key separation {report.key_separation_rate:.3f}"
          + (f", dropped {','.join(dropped)}" if dropped else ""))
    return 0


# -- cfa ---------------------------------------------------------------------

def _na_report(model, facet, n, message, dropped=()):
    return FitReport(model=model, converged=False, valid=False, n=n, df=0, message=message,
                     facet=facet, dropped_items=tuple(dropped))


def _fit_one(q, scored, model_name, facet, text, dropped, options):
    n = scored.values.shape[0]
    try:
        model = parse_model(text, q, name=model_name)
        rep = fit_scores(model, scored, **options)
    except (NumericalError, ModelError, ModelSyntaxError, QuestionnaireError, np.linalg.LinAlgError) as exc:
        return _na_report(model_name, facet, n, str(exc), dropped)
    rep.facet = facet
    rep.dropped_items = tuple(dropped)
    return rep


def _model_jobs(q, spec, dropped):
    """(model name, facet, text) triples for a builtin name or a spec file."""
    if spec in MODEL_NAMES:
        if spec == "full_five_factor":
            try:
                return [(spec, None, builtin_model_text(q, spec, exclude=dropped))]
            except ModelError as exc:
                return [(spec, None, exc)]
        if spec != "single_component" and not q.has_sub_facets():
            raise UsageError(f"{spec} needs sub-facets, which {q.name} does not declare")
        jobs = []
        for f in q.facet_ids:
            try:
                jobs.append((spec, f, builtin_model_text(q, spec, f, exclude=dropped)))
            except ModelError as exc:
                jobs.append((spec, f, exc))
        return jobs
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"unknown model {spec!r}: not a builtin ({', '.join(MODEL_NAMES)}) nor a file")
    return [(path.stem, None, path.read_text())]


def _run_fits(q, rm, models, args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StructureWarning)
        reduced, dropped = drop_zero_variance_items(rm, q)
    scored = score_matrix(reduced, q)
    options = {"correlation": args.correlation, "ridge": args.ridge}
    jobs = []
    for spec in models:
        jobs += _model_jobs(q, spec, dropped)
    for name, facet, text in jobs:
        if isinstance(text, str) and name not in MODEL_NAMES:
            parse_model(text, q, name=name)  # syntax errors are usage errors

    def run(job):
        name, facet, text = job
        if isinstance(text, Exception):
            return _na_report(name, facet, scored.values.shape[0], str(text), dropped)
        return _fit_one(q, scored, name, facet, text, dropped, options)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        return list(pool.map(run, jobs)), dropped


def _model_summary(reports):
    by_model = {}
    for r in reports:
        by_model.setdefault(r.model, []).append(r)
    out = {}
    for name, reps in by_model.items():
        means = {k: mean_or_none([getattr(r, k) for r in reps]) for k in ("cfi", "tli", "rmsea")}
        flags = acceptability_flags(**means)
        out[name] = {**means, **{f"{k}_pass": fl.passed for k, fl in flags.items()},
                     "n_fits": len(reps), "n_na": sum(not r.usable for r in reps)}
    return out


def cmd_cfa(args) -> int:
    q, rm, label = _load(args)
    models = args.model or [m for m in MODEL_NAMES if m == "single_component" or m == "full_five_factor"
                            or q.has_sub_facets()]
    reports, dropped = _run_fits(q, rm, models, args)
    out = _outdir(args)
    header = _header(args, [args.matrix] + [m for m in models if m not in MODEL_NAMES],
                     **_matrix_meta(rm, q, label))
    Path(out / "cfa_reports.txt").write_text(
        "".join(f"# {k}={v}\n" for k, v in header.items())
        + "\n\n".join(r.record() for r in reports) + "\n")
    _write_json(out / "cfa_fits.json", {"fits": [json.loads(r.to_json()) for r in reports]}, header)
    summary = _model_summary(reports)
    _write_csv(out / "cfa_summary.csv", header,
               ["model", "facet", "converged", "valid", "chi_square", "df", "cfi", "tli", "rmsea",
                "cfi_pass", "tli_pass", "rmsea_pass"],
               [(r.model, r.facet or "", int(r.converged), int(r.valid), _fmt(r.chi_square), r.df,
                 _fmt(r.cfi), _fmt(r.tli), _fmt(r.rmsea),
                 *[int(fl.passed) for fl in acceptability_flags(r).values()]) for r in reports]
               + [(name, "mean", "", "", "", "", _fmt(s["cfi"]), _fmt(s["tli"]), _fmt(s["rmsea"]),
                   int(s["cfi_pass"]), int(s["tli_pass"]), int(s["rmsea_pass"])) for name, s in summary.items()])
    _write_json(out / "cfa_summary.json", {**_matrix_meta(rm, q, label), "dropped_items": dropped,
                                           "models": summary}, header)
    for name, s in summary.items():
        print(f"{label} {name}: CFI {_fmt(s['cfi'], 3)} TLI {_fmt(s['tli'], 3)} RMSEA {_fmt(s['rmsea'], 3)}"
              f" ({s['n_na']}/{s['n_fits']} NA)")
    return 0


# -- reliability -------------------------------------------------------------

def cmd_reliability(args) -> int:
    q, rm, label = _load(args)
    if args.fits:
        data = json.loads(Path(args.fits).read_text())
        reports = [FitReport.from_dict(d) for d in data["fits"]]
    else:
        models = ["single_component"] + (["three_plus_acquiescence"] if q.has_sub_facets() else [])
        reports, _ = _run_fits(q, rm, models, args)
    scored = score_matrix(rm, q)
    rows = []
    for f in q.facet_ids:
        ids = [it.id for it in q.facet_items(f) if it.id in scored.item_ids]
        alpha = cronbach_alpha(scored.columns(ids)) if len(ids) >= 2 else None
        fits = [r for r in reports if r.facet == f and r.model in ("single_component", "three_plus_acquiescence")]
        hier = [r for r in fits if r.model == "three_plus_acquiescence"]
        omega, why = None, "no hierarchical model fitted"
        if hier:
            try:
                omega, why = omega_h(hier[0]), ""
            except OmegaUnavailable as exc:
                why = str(exc)
        rows.append(gated_report(f, alpha, omega, fits, why))
    out = _outdir(args)
    header = _header(args, [args.matrix, args.fits], **_matrix_meta(rm, q, label))
    _write_csv(out / "reliability.csv", header,
               ["facet", "alpha", "omega_h", "gate", "reason"],
               [(r.facet, _fmt(r.alpha), _fmt(r.omega_h), "interpretable" if r.gating.interpretable
                 else "not_interpretable", r.gating.reason) for r in rows])
    summary = {**_matrix_meta(rm, q, label),
               "alpha_mean": mean_or_none([r.alpha for r in rows]),
               "omega_h_mean": mean_or_none([r.omega_h for r in rows]),
               "interpretable": all(r.gating.interpretable for r in rows),
               "facets": [r.to_dict() for r in rows]}
    _write_json(out / "reliability_summary.json", summary, header)
    print(f"{label}: mean alpha {_fmt(summary['alpha_mean'], 3)}, mean omega_h {_fmt(summary['omega_h_mean'], 3)}"
          f", {'interpretable' if summary['interpretable'] else 'NOT interpretable'}")
    return 0


# -- report ------------------------------------------------------------------

def _row_key(meta):
    label = meta.get("label", "?")
    if meta.get("seed_answer") not in (None, "None"):
        return f"{label} (seeded)"
    if meta.get("persona_mode") == "empty":
        return f"{label} (no persona)"
    return label


def _collect(directory):
    rows = {}
    questionnaires = set()
    for path in sorted(Path(directory).rglob("*.json")):
        if path.name not in ("cfa_summary.json", "reliability_summary.json"):
            continue
        data = json.loads(path.read_text())
        questionnaires.add(data.get("questionnaire"))
        cell = rows.setdefault(_row_key(data), {}).setdefault(data.get("regime", "unknown"), {})
        if path.name == "cfa_summary.json":
            cell["models"] = data["models"]
        else:
            cell["alpha"] = data.get("alpha_mean")
            cell["omega_h"] = data.get("omega_h_mean")
            cell["interpretable"] = data.get("interpretable")
    return rows, questionnaires


REGIME_ORDER = ("in-context", "no-context")


def _ordered_regimes(cells):
    return [r for r in REGIME_ORDER if r in cells] + sorted(r for r in cells if r not in REGIME_ORDER)


def _metric(cell, model, key):
    return ((cell.get("models") or {}).get(model) or {}).get(key)


def cmd_report(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        raise UsageError(f"{directory} is not a directory")
    rows, questionnaires = _collect(directory)
    if not rows:
        raise UsageError(f"no cfa/reliability outputs found under {directory}")
    if len(questionnaires) > 1:
        raise UsageError(f"mixed questionnaires in {directory}: {sorted(map(str, questionnaires))}")
    cols = ["alpha", "omega_h"] + [f"{m}:{k}" for m in TABLE_MODELS for k in ("cfi", "tli", "rmsea")]
    csv_rows, text_rows, any_gate_fail = [], [], False
    for key in sorted(rows):
        cells = rows[key]
        regimes = _ordered_regimes(cells)
        values = {}
        for c in cols:
            vals = []
            for rg in regimes:
                cell = cells[rg]
                if c in ("alpha", "omega_h"):
                    v = cell.get(c)
                    ok = v is not None and v >= 0.7
                else:
                    m, k = c.split(":")
                    v = _metric(cell, m, k)
                    ok = bool(_metric(cell, m, f"{k}_pass"))
                vals.append((v, ok))
                csv_rows.append((key, rg, c, _fmt(v), "pass" if ok else "fail"))
            values[c] = vals
        for rg in regimes:
            if cells[rg].get("interpretable") is False:
                any_gate_fail = True
        text_rows.append((key, "/".join(regimes), values))
    header = {"tool": f"llmpsych {__version__}",
              "config_hash": hashlib.sha256(json.dumps(rows, sort_keys=True, default=str).encode())
              .hexdigest()[:16], "seed": args.seed, "questionnaire": next(iter(questionnaires))}
    out = Path(args.out) if args.out else directory
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "report.csv", header, ["row", "regime", "metric", "value", "acceptable"], csv_rows)
    lines = [f"<!-- {' '.join(f'{k}={v}' for k, v in header.items())} -->",
             "| Model | Regimes | " + " | ".join(cols) + " |",
             "|" + "---|" * (len(cols) + 2)]
    for key, reg, values in text_rows:
        cells = [" / ".join(f"{_fmt(v, 2)}{'' if ok else ' [fail]'}" for v, ok in values[c]) for c in cols]
        lines.append(f"| {key} | {reg} | " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("Values left of the slash come from the first listed regime. [fail] marks values "
                 "outside the acceptable range (alpha/omega_h >= 0.70, CFI/TLI >= 0.95, RMSEA <= 0.06).")
    if any_gate_fail:
        lines.append("")
        lines.append(FOOTNOTE)
    text = "\n".join(lines) + "\n"
    (out / "report.md").write_text(text)
    print(text)
    return 0


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # no prefix matching: "--api-key" must never resolve to "--api-key-env"
    p = argparse.ArgumentParser(prog="llmpsych", description="Administer Likert questionnaires and validate the measurement model.",
                                epilog="exit codes: 0 success (poor fit and NA included), 2 usage or input error, "
                                       "3 partial administration failure", allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"llmpsych {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, matrix=True):
        if matrix:
            sp.add_argument("matrix", help="response CSV (header = item ids)")
        sp.add_argument("--questionnaire", default="bfi2", help="bfi2, ipip-bffm or a JSON definition")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--label", default=None, help="row label (defaults to the matrix header)")

    a = sub.add_parser("administer", help="collect responses from a transport", allow_abbrev=False)
    common(a, matrix=False)
    a.add_argument("--regime", choices=["no-context", "in-context"], default="no-context")
    a.add_argument("--personas", default="default", help="persona JSON file, 'default' or 'none'")
    a.add_argument("--seed-answer", default=None, help="code for item 1 (in-context, no personas) or 'cycle'")
    a.add_argument("--transport", choices=["openai-compatible", "agree-bot", "random-bot", "simulator"],
                   default="simulator")
    a.add_argument("--runs", type=int, default=100)
    a.add_argument("--temperature", type=float, default=0.0)
    a.add_argument("--endpoint", default=None)
    a.add_argument("--model", default=None)
    a.add_argument("--api-key-env", default="OPENAI_API_KEY", help="name of the variable holding the key")
    a.add_argument("--max-in-flight", type=int, default=4)
    a.add_argument("--logprobs", action="store_true", help="request token probabilities")
    a.add_argument("--loading", type=float, default=0.7, help="simulator loading magnitude")
    a.add_argument("--noise-sd", type=float, default=0.5, help="simulator noise sd")
    a.set_defaults(func=cmd_administer)

    b = sub.add_parser("bias", help="agree bias and percentile test", allow_abbrev=False)
    common(b)
    b.add_argument("--reference", default=None, help="human response CSV for the reference distribution")
    b.add_argument("--bins", type=int, default=40)
    b.add_argument("--drop-incomplete", action="store_true", help="drop rows with missing answers")
    b.set_defaults(func=cmd_bias)

    c = sub.add_parser("pca", help="PCA with varimax and simple-structure diagnostics", allow_abbrev=False)
    common(c)
    c.add_argument("--ncomp", type=int, default=5)
    c.set_defaults(func=cmd_pca)

    for name, func, helptext in (("cfa", cmd_cfa, "confirmatory factor analysis"),
                                 ("reliability", cmd_reliability, "alpha and omega_h with fit gate")):
        d = sub.add_parser(name, help=helptext, allow_abbrev=False)
        common(d)
        if name == "cfa":
            d.add_argument("--model", action="append", default=None,
                           help=f"builtin ({', '.join(MODEL_NAMES)}) or spec file; repeatable")
        else:
            d.add_argument("--fits", default=None, help="cfa_fits.json to reuse instead of refitting")
        d.add_argument("--correlation", action="store_true", help="fit the correlation matrix")
        d.add_argument("--ridge", action="store_true", help="add 1e-6 I to a singular covariance")
        d.set_defaults(func=func)

    r = sub.add_parser("report", help="consolidate stage outputs into one table", allow_abbrev=False)
    r.add_argument("directory")
    r.add_argument("--out", default=None)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, QuestionnaireError, ModelSyntaxError, FileNotFoundError) as exc:
        print(f"llmpsych {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"llmpsych {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
