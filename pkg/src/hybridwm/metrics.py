"""Transition-prediction and planning metrics, with plain-text tables."""

from __future__ import annotations

import math
import time
from typing import Any, Mapping, Sequence

import numpy as np

from .cpd import CpdBundle, sample_joint_batch
from .doc import doc_equal, is_number
from .program import TransitionProgram, try_evaluate
from .schema import ObservationSchema, TransitionRecord, validate

CHECKPOINTS = (10, 20, 30, 40, 50)


def f1_score(truth: Sequence[bool], pred: Sequence[bool]) -> float:
    """F1 with "valid" as the positive class; 0 when there are no true or predicted positives."""
    tp = sum(1 for t, p in zip(truth, pred) if t and p)
    fp = sum(1 for t, p in zip(truth, pred) if not t and p)
    fn = sum(1 for t, p in zip(truth, pred) if t and not p)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def scaled_rmse(truth: Sequence[float], pred: Sequence[float | None], lo: float | None = None,
                hi: float | None = None) -> float:
    """RMSE after min-max scaling by the truth range (or ``lo``/``hi``).

    A zero range scores each record 0 if exact and 1 otherwise; a missing
    prediction counts as a full-range error.
    """
    t = np.asarray(truth, dtype=float)
    lo = float(t.min()) if lo is None else lo
    hi = float(t.max()) if hi is None else hi
    span = hi - lo
    errs = []
    for y, p in zip(t, pred):
        if p is None or not is_number(p):
            errs.append(1.0)
        elif span > 0:
            errs.append((float(p) - y) / span)
        else:
            errs.append(0.0 if float(p) == y else 1.0)
    return float(np.sqrt(np.mean(np.square(errs)))) if errs else 0.0


def _var_report(spec, truth: list, pred: list) -> dict:
    exact = [p is not None and doc_equal(p, t) for t, p in zip(truth, pred)]
    out: dict[str, Any] = {"acc": float(np.mean(exact))}
    inv = [p is None or bool(validate({spec.name: p}, _single(spec))) for p in pred]
    out["inv"] = float(np.mean(inv))
    if not spec.categorical:
        out["rmse"] = scaled_rmse(truth, pred)
    return out


def _single(spec) -> ObservationSchema:
    return ObservationSchema((spec,))


def transition_metrics(program: TransitionProgram, cpd: CpdBundle | None, test: Sequence[TransitionRecord],
                       schema: ObservationSchema, seed: int = 0, samples: int = 10) -> dict:
    """Per-variable and per-stream scores over ``test``.

    Deterministic variables are scored by exact match (``acc``), scaled RMSE
    and bound violations (``inv``). Stochastic variables are scored on one
    seeded sample (``rmse``) and on the mean of ``samples`` samples
    (``rmse_mean``). Program faults count as wrong on every deterministic
    variable and as an invalid value.
    """
    if not test:
        raise ValueError("test set is empty")
    t0 = time.perf_counter()
    preds = [try_evaluate(program, r.prev_det, r.prev_sto, r.action) for r in test]
    det_time = time.perf_counter() - t0
    report: dict[str, Any] = {"n": len(test), "deterministic": {}, "stochastic": {}}

    det_vals = {v: [] for v in schema.det_names}
    valid_pred = []
    for rec, (p, fault) in zip(test, preds):
        valid_pred.append(None if p is None else p.valid)
        for v in schema.det_names:
            det_vals[v].append(None if p is None else p.det.get(v))
    for v in schema.det_names:
        report["deterministic"][v] = _var_report(schema[v], [r.next_det[v] for r in test], det_vals[v])
    truth_valid = [r.valid for r in test]
    vp = [bool(p) if p is not None else not t for p, t in zip(valid_pred, truth_valid)]
    report["sigma_acc"] = float(np.mean([p == t for p, t in zip(vp, truth_valid)]))
    report["sigma_f1"] = f1_score(truth_valid, vp)

    sto_time = 0.0
    if cpd is not None:
        enc = cpd.encoder
        ctx = []
        for rec, (p, _) in zip(test, preds):
            det = p.det if p is not None else rec.prev_det
            valid = p.valid if p is not None else True
            ctx.append(enc.context(rec.prev_det, rec.prev_sto, rec.action, det, valid))
        ctx = np.vstack(ctx)
        rng = np.random.default_rng(seed)
        t1 = time.perf_counter()
        draws = [sample_joint_batch(cpd.models, enc, ctx, rng) for _ in range(max(1, samples))]
        sto_time = time.perf_counter() - t1
        for v in enc.node_names:
            spec = schema[v]
            truth = [r.next_sto[v] for r in test]
            single = [d[v] for d in draws[0]]
            rep = _var_report(spec, truth, single)
            if not spec.categorical:
                mean = np.mean([[d[i][v] for i in range(len(test))] for d in draws], axis=0)
                rep["rmse_mean"] = scaled_rmse(truth, mean.tolist())
            report["stochastic"][v] = rep
    for stream in ("deterministic", "stochastic"):
        rows = report[stream]
        if rows:
            agg = {"acc": float(np.mean([r["acc"] for r in rows.values()])),
                   "inv": float(np.mean([r["inv"] for r in rows.values()]))}
            num = [r for r in rows.values() if "rmse" in r]
            if num:
                agg["rmse"] = float(np.mean([r["rmse"] for r in num]))
            if num and all("rmse_mean" in r for r in num):
                agg["rmse_mean"] = float(np.mean([r["rmse_mean"] for r in num]))
            report[stream + "_mean"] = agg
    report["ms_per_record"] = 1000.0 * (det_time + sto_time / max(1, samples)) / len(test)
    return report


def planning_metrics(final_money: Sequence[float], trajectories: Sequence[Sequence[float]] | None = None,
                     checkpoints: Sequence[int] = CHECKPOINTS) -> dict:
    """Mean final budget with a 95% normal-approximation interval and survival rates.

    ``trajectories`` holds each episode's money after every day; survival at
    day ``d`` means money stayed non-negative through day ``d``.
    """
    n = len(final_money)
    if n < 1:
        raise ValueError("need at least one episode")
    x = np.asarray(final_money, dtype=float)
    mean = float(x.mean())
    if n > 1:
        sd = float(x.std(ddof=1))
        half = 1.959963984540054 * sd / math.sqrt(n)
    else:
        sd, half = 0.0, 0.0
    out = {"n": n, "mean": mean, "std": sd, "ci95": [mean - half, mean + half], "degenerate_ci": n < 2}
    if trajectories is not None:
        surv = {}
        for d in checkpoints:
            alive = [all(m >= 0 for m in traj[:d]) for traj in trajectories if len(traj) >= d]
            surv[str(d)] = float(np.mean(alive)) if alive else None
        out["survival"] = surv
    return out


def ci_disjoint(a: Mapping, b: Mapping) -> bool:
    """True when ``a``'s interval lies strictly above ``b``'s."""
    return a["ci95"][0] > b["ci95"][1]


def render_budget_table(reports: Mapping[str, Mapping], days: int = 50) -> str:
    name_w = max([5] + [len(k) for k in reports])
    lines = [f"{'Agent':<{name_w}}  Budget at the end of {days} days (mean ± 95% CI)", "-" * (name_w + 48)]
    for name, r in reports.items():
        half = (r["ci95"][1] - r["ci95"][0]) / 2
        flag = "  (single run)" if r.get("degenerate_ci") else ""
        lines.append(f"{name:<{name_w}}  {r['mean']:10.1f} ± {half:.1f}{flag}")
    return "\n".join(lines)


def render_survival_table(reports: Mapping[str, Mapping]) -> str:
    cps = next((list(r["survival"]) for r in reports.values() if "survival" in r), [])
    name_w = max([5] + [len(k) for k in reports])
    lines = [f"{'Agent':<{name_w}}  " + "  ".join(f"day {c:>3}" for c in cps)]
    for name, r in reports.items():
        cells = []
        for c in cps:
            v = r.get("survival", {}).get(c)
            cells.append(f"{'-':>7}" if v is None else f"{100 * v:6.0f}%")
        lines.append(f"{name:<{name_w}}  " + "  ".join(cells))
    return "\n".join(lines)


def render_transition_table(report: Mapping) -> str:
    lines = [f"{'variable':<16}{'stream':<15}{'acc':>8}{'rmse':>9}{'rmse10':>9}{'inv':>8}"]
    for stream in ("deterministic", "stochastic"):
        for v, r in report.get(stream, {}).items():
            rm = f"{r['rmse']:9.4f}" if "rmse" in r else f"{'-':>9}"
            rm10 = f"{r['rmse_mean']:9.4f}" if "rmse_mean" in r else f"{'-':>9}"
            lines.append(f"{v:<16}{stream:<15}{r['acc']:8.3f}{rm}{rm10}{r['inv']:8.3f}")
    lines.append(f"sigma accuracy {report['sigma_acc']:.4f}   sigma F1 {report['sigma_f1']:.4f}   "
                 f"{report['ms_per_record']:.3f} ms/record")
    return "\n".join(lines)
