"""Validation-gated refinement of transition programs.

Each erroneous training transition asks a proposal provider for ``k``
single-function edits. An edit is only eligible when it improves the
program on a validation set (score > threshold); among eligible edits the one
scoring best on the offending transition is applied.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

from .doc import Miss, deep_diff, doc_equal, is_number, normalize, resolve
from .patchscript import PatchScriptError
from .program import (
    EvaluationFault,
    FunctionDef,
    Prediction,
    PredictionError,
    ProgramError,
    TransitionProgram,
    check_record,
    classify_error,
    error_count,
    try_evaluate,
)
from .schema import TransitionRecord

log = logging.getLogger(__name__)

REFINE_OPS = ("add", "remove", "replace")


class RefinementError(ValueError):
    """A candidate cannot be parsed or applied, so it cannot be scored."""


@dataclass(frozen=True)
class Refinement:
    op: str
    target_id: str | None = None
    new_function: FunctionDef | None = None

    def __post_init__(self):
        if self.op not in REFINE_OPS:
            raise RefinementError(f"unknown refinement op {self.op!r}")
        if self.op in ("remove", "replace") and not self.target_id:
            raise RefinementError(f"{self.op} needs a target function id")
        if self.op in ("add", "replace") and self.new_function is None:
            raise RefinementError(f"{self.op} needs a new function")

    def function_kind(self, program: TransitionProgram) -> str:
        if self.new_function is not None:
            return self.new_function.kind
        try:
            return program[self.target_id].kind
        except KeyError:
            raise RefinementError(f"no function {self.target_id!r} to remove") from None

    def apply(self, program: TransitionProgram) -> TransitionProgram:
        try:
            if self.op == "remove":
                return program.with_removed(self.target_id)
            if self.op == "replace":
                return program.with_replaced(self.target_id, self.new_function)
            fn = self.new_function
            if fn.id in program:
                fn = FunctionDef(_fresh_id(program, fn.id), fn.kind, fn.body, fn.action_name, fn.description, fn.compiled)
            return program.with_added(fn)
        except ProgramError as e:
            raise RefinementError(str(e)) from None

    @property
    def touched_id(self) -> str:
        return self.target_id if self.op != "add" else self.new_function.id

    @classmethod
    def from_json(cls, obj: dict) -> "Refinement":
        """Build from ``{op, target_id?, function?}``; bad bodies raise :class:`RefinementError`."""
        if not isinstance(obj, dict):
            raise RefinementError("refinement must be an object")
        fn = None
        if obj.get("function") is not None:
            try:
                fn = FunctionDef.from_json(obj["function"])
            except (PatchScriptError, ProgramError) as e:
                raise RefinementError(f"candidate function does not compile: {e}") from None
        return cls(obj.get("op"), obj.get("target_id"), fn)

    def to_json(self) -> dict:
        out: dict[str, Any] = {"op": self.op}
        if self.target_id is not None:
            out["target_id"] = self.target_id
        if self.new_function is not None:
            out["function"] = self.new_function.to_json()
        return out


def _fresh_id(program: TransitionProgram, base: str) -> str:
    n = 2
    while f"{base}_{n}" in program:
        n += 1
    return f"{base}_{n}"


@dataclass(frozen=True)
class RefineConfig:
    k_candidates: int = 3
    validation_set_size: int = 300
    train_size: int = 300
    train_mix: float = 1.0  # valid : invalid
    vs_threshold: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.k_candidates < 1:
            raise ValueError("k_candidates must be at least 1")
        if self.train_mix <= 0:
            raise ValueError("train_mix must be positive")


class ProposalProvider(Protocol):
    def propose_refinements(self, context: dict, k: int) -> list[Refinement]: ...


# scoring


def pers(true_valid: bool, old_pred_valid: bool | None, new_pred_valid: bool | None) -> int:
    """Precondition error reduction: +1 if the edit fixes validity, -1 if it breaks it."""
    return int(new_pred_valid == true_valid) - int(old_pred_valid == true_valid)


def odrs(prev: Any, truth: Any, pred: Any) -> float:
    """Observation-difference reduction score in ``[-1, 1]``.

    Only the entries of ``deep_diff(prev, truth)`` are scored. A changed
    numeric value counts +1 when ``pred`` is no further from the truth than
    ``prev`` was, a changed non-numeric value +1 on an exact match, and every
    other diff entry -1.
    """
    entries = deep_diff(prev, truth)
    if not entries:
        return 0.0
    score = 0
    for d in entries:
        if d.kind != "values_changed":
            score -= 1
            continue
        got = resolve(pred, d.path)
        if isinstance(got, Miss):
            score -= 1
        elif is_number(d.new_value) and is_number(d.old_value):
            if is_number(got) and abs(d.new_value - got) <= abs(d.new_value - d.old_value):
                score += 1
            else:
                score -= 1
        else:
            score += 1 if doc_equal(d.new_value, got) else -1
    return score / len(entries)


Outcome = tuple[Prediction | None, EvaluationFault | None]


def predict_all(program: TransitionProgram, records: Sequence[TransitionRecord]) -> list[Outcome]:
    return [try_evaluate(program, r.prev_det, r.prev_sto, r.action) for r in records]


def _transition_score(kind: str, rec: TransitionRecord, old: Outcome, new: Outcome) -> float:
    (old_pred, old_fault), (new_pred, new_fault) = old, new
    if new_fault is not None:
        return -1.0
    if kind == "precondition":
        return float(pers(rec.valid, None if old_fault else old_pred.valid, new_pred.valid))
    old_score = -1.0 if old_fault else odrs(rec.prev_det, rec.next_det, old_pred.det)
    return odrs(rec.prev_det, rec.next_det, new_pred.det) - old_score


def refinement_score(
    candidate: Refinement,
    program: TransitionProgram,
    transitions: Sequence[TransitionRecord],
    old_outcomes: Sequence[Outcome] | None = None,
) -> float:
    """Mean per-transition score of ``candidate`` against ``program``.

    Precondition edits are scored with :func:`pers`; action and dynamic edits
    with the change in :func:`odrs`. A candidate fault scores -1.
    """
    if not transitions:
        return 0.0
    kind = candidate.function_kind(program)
    new_program = candidate.apply(program)
    if old_outcomes is None:
        old_outcomes = predict_all(program, transitions)
    total = 0.0
    for rec, old in zip(transitions, old_outcomes):
        new = try_evaluate(new_program, rec.prev_det, rec.prev_sto, rec.action)
        total += _transition_score(kind, rec, old, new)
    return total / len(transitions)


def validation_score(candidate, program, val, old_outcomes=None) -> float:
    return refinement_score(candidate, program, val, old_outcomes)


# the loop


def error_context(
    program: TransitionProgram,
    rec: TransitionRecord,
    pred: Prediction | None,
    err: PredictionError,
    environment_doc: str = "",
) -> dict:
    """What the proposal provider sees for one erroneous transition."""
    name = rec.action.get("name") if isinstance(rec.action, dict) else None
    ctx: dict[str, Any] = {
        "error_kind": err.kind,
        "detail": err.detail,
        "action": rec.action,
        "prev_det": rec.prev_det,
        "prev_sto": rec.prev_sto,
        "true_valid": rec.valid,
        "true_det": rec.next_det,
        "functions": [f.to_json() for f in program.functions_for(name)],
        "environment_doc": environment_doc,
    }
    if pred is not None:
        ctx["pred_valid"] = pred.valid
        ctx["pred_det"] = pred.det
    if err.kind == "E_od":
        ctx["diff"] = [d.to_json() for d in err.diff]
    if err.kind in ("E_pf", "E_ps") and pred is not None:
        ctx["feedback"] = pred.feedback
    if err.function_id is not None:
        ctx["faulting_function"] = err.function_id
    return ctx


@dataclass
class RefinementLog:
    entries: list[dict] = field(default_factory=list)

    def append(self, entry: dict) -> None:
        self.entries.append(entry)

    @property
    def accepted(self) -> list[dict]:
        return [e for e in self.entries if e["applied_id"] is not None]

    def dumps(self) -> str:
        return "".join(json.dumps(normalize(e), sort_keys=True) + "\n" for e in self.entries)

    def write(self, fh) -> None:
        fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "RefinementLog":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    obj = json.loads(line)
                    if "_meta" not in obj:
                        entries.append(obj)
        return cls(entries)


def refine(
    program: TransitionProgram,
    train: Sequence[TransitionRecord],
    val: Sequence[TransitionRecord],
    oracle: ProposalProvider,
    cfg: RefineConfig = RefineConfig(),
    environment_doc: str = "",
) -> tuple[TransitionProgram, RefinementLog]:
    """One pass over ``train``, applying at most one gated edit per erroneous transition."""
    val_ids = {id(r) for r in val}
    if any(id(r) in val_ids for r in train):
        raise ValueError("validation records must be disjoint from training records")
    rlog = RefinementLog()
    val_outcomes = predict_all(program, val)
    for idx, rec in enumerate(train):
        pred, err = check_record(program, rec)
        if err is None:
            continue
        entry: dict[str, Any] = {
            "transition_index": idx,
            "error_kind": err.kind,
            "candidates": [],
            "applied_id": None,
        }
        rlog.append(entry)
        try:
            proposals = list(oracle.propose_refinements(error_context(program, rec, pred, err, environment_doc), cfg.k_candidates))
        except Exception as e:  # oracle failure skips the transition
            log.warning("proposal provider failed on transition %d: %s", idx, e)
            entry["skipped"] = f"oracle failure: {e}"
            continue
        proposals = proposals[: cfg.k_candidates]
        here = [try_evaluate(program, rec.prev_det, rec.prev_sto, rec.action)]
        best, best_score = None, None
        for j, cand in enumerate(proposals):
            info: dict[str, Any] = {"index": j, "op": cand.op, "target_id": cand.target_id, "accepted": False}
            if cand.new_function is not None:
                info["function_id"] = cand.new_function.id
            entry["candidates"].append(info)
            try:
                vs = validation_score(cand, program, val, val_outcomes)
                score = refinement_score(cand, program, [rec], here)
            except RefinementError as e:
                info.update(score=None, vs=None, error=str(e))
                continue
            info.update(score=score, vs=vs)
            if vs > cfg.vs_threshold and (best_score is None or score > best_score):
                best, best_score = j, score
        if best is None:
            continue
        cand = proposals[best]
        program = cand.apply(program)
        entry["candidates"][best]["accepted"] = True
        entry["applied_id"] = cand.touched_id if cand.op != "add" else program.functions[-1].id
        entry["applied_op"] = cand.op
        val_outcomes = predict_all(program, val)
        entry["val_errors"] = sum(
            classify_error(p.det if p else None, p.valid if p else None, r.next_det, r.valid, f) is not None
            for r, (p, f) in zip(val, val_outcomes)
        )
    return program, rlog


def build_train_mix(
    records: Sequence[TransitionRecord],
    n: int,
    ratio: float = 1.0,
    seed: int = 0,
) -> list[TransitionRecord]:
    """Stratified sample of ``n`` records with ``valid:invalid`` close to ``ratio``.

    If one class is short, the other fills the remainder. The result is
    shuffled with ``seed``.
    """
    rng = random.Random(seed)
    valid = [r for r in records if r.valid]
    invalid = [r for r in records if not r.valid]
    n = min(n, len(records))
    want_valid = round(n * ratio / (1.0 + ratio))
    n_valid = min(want_valid, len(valid))
    n_invalid = min(n - n_valid, len(invalid))
    n_valid = min(n - n_invalid, len(valid))
    out = rng.sample(valid, n_valid) + rng.sample(invalid, n_invalid)
    rng.shuffle(out)
    return out


def split_train_val(
    records: Sequence[TransitionRecord],
    cfg: RefineConfig = RefineConfig(),
) -> tuple[list[TransitionRecord], list[TransitionRecord]]:
    """Draw a mixed training set, then a validation set from the remaining records."""
    train = build_train_mix(records, cfg.train_size, cfg.train_mix, cfg.seed)
    taken = {id(r) for r in train}
    rest = [r for r in records if id(r) not in taken]
    rng = random.Random(cfg.seed + 1)
    val = rng.sample(rest, min(cfg.validation_set_size, len(rest)))
    return train, val


def program_errors(program: TransitionProgram, records: Sequence[TransitionRecord]) -> int:
    return error_count(program, records)
