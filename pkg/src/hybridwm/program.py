"""Deterministic transition programs built from PatchScript functions.

A program holds precondition, action and dynamic functions. Evaluating it on
``(prev_det, prev_sto, action)`` predicts the next deterministic observation
and whether the action was valid.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .doc import DiffEntry, PatchError, apply_patch, deep_diff, doc_equal, dumps, normalize
from .patchscript import DEFAULT_STEP_BUDGET, Compiled, PatchScriptError, RuntimeFault, compile_source

FUNCTION_KINDS = ("action", "precondition", "dynamic")
ERROR_KINDS = ("E_exec", "E_pf", "E_ps", "E_od")
BUNDLE_VERSION = 1


class ProgramError(ValueError):
    """A program or bundle violates structural rules."""


class EvaluationFault(Exception):
    """A function faulted during evaluation (an ``E_exec`` error)."""

    def __init__(self, function_id: str, message: str):
        super().__init__(f"{function_id}: {message}")
        self.function_id = function_id
        self.message = message


@dataclass(frozen=True)
class FunctionDef:
    id: str
    kind: str
    body: str
    action_name: str | None = None
    description: dict = field(default_factory=dict, compare=False)
    compiled: Compiled = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in FUNCTION_KINDS:
            raise ProgramError(f"{self.id}: unknown function kind {self.kind!r}")
        if self.kind == "dynamic":
            if self.action_name is not None:
                raise ProgramError(f"{self.id}: dynamic functions are not tied to an action")
        elif not self.action_name:
            raise ProgramError(f"{self.id}: {self.kind} functions must name an action")
        if self.compiled is None:
            object.__setattr__(self, "compiled", compile_source(self.body, self.kind))

    @classmethod
    def from_json(cls, obj: dict) -> "FunctionDef":
        try:
            return cls(
                id=obj["id"],
                kind=obj["kind"],
                body=obj["body"],
                action_name=obj.get("action_name"),
                description=dict(obj.get("description") or {}),
            )
        except KeyError as e:
            raise ProgramError(f"function record missing {e}") from None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"id": self.id, "kind": self.kind}
        if self.action_name is not None:
            out["action_name"] = self.action_name
        out["description"] = self.description
        out["body"] = self.body
        return out


def parse_program(source: str, kind: str | None = None) -> Compiled:
    """Parse and statically check a PatchScript body.

    Raises :class:`~hybridwm.patchscript.PatchScriptError` with line and column.
    """
    return compile_source(source, kind)


@dataclass(frozen=True)
class TransitionProgram:
    functions: tuple[FunctionDef, ...]

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        ids = [f.id for f in self.functions]
        if len(set(ids)) != len(ids):
            raise ProgramError("function ids must be unique")
        dynamics = [f for f in self.functions if f.kind == "dynamic"]
        if len(dynamics) != 1:
            raise ProgramError(f"a program needs exactly one dynamic function, found {len(dynamics)}")
        seen = set()
        for f in self.functions:
            if f.kind == "action":
                if f.action_name in seen:
                    raise ProgramError(f"more than one action function for {f.action_name!r}")
                seen.add(f.action_name)

    def __getitem__(self, function_id: str) -> FunctionDef:
        for f in self.functions:
            if f.id == function_id:
                return f
        raise KeyError(function_id)

    def __contains__(self, function_id: str) -> bool:
        return any(f.id == function_id for f in self.functions)

    @property
    def dynamic(self) -> FunctionDef:
        return next(f for f in self.functions if f.kind == "dynamic")

    def preconditions(self, action_name: str) -> list[FunctionDef]:
        return [f for f in self.functions if f.kind == "precondition" and f.action_name == action_name]

    def action_function(self, action_name: str) -> FunctionDef | None:
        for f in self.functions:
            if f.kind == "action" and f.action_name == action_name:
                return f
        return None

    def functions_for(self, action_name: str) -> list[FunctionDef]:
        return [f for f in self.functions if f.action_name == action_name or f.kind == "dynamic"]

    def check_actions(self, action_names: Iterable[str]) -> None:
        known = set(action_names)
        for f in self.functions:
            if f.action_name is not None and f.action_name not in known:
                raise ProgramError(f"{f.id} names unknown action {f.action_name!r}")

    # one-function edits

    def with_added(self, fn: FunctionDef) -> "TransitionProgram":
        return TransitionProgram(self.functions + (fn,))

    def with_removed(self, function_id: str) -> "TransitionProgram":
        if function_id not in self:
            raise ProgramError(f"no function {function_id!r}")
        return TransitionProgram(tuple(f for f in self.functions if f.id != function_id))

    def with_replaced(self, function_id: str, fn: FunctionDef) -> "TransitionProgram":
        if function_id not in self:
            raise ProgramError(f"no function {function_id!r}")
        return TransitionProgram(tuple(fn if f.id == function_id else f for f in self.functions))

    # bundles

    def to_json(self, meta: dict | None = None) -> dict:
        out: dict[str, Any] = {"version": BUNDLE_VERSION}
        if meta:
            out["meta"] = meta
        out["functions"] = [f.to_json() for f in self.functions]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TransitionProgram":
        if not isinstance(obj, dict) or "functions" not in obj:
            raise ProgramError("bundle needs a 'functions' list")
        fns, failures = [], []
        for rec in obj["functions"]:
            try:
                fns.append(FunctionDef.from_json(rec))
            except PatchScriptError as e:
                failures.append(f"{rec.get('id', '?')}: {e}")
        if failures:
            raise ProgramError("unparseable functions: " + "; ".join(failures))
        return cls(tuple(fns))

    def dumps(self, meta: dict | None = None) -> str:
        return dumps(self.to_json(meta), indent=2)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TransitionProgram":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Prediction:
    det: dict
    valid: bool
    feedback: str


def _apply_checked(state: dict, ops, sto_keys, fn: FunctionDef) -> dict:
    for op in ops:
        if not op.path:
            raise EvaluationFault(fn.id, "patches may not replace the whole state")
        if op.path[0] in sto_keys:
            raise EvaluationFault(fn.id, f"{op.path} addresses a stochastic variable")
    try:
        return apply_patch(state, ops)
    except PatchError as e:
        raise EvaluationFault(fn.id, str(e)) from None


def evaluate(
    program: TransitionProgram,
    prev_det: dict,
    prev_sto: dict,
    action: dict,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> Prediction:
    """Predict ``(s_t, sigma)``.

    Preconditions run in declaration order and the first failure supplies the
    feedback. The action patch applies only when all pass; the dynamic patch
    always applies, on top of the post-action state. Raises
    :class:`EvaluationFault` on any runtime fault.
    """
    state = {**prev_det, **prev_sto}
    sto_keys = prev_sto.keys()
    name = action.get("name") if isinstance(action, dict) else None
    valid, feedback = True, "all preconditions hold"
    for fn in program.preconditions(name):
        try:
            ok, msg = fn.compiled.run_check(state, action, step_budget)
        except RuntimeFault as e:
            raise EvaluationFault(fn.id, str(e)) from None
        if not ok:
            valid, feedback = False, msg
            break
    if valid:
        fn = program.action_function(name)
        if fn is not None:
            try:
                ops = fn.compiled.run_patch(state, action, step_budget)
            except RuntimeFault as e:
                raise EvaluationFault(fn.id, str(e)) from None
            state = _apply_checked(state, ops, sto_keys, fn)
    dyn = program.dynamic
    try:
        ops = dyn.compiled.run_patch(state, None, step_budget)
    except RuntimeFault as e:
        raise EvaluationFault(dyn.id, str(e)) from None
    state = _apply_checked(state, ops, sto_keys, dyn)
    det = normalize({k: v for k, v in state.items() if k not in sto_keys})
    return Prediction(det, valid, feedback)


def try_evaluate(program, prev_det, prev_sto, action, step_budget=DEFAULT_STEP_BUDGET):
    """``(prediction, None)`` or ``(None, fault)``."""
    try:
        return evaluate(program, prev_det, prev_sto, action, step_budget), None
    except EvaluationFault as e:
        return None, e


@dataclass(frozen=True)
class PredictionError:
    kind: str
    detail: str
    diff: tuple[DiffEntry, ...] = ()
    function_id: str | None = None


def classify_error(
    pred_det: dict | None,
    pred_valid: bool | None,
    true_det: dict,
    true_valid: bool,
    exec_fault: EvaluationFault | None = None,
) -> PredictionError | None:
    """Name the error, with precedence ``E_exec > E_pf/E_ps > E_od``."""
    if exec_fault is not None:
        return PredictionError("E_exec", str(exec_fault), function_id=exec_fault.function_id)
    if pred_valid is False and true_valid:
        return PredictionError("E_pf", "predicted invalid, action was valid")
    if pred_valid is True and not true_valid:
        return PredictionError("E_ps", "predicted valid, action was invalid")
    if not doc_equal(pred_det, true_det):
        diff = tuple(deep_diff(pred_det, true_det))
        return PredictionError("E_od", f"{len(diff)} deterministic values differ", diff)
    return None


def check_record(program: TransitionProgram, rec, step_budget=DEFAULT_STEP_BUDGET):
    """Evaluate ``program`` on a transition record and classify the outcome."""
    pred, fault = try_evaluate(program, rec.prev_det, rec.prev_sto, rec.action, step_budget)
    if fault is not None:
        return None, classify_error(None, None, rec.next_det, rec.valid, fault)
    return pred, classify_error(pred.det, pred.valid, rec.next_det, rec.valid)


def error_count(program: TransitionProgram, records: Sequence) -> int:
    return sum(check_record(program, r)[1] is not None for r in records)
