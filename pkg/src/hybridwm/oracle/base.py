"""Requests, responses and the typed query surface shared by every oracle.

Concrete oracles implement :meth:`KnowledgeOracle.respond`, which maps an
:class:`OracleRequest` to a plain JSON response. The typed methods build
requests, validate answers and memoize plausibility queries.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

from ..doc import normalize
from ..program import FunctionDef, ProgramError, TransitionProgram
from ..schema import ObservationSchema

log = logging.getLogger(__name__)

KINDS = ("init_program", "propose_refinements", "topo_next", "elicit_parents", "plausibility")
LOGPROB_FLOOR = -30.0

_REQUIRED = {
    "init_program": ("actions", "variables"),
    "propose_refinements": ("context", "k"),
    "topo_next": ("ordered", "remaining"),
    "elicit_parents": ("node", "predecessors"),
    "plausibility": ("edges", "target"),
}


class OracleError(RuntimeError):
    """The oracle could not answer (transport failure, missing fixture, malformed reply)."""


class InitError(OracleError):
    def __init__(self, problems: list[str]):
        super().__init__("initial program incomplete: " + "; ".join(problems))
        self.problems = problems


def canonical_json(obj: Any) -> str:
    return json.dumps(normalize(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class OracleRequest:
    """``payload`` identifies the question; ``context`` only feeds prompt rendering."""

    kind: str
    payload: dict
    context: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown oracle request kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.payload]
        if missing:
            raise ValueError(f"{self.kind} request missing {missing}")

    @property
    def key(self) -> str:
        return hashlib.sha256(canonical_json({"kind": self.kind, "payload": self.payload}).encode()).hexdigest()


def schema_context(schema: ObservationSchema | None) -> dict:
    if schema is None:
        return {}
    return {"schema": schema.to_json(), "environment_doc": schema.environment_doc}


class KnowledgeOracle:
    """Typed queries on top of :meth:`respond`."""

    def __init__(self):
        self._memo: dict[str, float] = {}
        self.transport_calls = 0

    def respond(self, request: OracleRequest) -> dict:
        raise NotImplementedError

    def _ask(self, request: OracleRequest) -> dict:
        self.transport_calls += 1
        out = self.respond(request)
        if not isinstance(out, dict):
            raise OracleError(f"{request.kind}: response must be an object")
        return out

    # structure prior

    def plausibility(self, nodes: Sequence[str], edges: Sequence, target: str | None,
                     schema: ObservationSchema | None = None) -> float:
        """Log-probability of a "yes" to "is this dependency structure plausible?".

        With ``target`` set, ``edges`` are that node's incoming edges.
        """
        payload = {"target": target, "edges": sorted([list(e) for e in edges])}
        if target is not None:
            payload = {"target": target, "edges": payload["edges"], "parents": sorted(p for p, _ in edges)}
        req = OracleRequest("plausibility", payload, {**schema_context(schema), "nodes": list(nodes)})
        if req.key not in self._memo:
            value = self._ask(req).get("log_prob_yes")
            if value is None or not isinstance(value, (int, float)) or math.isnan(value):
                value = LOGPROB_FLOOR
            self._memo[req.key] = min(0.0, max(float(value), LOGPROB_FLOOR))
        return self._memo[req.key]

    # seeding

    def topo_next(self, ordered: Sequence[str], remaining: Sequence[str],
                  schema: ObservationSchema | None = None, seed: int = 0) -> str | None:
        if len(remaining) == 1:
            return remaining[0]
        req = OracleRequest("topo_next", {"ordered": list(ordered), "remaining": list(remaining), "seed": seed},
                            schema_context(schema))
        answer = self._ask(req).get("variable")
        return answer if answer in remaining else None

    def elicit_parents(self, node: str, predecessors: Sequence[str],
                       schema: ObservationSchema | None = None, seed: int = 0) -> list[str]:
        if not predecessors:
            return []
        req = OracleRequest("elicit_parents", {"node": node, "predecessors": list(predecessors), "seed": seed},
                            schema_context(schema))
        parents = self._ask(req).get("parents") or []
        return [p for p in parents if p in predecessors]

    # programs

    def propose_refinements(self, context: dict, k: int) -> list:
        from ..refine import Refinement, RefinementError

        if k < 1:
            raise ValueError("k must be at least 1")
        doc = context.get("environment_doc", "")
        payload_ctx = {key: v for key, v in context.items() if key != "environment_doc"}
        req = OracleRequest("propose_refinements", {"context": payload_ctx, "k": k}, {"environment_doc": doc})
        out = []
        for i, raw in enumerate(self._ask(req).get("refinements") or []):
            try:
                out.append(Refinement.from_json(raw))
            except (RefinementError, KeyError, TypeError, ValueError) as e:
                log.warning("dropping candidate %d: %s", i, e)
            if len(out) == k:
                break
        return out

    def init_program(self, schema: ObservationSchema) -> TransitionProgram:
        req = OracleRequest(
            "init_program",
            {"actions": [a.name for a in schema.actions], "variables": schema.names()},
            schema_context(schema),
        )
        return build_initial_program(self._ask(req), schema)


def build_initial_program(response: dict, schema: ObservationSchema) -> TransitionProgram:
    """Validate an ``init_program`` answer, listing every gap at once."""
    problems, fns = [], []
    for rec in response.get("functions") or []:
        try:
            fns.append(FunctionDef.from_json(rec))
        except Exception as e:
            problems.append(f"{rec.get('id', '?') if isinstance(rec, dict) else '?'}: {e}")
    actions = [a.name for a in schema.actions]
    kinds = {(f.kind, f.action_name) for f in fns}
    if not problems:
        if ("dynamic", None) not in kinds:
            problems.append("no dynamic function")
        for a in actions:
            if ("action", a) not in kinds:
                problems.append(f"no action function for {a}")
    if problems:
        raise InitError(problems)
    try:
        program = TransitionProgram(tuple(fns))
        program.check_actions(actions)
    except ProgramError as e:
        raise InitError([str(e)]) from None
    return program
