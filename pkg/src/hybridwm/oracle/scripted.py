"""Deterministic oracle driven by a JSON fixture.

A fixture has two parts. ``responses`` maps request keys (see
:attr:`OracleRequest.key`) to recorded raw responses; these win. ``rules``
answer anything else::

    {
      "responses": {"<sha256>": {...}},
      "rules": {
        "plausibility": {"plausible": 0.0, "implausible": -12.0,
                         "allowed_parents": {"customers": ["satisfaction"]},
                         "forbidden_edges": [["money", "customers"]],
                         "parent_sets": [{"target": "revenue", "parents": ["customers"],
                                          "log_prob_yes": -0.01}]},
        "topo_order": ["a", "b", "c"],             # or a list of alternatives
        "parents": {"b": ["a"], "c": [["a"], ["b"]]},
        "refinements": [{"match": {"error_kind": "E_od", "action": "set_price"},
                         "candidates": [{"op": "replace", "target_id": "...", "function": {...}}]}],
        "init_program": {"functions": [...]}
      }
    }

Where a rule holds a list of alternatives the request seed picks one
(``seed % len``). In ``allowed_parents`` an unlisted node may only have no
parents.
"""

from __future__ import annotations

import json
import os
from typing import Any

from .base import KnowledgeOracle, OracleError, OracleRequest


def _alternatives(value: list) -> list[list]:
    return value if value and isinstance(value[0], list) else [value]


def _matches(match: dict, ctx: dict) -> bool:
    for key, want in match.items():
        if key == "error_kind":
            ok = ctx.get("error_kind") == want
        elif key == "action":
            act = ctx.get("action")
            ok = isinstance(act, dict) and act.get("name") == want
        elif key == "diff_path":
            ok = any(d.get("path") == want for d in ctx.get("diff", ()))
        elif key == "faulting_function":
            ok = ctx.get("faulting_function") == want
        elif key == "feedback_contains":
            ok = want in (ctx.get("feedback") or "")
        elif key == "function_body_contains":
            fid, text = want
            ok = any(f.get("id") == fid and text in f.get("body", "") for f in ctx.get("functions", ()))
        elif key == "true_valid":
            ok = ctx.get("true_valid") == want
        else:
            raise OracleError(f"unknown refinement match key {key!r}")
        if not ok:
            return False
    return True


class ScriptedOracle(KnowledgeOracle):
    def __init__(self, fixture: dict | None = None, strict: bool = False):
        super().__init__()
        fixture = fixture or {}
        self.responses: dict[str, dict] = dict(fixture.get("responses", {}))
        self.rules: dict[str, Any] = dict(fixture.get("rules", {}))
        self.strict = strict or bool(fixture.get("strict", False))

    @classmethod
    def load(cls, path: str | os.PathLike, strict: bool = False) -> "ScriptedOracle":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), strict)

    def respond(self, request: OracleRequest) -> dict:
        if request.key in self.responses:
            return self.responses[request.key]
        if self.strict:
            raise OracleError(f"no recorded response for {request.kind} request {request.key[:12]}")
        handler = getattr(self, "_rule_" + request.kind)
        return handler(request.payload)

    def _rule(self, name: str):
        if name not in self.rules:
            raise OracleError(f"fixture has no {name!r} rule")
        return self.rules[name]

    def _rule_plausibility(self, payload: dict) -> dict:
        rule = self._rule("plausibility")
        good = float(rule.get("plausible", 0.0))
        bad = float(rule.get("implausible", -12.0))
        edges = [tuple(e) for e in payload["edges"]]
        target = payload["target"]
        if target is not None:
            parents = sorted(p for p, _ in edges)
            for entry in rule.get("parent_sets", ()):
                if entry["target"] == target and sorted(entry["parents"]) == parents:
                    return {"log_prob_yes": float(entry["log_prob_yes"])}
        forbidden = {tuple(e) for e in rule.get("forbidden_edges", ())}
        if any(e in forbidden for e in edges):
            return {"log_prob_yes": bad}
        allowed = rule.get("allowed_parents")
        if allowed is not None:
            for p, c in edges:
                if p not in allowed.get(c, ()):
                    return {"log_prob_yes": bad}
        return {"log_prob_yes": good}

    def _rule_topo_next(self, payload: dict) -> dict:
        options = _alternatives(self._rule("topo_order"))
        order = options[payload.get("seed", 0) % len(options)]
        remaining = payload["remaining"]
        for name in order:
            if name in remaining:
                return {"variable": name}
        return {"variable": remaining[0]}

    def _rule_elicit_parents(self, payload: dict) -> dict:
        table = self._rule("parents")
        value = table.get(payload["node"], [])
        options = _alternatives(value)
        return {"parents": list(options[payload.get("seed", 0) % len(options)])}

    def _rule_propose_refinements(self, payload: dict) -> dict:
        for rule in self._rule("refinements"):
            if _matches(rule.get("match", {}), payload["context"]):
                return {"refinements": list(rule.get("candidates", ()))}
        return {"refinements": []}

    def _rule_init_program(self, payload: dict) -> dict:
        return self._rule("init_program")
