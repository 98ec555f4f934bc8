"""Feature encoding for conditional distribution models.

Every node sees the same temporal context: the previous stochastic values,
the action, the current and previous deterministic features and the action's
validity. Same-step parent values are appended per node.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..doc import is_number
from ..schema import ObservationSchema, TransitionRecord, VariableSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class _Var:
    name: str
    levels: tuple[str, ...]  # empty for numerical
    lo: float
    hi: float

    @property
    def width(self) -> int:
        return len(self.levels) or 1

    def encode(self, value, out: np.ndarray) -> None:
        if self.levels:
            out[:] = 0.0
            try:
                out[self.levels.index(value)] = 1.0
            except ValueError:
                log.warning("unseen level %r for %s encoded as zeros", value, self.name)
        else:
            span = self.hi - self.lo
            out[0] = 0.0 if span <= 0 else min(max((float(value) - self.lo) / span, 0.0), 1.0)

    def to_json(self) -> dict:
        return {"name": self.name, "levels": list(self.levels), "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_json(cls, obj: dict) -> "_Var":
        return cls(obj["name"], tuple(obj["levels"]), obj["lo"], obj["hi"])


def _bounds(values) -> tuple[float, float]:
    nums = [float(v) for v in values if is_number(v)]
    if not nums:
        return 0.0, 0.0
    return min(nums), max(nums)


class FeatureEncoder:
    """Min-max numeric scaling, one-hot categoricals, flattened action fields."""

    def __init__(self, nodes: Sequence[_Var], conds: Sequence[_Var], actions: Sequence[str],
                 action_fields: Sequence[_Var]):
        self.nodes = {v.name: v for v in nodes}
        self.node_names = [v.name for v in nodes]
        self.conds = list(conds)
        self.actions = list(actions)
        self.action_fields = list(action_fields)
        w = sum(v.width for v in nodes)
        self.context_width = w + len(self.actions) + len(self.action_fields) + 2 * sum(v.width for v in self.conds) + 1

    @classmethod
    def fit(cls, schema: ObservationSchema, records: Sequence[TransitionRecord]) -> "FeatureEncoder":
        """Bounds come from the training records (both time steps)."""

        def var(spec: VariableSpec, stream_prev: str, stream_next: str) -> _Var:
            if spec.categorical:
                return _Var(spec.name, tuple(spec.levels), 0.0, 0.0)
            vals = [getattr(r, stream_prev).get(spec.name) for r in records]
            vals += [getattr(r, stream_next).get(spec.name) for r in records]
            return _Var(spec.name, (), *_bounds(vals))

        nodes = [var(schema[n], "prev_sto", "next_sto") for n in schema.names("stochastic", features_only=True)]
        conds = [var(schema[n], "prev_det", "next_det") for n in schema.names("deterministic", features_only=True)]
        if schema.actions:
            actions = [a.name for a in schema.actions]
        else:
            actions = sorted({r.action.get("name") for r in records if isinstance(r.action.get("name"), str)})
        fields = []
        for a in schema.actions:
            for fname in sorted(a.fields):
                b = a.fields[fname] or {}
                lo, hi = b.get("lower"), b.get("upper")
                if lo is None or hi is None:
                    dlo, dhi = _bounds(r.action.get(fname) for r in records if r.action.get("name") == a.name)
                    lo = dlo if lo is None else lo
                    hi = dhi if hi is None else hi
                fields.append(_Var(f"{a.name}.{fname}", (), float(lo), float(hi)))
        return cls(nodes, conds, actions, fields)

    # single rows

    def context(self, prev_det: dict, prev_sto: dict, action: dict, next_det: dict, valid: bool) -> np.ndarray:
        out = np.zeros(self.context_width)
        i = 0
        for v in self.nodes.values():
            v.encode(prev_sto[v.name], out[i:i + v.width])
            i += v.width
        name = action.get("name")
        if name in self.actions:
            out[i + self.actions.index(name)] = 1.0
        i += len(self.actions)
        for f in self.action_fields:
            aname, fname = f.name.split(".", 1)
            if aname == name and is_number(action.get(fname)):
                f.encode(action[fname], out[i:i + 1])
            i += 1
        for state in (next_det, prev_det):
            for v in self.conds:
                v.encode(state[v.name], out[i:i + v.width])
                i += v.width
        out[i] = 1.0 if valid else 0.0
        return out

    def value(self, node: str, value) -> np.ndarray:
        v = self.nodes[node]
        out = np.zeros(v.width)
        v.encode(value, out)
        return out

    def node_width(self, node: str) -> int:
        return self.nodes[node].width

    # whole datasets

    def dataset(self, records: Sequence[TransitionRecord]) -> "EncodedData":
        ctx = np.stack([
            self.context(r.prev_det, r.prev_sto, r.action, r.next_det, r.valid) for r in records
        ]) if records else np.zeros((0, self.context_width))
        cols, targets = {}, {}
        for name, v in self.nodes.items():
            vals = [r.next_sto[name] for r in records]
            cols[name] = np.stack([self.value(name, x) for x in vals]) if records else np.zeros((0, v.width))
            targets[name] = vals
        return EncodedData(self, ctx, cols, targets)

    def to_json(self) -> dict:
        return {
            "nodes": [v.to_json() for v in self.nodes.values()],
            "conds": [v.to_json() for v in self.conds],
            "actions": self.actions,
            "action_fields": [v.to_json() for v in self.action_fields],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureEncoder":
        return cls(
            [_Var.from_json(v) for v in obj["nodes"]],
            [_Var.from_json(v) for v in obj["conds"]],
            obj["actions"],
            [_Var.from_json(v) for v in obj["action_fields"]],
        )


class EncodedData:
    """Context matrix plus per-node encoded values and raw targets."""

    def __init__(self, encoder: FeatureEncoder, ctx: np.ndarray, cols: dict, targets: dict):
        self.encoder = encoder
        self.ctx = ctx
        self.cols = cols
        self.targets = targets

    def __len__(self) -> int:
        return self.ctx.shape[0]

    def features(self, parents: Sequence[str]) -> np.ndarray:
        parts = [self.ctx] + [self.cols[p] for p in sorted(parents)]
        return np.ascontiguousarray(np.hstack(parts))
