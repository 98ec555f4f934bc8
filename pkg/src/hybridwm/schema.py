"""Observation schemas, transition records and trajectory files."""

from __future__ import annotations

import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Sequence

from .doc import dumps, is_number

log = logging.getLogger(__name__)

RECORD_KEYS = ("prev_det", "prev_sto", "action", "valid", "next_det", "next_sto")


class SchemaError(ValueError):
    pass


class IngestionError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str  # "numerical" | "categorical"
    stream: str  # "deterministic" | "stochastic"
    description: str = ""
    levels: tuple[str, ...] = ()
    lower: float | None = None
    upper: float | None = None
    integer: bool = False
    # bookkeeping variables (e.g. a day counter) are neither graph nodes nor features
    feature: bool = True

    def __post_init__(self):
        if self.kind not in ("numerical", "categorical"):
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.stream not in ("deterministic", "stochastic"):
            raise SchemaError(f"{self.name}: unknown stream {self.stream!r}")
        if self.kind == "categorical":
            if not self.levels or len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"{self.name}: categorical levels must be non-empty and unique")
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise SchemaError(f"{self.name}: lower bound exceeds upper bound")

    @property
    def categorical(self) -> bool:
        return self.kind == "categorical"

    @classmethod
    def from_json(cls, obj: dict) -> "VariableSpec":
        try:
            return cls(
                name=obj["name"],
                kind=obj["kind"],
                stream=obj["stream"],
                description=obj.get("description", ""),
                levels=tuple(obj.get("levels", ())),
                lower=obj.get("lower"),
                upper=obj.get("upper"),
                integer=bool(obj.get("integer", False)),
                feature=bool(obj.get("feature", True)),
            )
        except KeyError as e:
            raise SchemaError(f"variable spec missing {e}") from None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind, "stream": self.stream,
                               "description": self.description}
        if self.categorical:
            out["levels"] = list(self.levels)
        else:
            out["lower"] = self.lower
            out["upper"] = self.upper
            out["integer"] = self.integer
        if not self.feature:
            out["feature"] = False
        return out


@dataclass(frozen=True)
class ActionSpec:
    """An action name with its numeric argument fields and their bounds."""

    name: str
    fields: dict = field(default_factory=dict)  # field -> {"lower":..., "upper":...}
    description: str = ""

    @classmethod
    def from_json(cls, obj: dict) -> "ActionSpec":
        return cls(obj["name"], dict(obj.get("fields", {})), obj.get("description", ""))

    def to_json(self) -> dict:
        return {"name": self.name, "fields": self.fields, "description": self.description}


@dataclass(frozen=True)
class ObservationSchema:
    variables: tuple[VariableSpec, ...]
    environment_doc: str = ""
    actions: tuple[ActionSpec, ...] = ()
    name: str = "environment"

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SchemaError("variable names must be unique")
        anames = [a.name for a in self.actions]
        if len(set(anames)) != len(anames):
            raise SchemaError("action names must be unique")

    def __getitem__(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(v.name == name for v in self.variables)

    def names(self, stream: str | None = None, features_only: bool = False) -> list[str]:
        return [
            v.name
            for v in self.variables
            if (stream is None or v.stream == stream) and (v.feature or not features_only)
        ]

    @property
    def det_names(self) -> list[str]:
        return self.names("deterministic")

    @property
    def sto_names(self) -> list[str]:
        return self.names("stochastic")

    def action(self, name: str) -> ActionSpec:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    @classmethod
    def from_json(cls, obj: dict) -> "ObservationSchema":
        if "variables" not in obj:
            raise SchemaError("schema needs a 'variables' array")
        return cls(
            variables=tuple(VariableSpec.from_json(v) for v in obj["variables"]),
            environment_doc=obj.get("environment_doc", ""),
            actions=tuple(ActionSpec.from_json(a) for a in obj.get("actions", ())),
            name=obj.get("name", "environment"),
        )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "variables": [v.to_json() for v in self.variables],
            "actions": [a.to_json() for a in self.actions],
            "environment_doc": self.environment_doc,
        }

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ObservationSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Violation:
    variable: str
    kind: str  # missing | wrong_type | out_of_bounds | unknown_level
    value: Any = None

    def __str__(self) -> str:
        return f"{self.variable}: {self.kind} ({self.value!r})"


def validate(obs: dict, schema: ObservationSchema, stream: str | None = None) -> list[Violation]:
    """One violation per variable that is missing, mistyped or out of range.

    >>> s = ObservationSchema((VariableSpec("sat", "numerical", "stochastic", lower=1, upper=5),))
    >>> validate({"sat": 7.0}, s)
    [Violation(variable='sat', kind='out_of_bounds', value=7.0)]
    """
    out = []
    for spec in schema.variables:
        if stream is not None and spec.stream != stream:
            continue
        if not isinstance(obs, dict) or spec.name not in obs:
            out.append(Violation(spec.name, "missing"))
            continue
        value = obs[spec.name]
        if spec.categorical:
            if not isinstance(value, str):
                out.append(Violation(spec.name, "wrong_type", value))
            elif value not in spec.levels:
                out.append(Violation(spec.name, "unknown_level", value))
        elif not is_number(value) or not math.isfinite(value):
            out.append(Violation(spec.name, "wrong_type", value))
        elif (spec.lower is not None and value < spec.lower) or (
            spec.upper is not None and value > spec.upper
        ):
            out.append(Violation(spec.name, "out_of_bounds", value))
    return out


@dataclass(frozen=True)
class TransitionRecord:
    prev_det: dict
    prev_sto: dict
    action: dict
    valid: bool
    next_det: dict
    next_sto: dict
    trajectory_id: Any = None
    step: int | None = None

    @classmethod
    def from_json(cls, obj: dict) -> "TransitionRecord":
        missing = [k for k in RECORD_KEYS if k not in obj]
        if missing:
            raise KeyError(", ".join(missing))
        if not isinstance(obj["valid"], bool):
            raise TypeError("'valid' must be a boolean")
        return cls(
            prev_det=obj["prev_det"],
            prev_sto=obj["prev_sto"],
            action=obj["action"],
            valid=obj["valid"],
            next_det=obj["next_det"],
            next_sto=obj["next_sto"],
            trajectory_id=obj.get("trajectory_id"),
            step=obj.get("step"),
        )

    def to_json(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "step": self.step,
            "prev_det": self.prev_det,
            "prev_sto": self.prev_sto,
            "action": self.action,
            "valid": self.valid,
            "next_det": self.next_det,
            "next_sto": self.next_sto,
        }


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8")


def load_trajectories(
    source,
    schema: ObservationSchema | None = None,
    violations: list | None = None,
) -> list[list[TransitionRecord]]:
    """Parse a JSON-lines trajectory file into trajectories.

    Consecutive records sharing a ``trajectory_id`` form one trajectory.
    Lines whose object has a ``_meta`` key are headers and are skipped. Schema
    violations are appended to ``violations`` as ``(line, Violation)`` pairs
    when a list is supplied, and logged otherwise.
    """
    fh = _open_text(source)
    trajectories: list[list[TransitionRecord]] = []
    current_id = object()
    try:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestionError(lineno, f"invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise IngestionError(lineno, "expected a JSON object")
            if "_meta" in obj:
                continue
            try:
                rec = TransitionRecord.from_json(obj)
            except (KeyError, TypeError) as e:
                raise IngestionError(lineno, f"bad record: {e}") from None
            if schema is not None:
                found = (
                    validate(rec.prev_det, schema, "deterministic")
                    + validate(rec.next_det, schema, "deterministic")
                    + validate(rec.prev_sto, schema, "stochastic")
                    + validate(rec.next_sto, schema, "stochastic")
                )
                for v in found:
                    if violations is not None:
                        violations.append((lineno, v))
                    else:
                        log.warning("line %d: %s", lineno, v)
            if not trajectories or rec.trajectory_id != current_id:
                trajectories.append([])
                current_id = rec.trajectory_id
            trajectories[-1].append(rec)
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()
    return trajectories


def dump_trajectories(
    trajectories: Iterable[Sequence[TransitionRecord]], fh: IO[str], meta: dict | None = None
) -> None:
    if meta is not None:
        fh.write(dumps({"_meta": meta}, sort_keys=True) + "\n")
    for traj in trajectories:
        for rec in traj:
            fh.write(dumps(rec.to_json()) + "\n")


def flatten(trajectories: Iterable[Sequence[TransitionRecord]]) -> list[TransitionRecord]:
    return [rec for traj in trajectories for rec in traj]
