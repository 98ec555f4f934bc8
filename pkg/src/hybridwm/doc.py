"""Structured document values, JSON pointers, patches and structural diffs.

Documents are plain JSON-compatible Python values: ``None``, ``bool``,
numbers, ``str``, ``list`` and ``dict`` with string keys. All numbers are
treated as doubles; integer-valued numbers serialize without a fraction.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

__all__ = [
    "PointerError",
    "PatchError",
    "Pointer",
    "Miss",
    "PatchOp",
    "DiffEntry",
    "resolve",
    "apply_patch",
    "deep_diff",
    "diff_to_patch",
    "doc_equal",
    "is_number",
    "type_name",
    "dumps",
    "loads",
    "normalize",
]

PATCH_OPS = ("add", "remove", "replace")
DIFF_KINDS = ("values_changed", "item_added", "item_removed", "type_changed")


class PointerError(ValueError):
    """Malformed pointer text."""


class PatchError(ValueError):
    """A patch operation could not be applied."""


def is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def type_name(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if is_number(value):
        return "number"
    if isinstance(value, str):
        return "text"
    if isinstance(value, list):
        return "sequence"
    if isinstance(value, dict):
        return "map"
    raise TypeError(f"not a document value: {type(value).__name__}")


def doc_equal(a: Any, b: Any) -> bool:
    """Deep structural equality; booleans never equal numbers."""
    ta, tb = type_name(a), type_name(b)
    if ta != tb:
        return False
    if ta == "sequence":
        return len(a) == len(b) and all(doc_equal(x, y) for x, y in zip(a, b))
    if ta == "map":
        return a.keys() == b.keys() and all(doc_equal(a[k], b[k]) for k in a)
    return a == b


def _escape(token: str) -> str:
    return token.replace("~", "~0").replace("/", "~1")


def _unescape(token: str) -> str:
    i = 0
    while True:
        i = token.find("~", i)
        if i < 0:
            break
        if i + 1 >= len(token) or token[i + 1] not in "01":
            raise PointerError(f"invalid escape in pointer token {token!r}")
        i += 2
    return token.replace("~1", "/").replace("~0", "~")


class Pointer(tuple):
    """An ordered sequence of reference tokens.

    >>> Pointer.parse("/a~1b/0")
    Pointer('/a~1b/0')
    >>> list(Pointer.parse("/m~0n"))
    ['m~n']
    """

    __slots__ = ()

    def __new__(cls, segments: Iterable[str] = ()):
        return super().__new__(cls, (str(s) for s in segments))

    @classmethod
    def parse(cls, text: "str | Pointer") -> "Pointer":
        if isinstance(text, Pointer):
            return text
        if not isinstance(text, str):
            raise PointerError(f"pointer must be text, got {type(text).__name__}")
        if text == "":
            return cls()
        if not text.startswith("/"):
            raise PointerError(f"pointer must start with '/': {text!r}")
        return cls(_unescape(tok) for tok in text[1:].split("/"))

    def __str__(self) -> str:
        return "".join("/" + _escape(s) for s in self)

    def __repr__(self) -> str:
        return f"Pointer({str(self)!r})"

    @property
    def parent(self) -> "Pointer":
        return Pointer(self[:-1])

    def child(self, token: "str | int") -> "Pointer":
        return Pointer((*self, str(token)))

    def sort_key(self) -> tuple:
        return tuple((0, int(s), "") if s.isdigit() else (1, 0, s) for s in self)


@dataclass(frozen=True)
class Miss:
    """Why a pointer failed to resolve.

    ``reason`` is one of ``absent_key``, ``index_out_of_range``,
    ``bad_index`` or ``not_container``; ``depth`` is the failing segment.
    """

    reason: str
    depth: int
    pointer: Pointer

    def __bool__(self) -> bool:
        return False

    def __str__(self) -> str:
        return f"{self.reason} at segment {self.depth} of {self.pointer}"


def _index(token: str, length: int, allow_end: bool) -> int | None:
    if not token.isdigit() or (len(token) > 1 and token[0] == "0"):
        return None
    i = int(token)
    limit = length if allow_end else length - 1
    return i if i <= limit else -1


def resolve(doc: Any, ptr: "str | Pointer") -> Any:
    """Return the value addressed by ``ptr`` or a :class:`Miss`."""
    ptr = Pointer.parse(ptr)
    cur = doc
    for depth, tok in enumerate(ptr):
        if isinstance(cur, dict):
            if tok not in cur:
                return Miss("absent_key", depth, ptr)
            cur = cur[tok]
        elif isinstance(cur, list):
            i = _index(tok, len(cur), allow_end=False)
            if i is None:
                return Miss("bad_index", depth, ptr)
            if i < 0:
                return Miss("index_out_of_range", depth, ptr)
            cur = cur[i]
        else:
            return Miss("not_container", depth, ptr)
    return cur


@dataclass(frozen=True)
class PatchOp:
    op: str
    path: Pointer
    value: Any = None

    def __post_init__(self):
        if self.op not in PATCH_OPS:
            raise PatchError(f"unsupported patch op {self.op!r}")
        object.__setattr__(self, "path", Pointer.parse(self.path))

    @classmethod
    def from_json(cls, obj: dict) -> "PatchOp":
        if not isinstance(obj, dict) or "op" not in obj or "path" not in obj:
            raise PatchError(f"malformed patch operation: {obj!r}")
        if obj["op"] in ("add", "replace") and "value" not in obj:
            raise PatchError(f"{obj['op']} requires a value")
        return cls(obj["op"], Pointer.parse(obj["path"]), obj.get("value"))

    def to_json(self) -> dict:
        out = {"op": self.op, "path": str(self.path)}
        if self.op != "remove":
            out["value"] = self.value
        return out


def _as_ops(ops: Sequence) -> list[PatchOp]:
    return [o if isinstance(o, PatchOp) else PatchOp.from_json(o) for o in ops]


def _apply_one(doc: Any, op: PatchOp) -> Any:
    path = op.path
    if not path:
        if op.op == "remove":
            raise PatchError("cannot remove the document root")
        return copy.deepcopy(op.value)
    container = resolve(doc, path.parent)
    if isinstance(container, Miss):
        raise PatchError(f"{op.op} {path}: parent missing ({container})")
    tok = path[-1]
    if isinstance(container, dict):
        if op.op == "add":
            container[tok] = copy.deepcopy(op.value)
        elif tok not in container:
            raise PatchError(f"{op.op} {path}: absent key")
        elif op.op == "replace":
            container[tok] = copy.deepcopy(op.value)
        else:
            del container[tok]
    elif isinstance(container, list):
        i = _index(tok, len(container), allow_end=(op.op == "add"))
        if i is None:
            raise PatchError(f"{op.op} {path}: sequence needs an explicit index")
        if i < 0:
            raise PatchError(f"{op.op} {path}: index out of range")
        if op.op == "remove":
            del container[i]
        elif i == len(container):
            container.append(copy.deepcopy(op.value))
        else:
            # add at an existing index replaces, like replace
            container[i] = copy.deepcopy(op.value)
    else:
        raise PatchError(f"{op.op} {path}: parent is not a container")
    return doc


def apply_patch(doc: Any, ops: Sequence) -> Any:
    """Apply ``ops`` in order to a deep copy of ``doc``.

    >>> apply_patch({"cars": []}, [{"op": "add", "path": "/cars/0", "value": 1}])
    {'cars': [1]}
    """
    out = copy.deepcopy(doc)
    for op in _as_ops(ops):
        out = _apply_one(out, op)
    return out


@dataclass(frozen=True)
class DiffEntry:
    path: Pointer
    kind: str
    old_value: Any = None
    new_value: Any = None

    def to_json(self) -> dict:
        out = {"path": str(self.path), "kind": self.kind}
        if self.kind != "item_added":
            out["old_value"] = self.old_value
        if self.kind != "item_removed":
            out["new_value"] = self.new_value
        return out


def _diff(a: Any, b: Any, path: Pointer, out: list[DiffEntry]) -> None:
    ta, tb = type_name(a), type_name(b)
    if ta != tb:
        out.append(DiffEntry(path, "type_changed", a, b))
    elif ta == "map":
        for k in a:
            if k in b:
                _diff(a[k], b[k], path.child(k), out)
            else:
                out.append(DiffEntry(path.child(k), "item_removed", a[k], None))
        for k in b:
            if k not in a:
                out.append(DiffEntry(path.child(k), "item_added", None, b[k]))
    elif ta == "sequence":
        n = min(len(a), len(b))
        for i in range(n):
            _diff(a[i], b[i], path.child(i), out)
        for i in range(n, len(a)):
            out.append(DiffEntry(path.child(i), "item_removed", a[i], None))
        for i in range(n, len(b)):
            out.append(DiffEntry(path.child(i), "item_added", None, b[i]))
    elif a != b:
        out.append(DiffEntry(path, "values_changed", a, b))


def deep_diff(before: Any, after: Any) -> list[DiffEntry]:
    """Structural diff, sorted by path (numeric segments in numeric order).

    Maps and sequences present on both sides are descended; values that are
    added, removed or change type are reported whole at their own path.
    """
    out: list[DiffEntry] = []
    _diff(before, after, Pointer(), out)
    out.sort(key=lambda d: d.path.sort_key())
    return out


def diff_to_patch(entries: Sequence[DiffEntry]) -> list[PatchOp]:
    """Patch that replays ``entries``: replaces, then removals (back to front), then adds."""
    replaces = [
        PatchOp("replace", d.path, d.new_value)
        for d in entries
        if d.kind in ("values_changed", "type_changed")
    ]
    removes = [PatchOp("remove", d.path) for d in entries if d.kind == "item_removed"]
    adds = [PatchOp("add", d.path, d.new_value) for d in entries if d.kind == "item_added"]
    removes.sort(key=lambda o: o.path.sort_key(), reverse=True)
    adds.sort(key=lambda o: o.path.sort_key())
    return replaces + removes + adds


def normalize(doc: Any) -> Any:
    """Collapse integer-valued floats to ints (for serialization)."""
    if isinstance(doc, float):
        if not math.isfinite(doc):
            raise ValueError("non-finite numbers are not document values")
        return int(doc) if doc.is_integer() and abs(doc) < 2**53 else doc
    if isinstance(doc, list):
        return [normalize(v) for v in doc]
    if isinstance(doc, dict):
        return {k: normalize(v) for k, v in doc.items()}
    return doc


def dumps(doc: Any, **kwargs) -> str:
    return json.dumps(normalize(doc), ensure_ascii=False, allow_nan=False, **kwargs)


def loads(text: "str | bytes") -> Any:
    return json.loads(text)
