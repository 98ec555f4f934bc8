"""Compile PatchScript syntax trees to closures and run them under a step budget."""

from __future__ import annotations

import math
from typing import Any, Callable

from ..doc import Miss, PatchOp, Pointer, PointerError, doc_equal, is_number, resolve, type_name
from .parser import Node

DEFAULT_STEP_BUDGET = 10_000


class RuntimeFault(Exception):
    """Evaluation failed: missing path, type error, division by zero or budget exhausted."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, column {col})" if line else message)
        self.message = message
        self.line = line


class _Return(Exception):
    def __init__(self, value):
        self.value = value


class Frame:
    __slots__ = ("state", "action", "vars", "steps", "budget", "emits")

    def __init__(self, state, action, budget: int):
        self.state = state
        self.action = action
        self.vars: dict[str, Any] = {}
        self.steps = 0
        self.budget = budget
        self.emits: list[PatchOp] = []


def _tick(f: Frame, node: Node) -> None:
    f.steps += 1
    if f.steps > f.budget:
        raise RuntimeFault(f"step budget of {f.budget} exceeded", node.line, node.col)


def _num(v, node: Node) -> float:
    if not is_number(v):
        raise RuntimeFault(f"expected a number, got {type_name(v)}", node.line, node.col)
    return float(v)


def _bool(v, node: Node) -> bool:
    if not isinstance(v, bool):
        raise RuntimeFault(f"expected a boolean, got {type_name(v)}", node.line, node.col)
    return v


def _seq(v, node: Node) -> list:
    if not isinstance(v, list):
        raise RuntimeFault(f"expected a sequence, got {type_name(v)}", node.line, node.col)
    return v


def _lift(v):
    return float(v) if is_number(v) else v


def _pointer(text, node: Node) -> Pointer:
    if not isinstance(text, str):
        raise RuntimeFault(f"pointer must be text, got {type_name(text)}", node.line, node.col)
    try:
        return Pointer.parse(text)
    except PointerError as e:
        raise RuntimeFault(str(e), node.line, node.col) from None


def _compare(op: str, a, b, node: Node) -> bool:
    if op == "==":
        return doc_equal(a, b)
    if op == "!=":
        return not doc_equal(a, b)
    if is_number(a) and is_number(b):
        pass
    elif not (isinstance(a, str) and isinstance(b, str)):
        raise RuntimeFault(f"cannot order {type_name(a)} and {type_name(b)}", node.line, node.col)
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _arith(op: str, a, b, node: Node):
    if op == "+" and isinstance(a, str) and isinstance(b, str):
        return a + b
    x, y = _num(a, node), _num(b, node)
    if op == "+":
        r = x + y
    elif op == "-":
        r = x - y
    elif op == "*":
        r = x * y
    else:
        if y == 0:
            raise RuntimeFault("division by zero", node.line, node.col)
        r = x / y if op == "/" else math.fmod(x, y)
    if not math.isfinite(r):
        raise RuntimeFault("arithmetic overflow", node.line, node.col)
    return r


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "null"
    if is_number(v):
        v = float(v)
        return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)
    if isinstance(v, str):
        return v
    from ..doc import dumps

    return dumps(v)


def _builtin(name: str, args: list, node: Node):
    if name == "len":
        v = args[0]
        if not isinstance(v, (list, dict, str)):
            raise RuntimeFault(f"len of {type_name(v)}", node.line, node.col)
        return float(len(v))
    if name == "str":
        return _fmt(args[0])
    nums = [_num(a, node) for a in args]
    if name == "min":
        return min(nums)
    if name == "max":
        return max(nums)
    if name == "abs":
        return abs(nums[0])
    if name == "floor":
        return float(math.floor(nums[0]))
    if name == "ceil":
        return float(math.ceil(nums[0]))
    if name == "round":
        return float(math.floor(nums[0] + 0.5))
    if name == "clamp":
        x, lo, hi = nums
        if lo > hi:
            raise RuntimeFault("clamp bounds reversed", node.line, node.col)
        return min(max(x, lo), hi)
    raise RuntimeFault(f"unknown function {name}", node.line, node.col)


Code = Callable[[Frame], Any]


def compile_expr(node: Node) -> Code:
    tag, args = node.tag, node.args

    if tag in ("num", "str", "const"):
        value = args[0]

        def const(f):
            _tick(f, node)
            return value

        return const

    if tag == "var":
        name = args[0]

        def var(f):
            _tick(f, node)
            return f.vars[name]

        return var

    if tag in ("get", "aget"):
        ptr_code = compile_expr(args[0])
        default_code = compile_expr(args[1]) if args[1] is not None else None
        from_action = tag == "aget"

        def get(f):
            _tick(f, node)
            ptr = _pointer(ptr_code(f), node)
            v = resolve(f.action if from_action else f.state, ptr)
            if isinstance(v, Miss):
                if default_code is None:
                    raise RuntimeFault(f"{tag} {ptr}: {v.reason}", node.line, node.col)
                return default_code(f)
            return _lift(v)

        return get

    if tag == "has":
        ptr_code = compile_expr(args[0])

        def has(f):
            _tick(f, node)
            return not isinstance(resolve(f.state, _pointer(ptr_code(f), node)), Miss)

        return has

    if tag == "neg":
        inner = compile_expr(args[0])

        def neg(f):
            _tick(f, node)
            return -_num(inner(f), node)

        return neg

    if tag == "not":
        inner = compile_expr(args[0])

        def not_(f):
            _tick(f, node)
            return not _bool(inner(f), node)

        return not_

    if tag in ("and", "or"):
        left, right = compile_expr(args[0]), compile_expr(args[1])
        is_and = tag == "and"

        def logic(f):
            _tick(f, node)
            a = _bool(left(f), node)
            if a != is_and:
                return a
            return _bool(right(f), node)

        return logic

    if tag == "binop":
        op = args[0]
        left, right = compile_expr(args[1]), compile_expr(args[2])
        if op in ("==", "!=", "<", "<=", ">", ">="):

            def cmp(f):
                _tick(f, node)
                return _compare(op, left(f), right(f), node)

            return cmp

        def arith(f):
            _tick(f, node)
            return _arith(op, left(f), right(f), node)

        return arith

    if tag == "cond":
        c, a, b = (compile_expr(x) for x in args)

        def cond(f):
            _tick(f, node)
            return a(f) if _bool(c(f), node) else b(f)

        return cond

    if tag == "index":
        base, idx = compile_expr(args[0]), compile_expr(args[1])

        def index(f):
            _tick(f, node)
            container, key = base(f), idx(f)
            if isinstance(container, dict):
                if not isinstance(key, str) or key not in container:
                    raise RuntimeFault(f"no field {_fmt(key)!r}", node.line, node.col)
                return _lift(container[key])
            if isinstance(container, list):
                k = _num(key, node)
                if not k.is_integer() or not 0 <= k < len(container):
                    raise RuntimeFault(f"index {_fmt(key)} out of range", node.line, node.col)
                return _lift(container[int(k)])
            raise RuntimeFault(f"cannot index {type_name(container)}", node.line, node.col)

        return index

    if tag == "list":
        items = [compile_expr(x) for x in args]

        def list_(f):
            _tick(f, node)
            return [it(f) for it in items]

        return list_

    if tag == "call":
        name = args[0]
        codes = [compile_expr(x) for x in args[1]]

        def call(f):
            _tick(f, node)
            return _builtin(name, [c(f) for c in codes], node)

        return call

    if tag == "agg":
        kind, var = args[0], args[1]
        seq_code, body = compile_expr(args[2]), compile_expr(args[3])

        def agg(f):
            _tick(f, node)
            items = _seq(seq_code(f), node)
            acc: Any = 0.0 if kind in ("sum", "count") else ([] if kind == "filter" else kind == "all")
            try:
                for item in items:
                    f.vars[var] = _lift(item)
                    v = body(f)
                    if kind == "sum":
                        acc = _arith("+", acc, v, node)
                    elif kind == "count":
                        acc += 1.0 if _bool(v, node) else 0.0
                    elif kind == "filter":
                        if _bool(v, node):
                            acc.append(item)
                    elif kind == "any":
                        if _bool(v, node):
                            return True
                    elif not _bool(v, node):
                        return False
            finally:
                f.vars.pop(var, None)
            return acc

        return agg

    raise AssertionError(f"unknown expression node {tag}")


def compile_block(block: Node) -> Code:
    stmts = [compile_stmt(s) for s in block.args]

    def run(f):
        for s in stmts:
            s(f)

    return run


def compile_stmt(node: Node) -> Code:
    tag, args = node.tag, node.args
    if tag == "let":
        name, expr = args[0], compile_expr(args[1])

        def let(f):
            _tick(f, node)
            f.vars[name] = expr(f)

        return let

    if tag == "emit":
        op = args[0]
        ptr_code = compile_expr(args[1])
        value_code = compile_expr(args[2]) if args[2] is not None else None

        def emit(f):
            _tick(f, node)
            ptr = _pointer(ptr_code(f), node)
            value = value_code(f) if value_code is not None else None
            f.emits.append(PatchOp(op, ptr, value))

        return emit

    if tag == "return":
        ok_code, msg_code = compile_expr(args[0]), compile_expr(args[1])

        def ret(f):
            _tick(f, node)
            ok = _bool(ok_code(f), node)
            msg = msg_code(f)
            if not isinstance(msg, str):
                raise RuntimeFault("feedback must be text", node.line, node.col)
            raise _Return((ok, msg))

        return ret

    if tag == "if":
        cond = compile_expr(args[0])
        then, other = compile_block(args[1]), compile_block(args[2])

        def if_(f):
            _tick(f, node)
            if _bool(cond(f), node):
                then(f)
            else:
                other(f)

        return if_

    raise AssertionError(f"unknown statement node {tag}")


class Compiled:
    """A runnable body."""

    def __init__(self, tree: Node):
        self.tree = tree
        self._run = compile_block(tree)

    def run_patch(self, state, action=None, budget: int = DEFAULT_STEP_BUDGET) -> list[PatchOp]:
        f = Frame(state, action if action is not None else {}, budget)
        try:
            self._run(f)
        except _Return:
            raise RuntimeFault("patch bodies cannot return") from None
        except RecursionError:
            raise RuntimeFault("expression nesting too deep") from None
        return f.emits

    def run_check(self, state, action, budget: int = DEFAULT_STEP_BUDGET) -> tuple[bool, str]:
        f = Frame(state, action, budget)
        try:
            self._run(f)
        except _Return as r:
            return r.value
        except RecursionError:
            raise RuntimeFault("expression nesting too deep") from None
        raise RuntimeFault("precondition finished without returning")
