"""Lexer, parser and static checks for PatchScript bodies."""

from __future__ import annotations

import re
from dataclasses import dataclass

KEYWORDS = {
    "let", "emit", "return", "if", "then", "else", "and", "or", "not",
    "true", "false", "null", "get", "aget", "has",
}
AGGREGATES = {"sum", "count", "filter", "any", "all"}
# name -> (min args, max args); None means unbounded
BUILTINS = {
    "min": (2, None),
    "max": (2, None),
    "abs": (1, 1),
    "floor": (1, 1),
    "ceil": (1, 1),
    "round": (1, 1),
    "clamp": (3, 3),
    "len": (1, 1),
    "str": (1, 1),
}
EMIT_OPS = {"add": True, "replace": True, "remove": False}  # op -> takes a value

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|[<>+\-*/%(){}\[\],:.=;])
    """,
    re.VERBOSE,
)
_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "/": "/"}


class PatchScriptError(Exception):
    """Base class for static errors; carries a 1-based line and column."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, column {col})")
        self.message = message
        self.line = line
        self.col = col


class PatchScriptSyntaxError(PatchScriptError):
    pass


class UnboundIdentifier(PatchScriptError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str  # number | string | name | keyword | op | eof
    value: object
    line: int
    col: int


@dataclass(frozen=True)
class Node:
    tag: str
    args: tuple
    line: int = 0
    col: int = 0


def tokenize(src: str) -> list[Token]:
    out = []
    pos, line, line_start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        col = pos - line_start + 1
        if not m:
            raise PatchScriptSyntaxError(f"unexpected character {src[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "number":
            out.append(Token("number", float(text), line, col))
        elif kind == "string":
            out.append(Token("string", _unquote(text, line, col), line, col))
        elif kind == "name":
            out.append(Token("keyword" if text in KEYWORDS else "name", text, line, col))
        elif kind == "op":
            out.append(Token("op", text, line, col))
        pos = m.end()
    out.append(Token("eof", None, line, pos - line_start + 1))
    return out


def _unquote(text: str, line: int, col: int) -> str:
    body, out, i = text[1:-1], [], 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            esc = body[i + 1]
            if esc not in _ESCAPES:
                raise PatchScriptSyntaxError(f"unknown escape \\{esc}", line, col)
            out.append(_ESCAPES[esc])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


class Parser:
    def __init__(self, src: str):
        self.tokens = tokenize(src)
        self.i = 0

    # token helpers

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def _advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def _is(self, kind: str, value=None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def _accept(self, kind: str, value=None) -> Token | None:
        return self._advance() if self._is(kind, value) else None

    def _expect(self, kind: str, value=None, what: str | None = None) -> Token:
        if not self._is(kind, value):
            t = self.tok
            found = "end of input" if t.kind == "eof" else repr(t.value)
            raise PatchScriptSyntaxError(f"expected {what or value or kind}, found {found}", t.line, t.col)
        return self._advance()

    def _error(self, message: str) -> PatchScriptSyntaxError:
        return PatchScriptSyntaxError(message, self.tok.line, self.tok.col)

    # statements

    def parse_body(self) -> Node:
        stmts = self._stmts(until_brace=False)
        self._expect("eof", what="end of input")
        return Node("block", tuple(stmts), 1, 1)

    def _stmts(self, until_brace: bool) -> list[Node]:
        stmts = []
        while True:
            while self._accept("op", ";"):
                pass
            if until_brace and self._is("op", "}"):
                return stmts
            if self._is("eof"):
                if until_brace:
                    raise self._error("expected '}'")
                return stmts
            stmts.append(self._stmt())

    def _stmt(self) -> Node:
        t = self.tok
        if self._accept("keyword", "let"):
            name = self._expect("name", what="a name").value
            self._expect("op", "=")
            return Node("let", (name, self._expr()), t.line, t.col)
        if self._accept("keyword", "emit"):
            op_tok = self._expect("name", what="a patch op (add, replace, remove)")
            if op_tok.value not in EMIT_OPS:
                raise PatchScriptSyntaxError(f"unknown patch op {op_tok.value!r}", op_tok.line, op_tok.col)
            ptr = self._pointer()
            value = self._expr() if EMIT_OPS[op_tok.value] else None
            return Node("emit", (op_tok.value, ptr, value), t.line, t.col)
        if self._accept("keyword", "return"):
            self._expect("op", "(")
            ok = self._expr()
            self._expect("op", ",")
            msg = self._expr()
            self._expect("op", ")")
            return Node("return", (ok, msg), t.line, t.col)
        if self._is("keyword", "if"):
            return self._if_stmt()
        raise self._error(f"expected a statement, found {t.value!r}")

    def _if_stmt(self) -> Node:
        t = self._expect("keyword", "if")
        cond = self._expr()
        self._expect("op", "{")
        then = Node("block", tuple(self._stmts(until_brace=True)), t.line, t.col)
        self._expect("op", "}")
        other = Node("block", (), t.line, t.col)
        if self._accept("keyword", "else"):
            if self._is("keyword", "if"):
                other = Node("block", (self._if_stmt(),), t.line, t.col)
            else:
                self._expect("op", "{")
                other = Node("block", tuple(self._stmts(until_brace=True)), t.line, t.col)
                self._expect("op", "}")
        return Node("if", (cond, then, other), t.line, t.col)

    def _pointer(self) -> Node:
        t = self.tok
        if t.kind == "string":
            self._advance()
            return Node("str", (t.value,), t.line, t.col)
        if self._accept("op", "("):
            e = self._expr()
            self._expect("op", ")")
            return e
        raise self._error("expected a pointer (string or parenthesized expression)")

    # expressions

    def _expr(self) -> Node:
        t = self.tok
        if self._accept("keyword", "if"):
            cond = self._expr()
            self._expect("keyword", "then")
            a = self._expr()
            self._expect("keyword", "else")
            b = self._expr()
            return Node("cond", (cond, a, b), t.line, t.col)
        return self._or()

    def _or(self) -> Node:
        left = self._and()
        while (t := self._accept("keyword", "or")) is not None:
            left = Node("or", (left, self._and()), t.line, t.col)
        return left

    def _and(self) -> Node:
        left = self._not()
        while (t := self._accept("keyword", "and")) is not None:
            left = Node("and", (left, self._not()), t.line, t.col)
        return left

    def _not(self) -> Node:
        t = self.tok
        if self._accept("keyword", "not"):
            return Node("not", (self._not(),), t.line, t.col)
        return self._cmp()

    def _cmp(self) -> Node:
        left = self._sum()
        t = self.tok
        if t.kind == "op" and t.value in ("==", "!=", "<", "<=", ">", ">="):
            self._advance()
            return Node("binop", (t.value, left, self._sum()), t.line, t.col)
        return left

    def _sum(self) -> Node:
        left = self._product()
        while self.tok.kind == "op" and self.tok.value in ("+", "-"):
            t = self._advance()
            left = Node("binop", (t.value, left, self._product()), t.line, t.col)
        return left

    def _product(self) -> Node:
        left = self._unary()
        while self.tok.kind == "op" and self.tok.value in ("*", "/", "%"):
            t = self._advance()
            left = Node("binop", (t.value, left, self._unary()), t.line, t.col)
        return left

    def _unary(self) -> Node:
        t = self.tok
        if self._accept("op", "-"):
            return Node("neg", (self._unary(),), t.line, t.col)
        return self._postfix()

    def _postfix(self) -> Node:
        node = self._primary()
        while True:
            t = self.tok
            if self._accept("op", "."):
                name = self._expect("name", what="a field name").value
                node = Node("index", (node, Node("str", (name,), t.line, t.col)), t.line, t.col)
            elif self._accept("op", "["):
                idx = self._expr()
                self._expect("op", "]")
                node = Node("index", (node, idx), t.line, t.col)
            else:
                return node

    def _primary(self) -> Node:
        t = self.tok
        if t.kind == "number":
            self._advance()
            return Node("num", (t.value,), t.line, t.col)
        if t.kind == "string":
            self._advance()
            return Node("str", (t.value,), t.line, t.col)
        if t.kind == "keyword":
            if t.value in ("true", "false", "null"):
                self._advance()
                return Node("const", ({"true": True, "false": False, "null": None}[t.value],), t.line, t.col)
            if t.value in ("get", "aget"):
                self._advance()
                ptr = self._pointer()
                default = None
                if self._is("name", "default"):
                    self._advance()
                    default = self._unary()
                return Node(t.value, (ptr, default), t.line, t.col)
            if t.value == "has":
                self._advance()
                return Node("has", (self._pointer(),), t.line, t.col)
        if t.kind == "name":
            self._advance()
            if self._is("op", "("):
                if t.value in AGGREGATES:
                    return self._aggregate(t)
                return self._call(t)
            return Node("var", (t.value,), t.line, t.col)
        if self._accept("op", "("):
            e = self._expr()
            self._expect("op", ")")
            return e
        if self._accept("op", "["):
            items = []
            if not self._is("op", "]"):
                items.append(self._expr())
                while self._accept("op", ","):
                    items.append(self._expr())
            self._expect("op", "]")
            return Node("list", tuple(items), t.line, t.col)
        found = "end of input" if t.kind == "eof" else repr(t.value)
        raise PatchScriptSyntaxError(f"expected an expression, found {found}", t.line, t.col)

    def _call(self, name_tok: Token) -> Node:
        if name_tok.value not in BUILTINS:
            raise PatchScriptSyntaxError(f"unknown function {name_tok.value!r}", name_tok.line, name_tok.col)
        self._expect("op", "(")
        args = []
        if not self._is("op", ")"):
            args.append(self._expr())
            while self._accept("op", ","):
                args.append(self._expr())
        self._expect("op", ")")
        lo, hi = BUILTINS[name_tok.value]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise PatchScriptSyntaxError(
                f"{name_tok.value} takes {lo}{'' if hi == lo else '+' if hi is None else f'-{hi}'} arguments, got {len(args)}",
                name_tok.line, name_tok.col,
            )
        return Node("call", (name_tok.value, tuple(args)), name_tok.line, name_tok.col)

    def _aggregate(self, name_tok: Token) -> Node:
        self._expect("op", "(")
        var = self._expect("name", what="an element variable").value
        self._expect("name", "in", what="'in'")
        seq = self._expr()
        self._expect("op", ":")
        body = self._expr()
        self._expect("op", ")")
        return Node("agg", (name_tok.value, var, seq, body), name_tok.line, name_tok.col)


def parse(src: str) -> Node:
    return Parser(src).parse_body()


def check(tree: Node, kind: str | None = None) -> None:
    """Static checks: names bound before use, no rebinding, statement kinds fit ``kind``."""
    _check_block(tree, [set()], kind)


def _bound(scopes: list[set], name: str) -> bool:
    return any(name in s for s in scopes)


def _check_block(block: Node, scopes: list[set], kind: str | None) -> None:
    scopes.append(set())
    for stmt in block.args:
        tag = stmt.tag
        if tag == "let":
            name, expr = stmt.args
            _check_expr(expr, scopes, kind)
            if _bound(scopes, name):
                raise PatchScriptSyntaxError(f"{name!r} is already bound", stmt.line, stmt.col)
            scopes[-1].add(name)
        elif tag == "emit":
            if kind == "precondition":
                raise PatchScriptSyntaxError("preconditions cannot emit patches", stmt.line, stmt.col)
            _, ptr, value = stmt.args
            _check_expr(ptr, scopes, kind)
            if value is not None:
                _check_expr(value, scopes, kind)
        elif tag == "return":
            if kind in ("action", "dynamic"):
                raise PatchScriptSyntaxError(f"{kind} functions cannot return", stmt.line, stmt.col)
            for e in stmt.args:
                _check_expr(e, scopes, kind)
        elif tag == "if":
            cond, then, other = stmt.args
            _check_expr(cond, scopes, kind)
            _check_block(then, scopes, kind)
            _check_block(other, scopes, kind)
    scopes.pop()


def _check_expr(node: Node, scopes: list[set], kind: str | None) -> None:
    tag = node.tag
    if tag == "var":
        if not _bound(scopes, node.args[0]):
            raise UnboundIdentifier(f"unbound identifier {node.args[0]!r}", node.line, node.col)
    elif tag == "aget" and kind == "dynamic":
        raise PatchScriptSyntaxError("dynamic functions have no action to read", node.line, node.col)
    if tag == "agg":
        _, var, seq, body = node.args
        _check_expr(seq, scopes, kind)
        if _bound(scopes, var):
            raise PatchScriptSyntaxError(f"{var!r} is already bound", node.line, node.col)
        scopes.append({var})
        _check_expr(body, scopes, kind)
        scopes.pop()
        return
    for a in node.args:
        if isinstance(a, Node):
            _check_expr(a, scopes, kind)
        elif isinstance(a, tuple):
            for b in a:
                if isinstance(b, Node):
                    _check_expr(b, scopes, kind)
