"""PatchScript: the sandboxed language transition-program functions are written in.

See ``GRAMMAR.md`` in this package for the grammar.
"""

from .interp import DEFAULT_STEP_BUDGET, Compiled, RuntimeFault
from .parser import (
    Node,
    PatchScriptError,
    PatchScriptSyntaxError,
    UnboundIdentifier,
    check,
    parse,
    tokenize,
)


def compile_source(source: str, kind: str | None = None) -> Compiled:
    """Parse, statically check and compile a function body."""
    tree = parse(source)
    check(tree, kind)
    return Compiled(tree)


__all__ = [
    "DEFAULT_STEP_BUDGET",
    "Compiled",
    "Node",
    "PatchScriptError",
    "PatchScriptSyntaxError",
    "RuntimeFault",
    "UnboundIdentifier",
    "check",
    "compile_source",
    "parse",
    "tokenize",
]
