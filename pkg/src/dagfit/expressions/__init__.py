"""Text language for assembling graphs from registered pieces."""

from .compile import ExpressionBuilder, compile_expression, expand, free_indices, join_key, replicate
from .syntax import Add, Call, Mul, NameRef, Num, SumReduce, Token, dump_tree, parse, pretty, tokenize

__all__ = [
    "Add",
    "Call",
    "ExpressionBuilder",
    "Mul",
    "NameRef",
    "Num",
    "SumReduce",
    "Token",
    "compile_expression",
    "dump_tree",
    "expand",
    "free_indices",
    "join_key",
    "parse",
    "pretty",
    "replicate",
    "tokenize",
]
