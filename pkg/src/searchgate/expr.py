"""Arithmetic expressions over numeric document fields.

Grammar (standard precedence, left associative):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := NUMBER | IDENT | 'log' '(' expr ')' | '-' factor | '(' expr ')'

Evaluation is total: a missing or non-numeric field contributes 0,
``log(x)`` is 0 for x <= 0, and division by zero yields 0 while bumping a
per-query warning counter. Two evaluators share these rules: a scalar one
for single documents and a vectorized one over column arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, MutableMapping, Union

import numpy as np

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<number>\d+(?:\.\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/()])"
)


class ExprParseError(ValueError):
    """Parse failure with the offending position and the expected tokens."""

    def __init__(self, message: str, pos: int, expected: tuple[str, ...] = ()):
        self.pos = pos
        self.expected = expected
        suffix = f" (expected one of: {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at position {pos}{suffix}")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class FieldRef:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Log:
    operand: "Expr"


Expr = Union[Num, FieldRef, Neg, BinOp, Log]


@dataclass(frozen=True)
class _Token:
    kind: str  # number | ident | op | end
    text: str
    pos: int


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _lex(text)
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str) -> None:
        if self.cur.kind == "op" and self.cur.text == op:
            self.advance()
            return
        raise ExprParseError(
            f"unexpected {self.cur.text!r}" if self.cur.kind != "end" else "unexpected end of input",
            self.cur.pos,
            expected=(op,),
        )

    def parse(self) -> Expr:
        node = self.expr()
        if self.cur.kind != "end":
            raise ExprParseError(f"trailing input {self.cur.text!r}", self.cur.pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        tok = self.cur
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            # 'log' is a keyword only when a call follows; otherwise a field.
            if tok.text == "log" and self.cur.kind == "op" and self.cur.text == "(":
                self.advance()
                inner = self.expr()
                self.expect_op(")")
                return Log(inner)
            return FieldRef(tok.text)
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return Neg(self.factor())
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            inner = self.expr()
            self.expect_op(")")
            return inner
        raise ExprParseError(
            "unexpected end of input" if tok.kind == "end" else f"unexpected {tok.text!r}",
            tok.pos,
            expected=("NUMBER", "IDENT", "log(", "-", "("),
        )


def parse_expr(text: str) -> Expr:
    return _Parser(text).parse()


def expr_fields(expr: Expr) -> frozenset[str]:
    """Field names referenced anywhere in the expression."""
    if isinstance(expr, FieldRef):
        return frozenset({expr.name})
    if isinstance(expr, Num):
        return frozenset()
    if isinstance(expr, (Neg, Log)):
        return expr_fields(expr.operand)
    if isinstance(expr, BinOp):
        return expr_fields(expr.left) | expr_fields(expr.right)
    raise TypeError(f"not an expression: {expr!r}")


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def _render(expr: Expr, parent_prec: int) -> str:
    if isinstance(expr, Num):
        text = repr(expr.value)
        return text[:-2] if text.endswith(".0") else text
    if isinstance(expr, FieldRef):
        return expr.name
    if isinstance(expr, Log):
        return f"log({_render(expr.operand, 0)})"
    if isinstance(expr, Neg):
        inner = _render(expr.operand, 3)
        return f"-{inner}"
    if isinstance(expr, BinOp):
        prec = _PRECEDENCE[expr.op]
        # right side needs a bump: operators are left associative
        text = f"{_render(expr.left, prec)} {expr.op} {_render(expr.right, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"not an expression: {expr!r}")


def expr_to_text(expr: Expr) -> str:
    """Pretty-print with minimal parentheses; reparsing yields the same AST."""
    return _render(expr, 0)


def _as_number(value) -> float:
    # bool is an int subclass but is not a numeric field value here
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    return 0.0


def evaluate(expr: Expr, fields: Mapping[str, object],
             warnings: MutableMapping[str, int] | None = None) -> float:
    """Evaluate against one document's fields under the totalization rules."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, FieldRef):
        return _as_number(fields.get(expr.name))
    if isinstance(expr, Neg):
        return -evaluate(expr.operand, fields, warnings)
    if isinstance(expr, Log):
        x = evaluate(expr.operand, fields, warnings)
        return math.log(x) if x > 0 else 0.0
    if isinstance(expr, BinOp):
        left = evaluate(expr.left, fields, warnings)
        right = evaluate(expr.right, fields, warnings)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if right == 0.0:
            if warnings is not None:
                warnings["division_by_zero"] = warnings.get("division_by_zero", 0) + 1
            return 0.0
        return left / right
    raise TypeError(f"not an expression: {expr!r}")


def evaluate_columns(expr: Expr, columns: Mapping[str, np.ndarray], n: int,
                     warnings: MutableMapping[str, int] | None = None) -> np.ndarray:
    """Vectorized evaluation over column arrays of length *n*.

    Missing columns read as zeros; the totalization rules match the scalar
    evaluator exactly, including the per-element division-by-zero count.
    """
    if isinstance(expr, Num):
        return np.full(n, expr.value, dtype=np.float64)
    if isinstance(expr, FieldRef):
        col = columns.get(expr.name)
        if col is None:
            return np.zeros(n, dtype=np.float64)
        return col
    if isinstance(expr, Neg):
        return -evaluate_columns(expr.operand, columns, n, warnings)
    if isinstance(expr, Log):
        x = evaluate_columns(expr.operand, columns, n, warnings)
        out = np.zeros(n, dtype=np.float64)
        np.log(x, out=out, where=x > 0)
        return out
    if isinstance(expr, BinOp):
        left = evaluate_columns(expr.left, columns, n, warnings)
        right = evaluate_columns(expr.right, columns, n, warnings)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        zeros = right == 0.0
        count = int(np.count_nonzero(zeros))
        if count and warnings is not None:
            warnings["division_by_zero"] = warnings.get("division_by_zero", 0) + count
        out = np.zeros(n, dtype=np.float64)
        np.divide(left, right, out=out, where=~zeros)
        return out
    raise TypeError(f"not an expression: {expr!r}")
