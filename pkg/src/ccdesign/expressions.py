"""Expression grammar, AST and compiler for scalar functions of one variable.

The grammar covers exactly what the model templates need: the variable,
named real parameters, decimal literals, ``+ - * / ^``, unary minus, ``exp``
and ``log``, and parentheses.  Powers may carry any parameter expression as
exponent but the exponent must not depend on the variable (it folds to a
real number once parameters are bound).

EBNF::

    expr    = term , { ("+" | "-") , term } ;
    term    = factor , { ("*" | "/") , factor } ;
    factor  = "-" , factor | power ;
    power   = atom , [ "^" , factor ] ;
    atom    = number | ident | ident "(" expr ")" | "(" expr ")" ;
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .errors import ExpressionError
from . import kernel


@dataclass(frozen=True)
class Expr:
    """Base AST node.  Nodes are immutable; equality is structural."""

    def __add__(self, other):
        return Add(self, _as_expr(other))

    def __sub__(self, other):
        return Sub(self, _as_expr(other))

    def __mul__(self, other):
        return Mul(self, _as_expr(other))

    def __truediv__(self, other):
        return Div(self, _as_expr(other))

    def __pow__(self, other):
        return Pow(self, _as_expr(other))

    def __neg__(self):
        return Neg(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Var(Expr):
    pass


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr


@dataclass(frozen=True)
class Log(Expr):
    arg: Expr


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


_FUNCTIONS = {"exp": Exp, "log": Log}


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float)):
        return Const(float(v))
    raise TypeError(f"cannot coerce {v!r} to Expr")


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_OPS = set("+-*/^()")


def _tokenize(source: str):
    tokens = []  # (kind, text, position)
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _OPS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                float(text)
            except ValueError:
                raise ExpressionError(f"malformed number {text!r}", i, source) from None
            tokens.append(("number", text, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i))
            i = j
            continue
        raise ExpressionError(f"unexpected character {ch!r}", i, source)
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str, params: frozenset[str], var: str):
        self.source = source
        self.params = params
        self.var = var
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message, tok):
        raise ExpressionError(message, tok[2], self.source)

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "eof":
            self.fail(f"unexpected {tok[1]!r}", tok)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.next()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.next()[1]
            rhs = self.factor()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def factor(self) -> Expr:
        tok = self.peek()
        if tok[:2] == ("op", "-"):
            self.next()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.next()
            exponent = self.factor()
            return Pow(base, exponent)
        return base

    def atom(self) -> Expr:
        tok = self.next()
        kind, text, pos = tok
        if kind == "number":
            return Const(float(text))
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if text not in _FUNCTIONS:
                    self.fail(f"unknown function {text!r}", tok)
                self.next()
                arg = self.expr()
                closing = self.next()
                if closing[:2] != ("op", ")"):
                    self.fail("expected ')'", closing)
                return _FUNCTIONS[text](arg)
            if text == self.var:
                return Var()
            if text in self.params:
                return Param(text)
            self.fail(f"unknown identifier {text!r}", tok)
        if kind == "op" and text == "(":
            e = self.expr()
            closing = self.next()
            if closing[:2] != ("op", ")"):
                self.fail("expected ')'", closing)
            return e
        self.fail(f"unexpected {text!r}" if text else "unexpected end of input", tok)


def parse(source: str, params=(), var: str = "c") -> Expr:
    """Parse expression text into an AST.

    ``params`` is the set of allowed parameter names; any other identifier
    (besides ``var``, ``exp`` and ``log``) is an error.  Exponents of ``^``
    must not depend on the variable.
    """
    expr = _Parser(source, frozenset(params), var).parse()
    _check_exponents(expr, source)
    return expr


def _check_exponents(expr: Expr, source: str | None = None) -> None:
    for node in walk(expr):
        if isinstance(node, Pow) and uses_var(node.exponent):
            raise ExpressionError(
                "power exponent must not depend on the variable", None, source
            )


def walk(expr: Expr):
    yield expr
    for child in _children(expr):
        yield from walk(child)


def _children(expr: Expr):
    if isinstance(expr, (Add, Sub, Mul, Div)):
        return (expr.left, expr.right)
    if isinstance(expr, Pow):
        return (expr.base, expr.exponent)
    if isinstance(expr, (Exp, Log, Neg)):
        return (expr.arg,)
    return ()


def uses_var(expr: Expr) -> bool:
    return any(isinstance(node, Var) for node in walk(expr))


def free_params(expr: Expr) -> frozenset[str]:
    return frozenset(node.name for node in walk(expr) if isinstance(node, Param))


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(expr: Expr) -> int:
    if isinstance(expr, (Add, Sub)):
        return _PREC_ADD
    if isinstance(expr, (Mul, Div)):
        return _PREC_MUL
    if isinstance(expr, Neg):
        return _PREC_NEG
    if isinstance(expr, Pow):
        return _PREC_POW
    return _PREC_ATOM


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_source(expr: Expr, var: str = "c") -> str:
    """Render an AST back to grammar text; ``parse(to_source(e)) == e``."""

    def wrap(child: Expr, minimum: int) -> str:
        text = rec(child)
        return f"({text})" if _prec(child) < minimum else text

    def rec(e: Expr) -> str:
        if isinstance(e, Const):
            return _fmt_number(e.value)
        if isinstance(e, Param):
            return e.name
        if isinstance(e, Var):
            return var
        if isinstance(e, Add):
            return f"{wrap(e.left, _PREC_ADD)} + {wrap(e.right, _PREC_ADD)}"
        if isinstance(e, Sub):
            return f"{wrap(e.left, _PREC_ADD)} - {wrap(e.right, _PREC_ADD + 1)}"
        if isinstance(e, Mul):
            return f"{wrap(e.left, _PREC_MUL)}*{wrap(e.right, _PREC_MUL)}"
        if isinstance(e, Div):
            return f"{wrap(e.left, _PREC_MUL)}/{wrap(e.right, _PREC_MUL + 1)}"
        if isinstance(e, Neg):
            return f"-{wrap(e.arg, _PREC_NEG)}"
        if isinstance(e, Pow):
            return f"{wrap(e.base, _PREC_ATOM)}^{wrap(e.exponent, _PREC_POW)}"
        if isinstance(e, Exp):
            return f"exp({rec(e.arg)})"
        if isinstance(e, Log):
            return f"log({rec(e.arg)})"
        raise TypeError(f"unknown node {e!r}")

    return rec(expr)


def evaluate_with(expr: Expr, var_value, env, *, exp_fn, log_fn, pow_fn):
    """Evaluate an AST with caller-supplied scalar arithmetic.

    Used for arbitrary-precision evaluation (e.g. mpmath) where the float64
    kernel is not enough; ``var_value`` and the ``env`` values should already
    be of the caller's numeric type.
    """

    def rec(e: Expr):
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Param):
            return env[e.name]
        if isinstance(e, Var):
            return var_value
        if isinstance(e, Add):
            return rec(e.left) + rec(e.right)
        if isinstance(e, Sub):
            return rec(e.left) - rec(e.right)
        if isinstance(e, Mul):
            return rec(e.left) * rec(e.right)
        if isinstance(e, Div):
            return rec(e.left) / rec(e.right)
        if isinstance(e, Neg):
            return -rec(e.arg)
        if isinstance(e, Exp):
            return exp_fn(rec(e.arg))
        if isinstance(e, Log):
            return log_fn(rec(e.arg))
        if isinstance(e, Pow):
            base = rec(e.base)
            exponent = rec(e.exponent)
            as_float = float(exponent)
            if as_float == int(as_float):
                return pow_fn(base, int(as_float))
            return pow_fn(base, exponent)
        raise TypeError(f"unknown node {e!r}")

    return rec(expr)


# ---------------------------------------------------------------------------
# Compilation to a postfix tape (consumed by the jet kernel)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def compile_tape(expr: Expr, param_names: tuple[str, ...]) -> kernel.Tape:
    """Flatten an AST into a postfix tape over the given parameter ordering."""
    _check_exponents(expr)
    code: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    index = {name: i for i, name in enumerate(param_names)}

    def emit(op: int, arg: int = 0):
        code.append(op)
        args.append(arg)

    def rec(e: Expr):
        if isinstance(e, Const):
            consts.append(e.value)
            emit(kernel.OP_CONST, len(consts) - 1)
        elif isinstance(e, Param):
            if e.name not in index:
                raise ExpressionError(f"unbound parameter {e.name!r}")
            emit(kernel.OP_PARAM, index[e.name])
        elif isinstance(e, Var):
            emit(kernel.OP_VAR)
        elif isinstance(e, Add):
            rec(e.left), rec(e.right), emit(kernel.OP_ADD)
        elif isinstance(e, Sub):
            rec(e.left), rec(e.right), emit(kernel.OP_SUB)
        elif isinstance(e, Mul):
            rec(e.left), rec(e.right), emit(kernel.OP_MUL)
        elif isinstance(e, Div):
            rec(e.left), rec(e.right), emit(kernel.OP_DIV)
        elif isinstance(e, Pow):
            rec(e.base), rec(e.exponent), emit(kernel.OP_POW)
        elif isinstance(e, Exp):
            rec(e.arg), emit(kernel.OP_EXP)
        elif isinstance(e, Log):
            rec(e.arg), emit(kernel.OP_LOG)
        elif isinstance(e, Neg):
            rec(e.arg), emit(kernel.OP_NEG)
        else:
            raise TypeError(f"unknown node {e!r}")

    rec(expr)
    depth = max_depth = 0
    for op in code:
        depth += kernel.STACK_EFFECT[op]
        max_depth = max(max_depth, depth)
    return kernel.Tape(
        code=tuple(code),
        args=tuple(args),
        consts=tuple(consts),
        param_names=param_names,
        max_depth=max_depth,
        source=to_source(expr),
    )
