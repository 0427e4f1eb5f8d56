"""Scalar expression DAG with structural sharing.

Nodes are interned: building the same operation on the same children twice
returns the identical object, so common subexpressions are shared for free and
``is`` is structural equality.  Light algebraic simplification (constant
folding, additive/multiplicative identities) happens at construction.
"""

from __future__ import annotations

import math
import numbers
import weakref
from typing import Iterable, Sequence

__all__ = [
    "Expr",
    "VarBlock",
    "ParamBlock",
    "NonDifferentiablePoint",
    "UndeclaredVariable",
    "DimensionMismatch",
    "as_expr",
    "const",
    "add",
    "mul",
    "div",
    "power",
    "exp",
    "log",
    "sin",
    "cos",
    "sqrt",
    "softplus",
    "sigmoid",
    "sum_",
    "dot",
    "sq_norm",
    "postorder",
    "evaluate",
    "is_number",
]


class NonDifferentiablePoint(ArithmeticError):
    """An expression was evaluated outside its smooth domain (e.g. log of a non-positive)."""


class UndeclaredVariable(KeyError):
    """An expression references a variable that was not declared as an input."""


class DimensionMismatch(ValueError):
    pass


LEAF_OPS = ("const", "var", "param")
UNARY_OPS = ("exp", "log", "sin", "cos", "sqrt", "softplus", "sigmoid")

_TABLE: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


def is_number(a) -> bool:
    return isinstance(a, numbers.Real) and not isinstance(a, bool)


class Expr:
    """A node in the expression DAG.  Build with operators and the module helpers."""

    __slots__ = ("op", "args", "data", "__weakref__")

    def __init__(self, op, args, data):
        self.op = op
        self.args = args
        self.data = data

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(-1.0, other))

    def __rsub__(self, other):
        return add(other, mul(-1.0, self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(-1.0, self)

    def __pos__(self):
        return self

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        if self.op == "const":
            return repr(self.data)
        if self.op in ("var", "param"):
            return f"{self.data[0]}[{self.data[1]}]"
        if self.op == "pow":
            return f"({self.args[0]!r})**{self.data}"
        if self.op == "add":
            return "(" + " + ".join(repr(a) for a in self.args) + ")"
        if self.op == "mul":
            return f"{self.args[0]!r}*{self.args[1]!r}"
        if self.op == "div":
            return f"{self.args[0]!r}/{self.args[1]!r}"
        return f"{self.op}({self.args[0]!r})"

    def __bool__(self):
        raise TypeError("truth value of an Expr is undefined")

    @property
    def is_const(self) -> bool:
        return self.op == "const"


def _node(op, args, data=None) -> Expr:
    key = (op, tuple(id(a) for a in args), data)
    node = _TABLE.get(key)
    if node is None:
        node = Expr(op, tuple(args), data)
        _TABLE[key] = node
    return node


def const(value) -> Expr:
    v = float(value)
    if v == 0.0:
        v = 0.0  # fold -0.0
    return _node("const", (), v)


ZERO = const(0.0)
ONE = const(1.0)


def as_expr(a) -> Expr:
    if isinstance(a, Expr):
        return a
    if is_number(a):
        return const(a)
    raise TypeError(f"cannot convert {type(a).__name__} to Expr")


class VarBlock:
    """A named block of scalar decision variables, ``block[k]`` is an :class:`Expr`."""

    kind = "var"

    def __init__(self, name: str, size: int):
        if size < 0:
            raise DimensionMismatch(f"block {name!r} has negative size")
        self.name = name
        self.size = int(size)
        self._items = tuple(_node(self.kind, (), (name, k)) for k in range(self.size))

    def __len__(self):
        return self.size

    def __getitem__(self, k):
        return self._items[k]

    def __iter__(self):
        return iter(self._items)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, {self.size})"


class ParamBlock(VarBlock):
    """Like :class:`VarBlock` but never differentiated; values are supplied at evaluation."""

    kind = "param"


# construction with simplification --------------------------------------


def add(*terms) -> Expr:
    if len(terms) == 1 and not isinstance(terms[0], (Expr, numbers.Real)):
        terms = tuple(terms[0])
    acc = 0.0
    rest = []
    for t in terms:
        if is_number(t):
            acc += float(t)
            continue
        if t.op == "const":
            acc += t.data
        else:
            rest.append(t)
    if not rest:
        return const(acc)
    if acc != 0.0:
        rest.append(const(acc))
    if len(rest) == 1:
        return rest[0]
    return _node("add", rest)


def sum_(items: Iterable) -> Expr:
    return add(*list(items))


def mul(a, b) -> Expr:
    if is_number(a) and is_number(b):
        return const(float(a) * float(b))
    a = as_expr(a)
    b = as_expr(b)
    if a.op == "const":
        if b.op == "const":
            return const(a.data * b.data)
        if a.data == 0.0:
            return ZERO
        if a.data == 1.0:
            return b
        if b.op == "mul" and b.args[0].op == "const":
            return mul(a.data * b.args[0].data, b.args[1])
    elif b.op == "const":
        return mul(b, a)
    return _node("mul", (a, b))


def div(a, b) -> Expr:
    a = as_expr(a)
    b = as_expr(b)
    if b.op == "const":
        if b.data == 0.0:
            return _node("div", (a, b))
        return mul(1.0 / b.data, a)
    if a.op == "const" and a.data == 0.0:
        return ZERO
    return _node("div", (a, b))


def power(a, p) -> Expr:
    if not is_number(p):
        raise TypeError("only constant exponents are supported")
    p = float(p)
    if is_number(a):
        return math.pow(float(a), p)
    a = as_expr(a)
    if p == 0.0:
        return ONE
    if p == 1.0:
        return a
    if a.op == "const":
        try:
            return const(math.pow(a.data, p))
        except (ValueError, ZeroDivisionError, OverflowError):
            pass
    return _node("pow", (a,), p)


def _unary(op, fn):
    def build(a):
        if is_number(a):
            return fn(float(a))
        a = as_expr(a)
        if a.op == "const":
            try:
                return const(fn(a.data))
            except (ValueError, ArithmeticError):
                pass
        return _node(op, (a,))

    build.__name__ = op
    build.__doc__ = f"``{op}`` of an expression or a plain number."
    return build


def _softplus(v: float) -> float:
    if v > 0.0:
        return v + math.log1p(math.exp(-v))
    return math.log1p(math.exp(v))


def _sigmoid(v: float) -> float:
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def _exp(v: float) -> float:
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf


def _log(v: float) -> float:
    if v <= 0.0:
        raise NonDifferentiablePoint(f"log of non-positive value {v!r}")
    return math.log(v)


def _sqrt(v: float) -> float:
    if v < 0.0:
        raise NonDifferentiablePoint(f"sqrt of negative value {v!r}")
    return math.sqrt(v)


exp = _unary("exp", _exp)
log = _unary("log", _log)
sin = _unary("sin", math.sin)
cos = _unary("cos", math.cos)
sqrt = _unary("sqrt", _sqrt)
softplus = _unary("softplus", _softplus)
sigmoid = _unary("sigmoid", _sigmoid)

NUMERIC = {
    "exp": _exp,
    "log": _log,
    "sin": math.sin,
    "cos": math.cos,
    "sqrt": _sqrt,
    "softplus": _softplus,
    "sigmoid": _sigmoid,
}


def dot(a: Sequence, b: Sequence):
    if len(a) != len(b):
        raise DimensionMismatch(f"dot of lengths {len(a)} and {len(b)}")
    return add(*[mul(x, y) if not (is_number(x) and is_number(y)) else x * y for x, y in zip(a, b)])


def sq_norm(a: Sequence):
    return dot(a, a)


# traversal and interpretation --------------------------------------------


def postorder(roots: Iterable[Expr]) -> list[Expr]:
    """Every node reachable from ``roots``, children before parents, deterministic."""
    order: list[Expr] = []
    seen: set[int] = set()
    stack = [(r, False) for r in reversed(list(roots))]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in reversed(node.args):
            if id(child) not in seen:
                stack.append((child, False))
    return order


def evaluate(exprs, env) -> list[float]:
    """Reference interpreter.

    ``env`` maps a block name to a sequence of values (for both variable and
    parameter blocks).  Used as an oracle for the compiled evaluators.
    """
    single = isinstance(exprs, Expr)
    roots = [exprs] if single else [as_expr(e) for e in exprs]
    vals: dict[int, float] = {}
    for node in postorder(roots):
        op = node.op
        if op == "const":
            v = node.data
        elif op in ("var", "param"):
            name, k = node.data
            if name not in env:
                raise UndeclaredVariable(name)
            v = float(env[name][k])
        elif op == "add":
            v = math.fsum(vals[id(a)] for a in node.args)
        elif op == "mul":
            v = vals[id(node.args[0])] * vals[id(node.args[1])]
        elif op == "div":
            den = vals[id(node.args[1])]
            if den == 0.0:
                raise NonDifferentiablePoint("division by zero")
            v = vals[id(node.args[0])] / den
        elif op == "pow":
            base = vals[id(node.args[0])]
            try:
                v = math.pow(base, node.data)
            except ValueError as exc:
                raise NonDifferentiablePoint(str(exc)) from exc
            except OverflowError:
                v = math.inf
        else:
            v = NUMERIC[op](vals[id(node.args[0])])
        vals[id(node)] = v
    out = [vals[id(r)] for r in roots]
    return out[0] if single else out
