"""Symbolic reverse-mode differentiation of expression DAGs.

Derivatives are themselves expressions, so second derivatives come from
differentiating twice.
"""

from __future__ import annotations

import weakref
from typing import Sequence

from .core import (
    ONE,
    ZERO,
    DimensionMismatch,
    Expr,
    add,
    as_expr,
    cos,
    div,
    mul,
    postorder,
    power,
    sigmoid,
    sin,
)

__all__ = ["dependencies", "gradient", "differentiate", "jacobian_entries", "hessian_entries"]

_DEPS: "weakref.WeakKeyDictionary[Expr, frozenset]" = weakref.WeakKeyDictionary()
_EMPTY: frozenset = frozenset()


def dependencies(e: Expr) -> frozenset:
    """Keys ``(block, index)`` of the decision variables ``e`` depends on."""
    cached = _DEPS.get(e)
    if cached is not None:
        return cached
    for node in postorder([e]):
        if node in _DEPS:
            continue
        if node.op == "var":
            d = frozenset((node.data,))
        elif not node.args:
            d = _EMPTY
        elif len(node.args) == 1:
            d = _DEPS[node.args[0]]
        else:
            d = frozenset().union(*(_DEPS[a] for a in node.args))
        _DEPS[node] = d
    return _DEPS[e]


def _local_partials(node: Expr):
    op = node.op
    a = node.args
    if op == "add":
        return [(c, ONE) for c in a]
    if op == "mul":
        return [(a[0], a[1]), (a[1], a[0])]
    if op == "div":
        return [(a[0], div(ONE, a[1])), (a[1], mul(-1.0, div(node, a[1])))]
    if op == "pow":
        return [(a[0], mul(node.data, power(a[0], node.data - 1.0)))]
    if op == "exp":
        return [(a[0], node)]
    if op == "log":
        return [(a[0], div(ONE, a[0]))]
    if op == "sin":
        return [(a[0], cos(a[0]))]
    if op == "cos":
        return [(a[0], mul(-1.0, sin(a[0])))]
    if op == "sqrt":
        return [(a[0], div(0.5, node))]
    if op == "softplus":
        return [(a[0], sigmoid(a[0]))]
    if op == "sigmoid":
        return [(a[0], mul(node, add(ONE, mul(-1.0, node))))]
    raise ValueError(f"no derivative rule for {op!r}")


def gradient(e, wrt: Sequence[Expr]) -> list[Expr]:
    """Partial derivatives of scalar ``e`` with respect to each variable in ``wrt``."""
    e = as_expr(e)
    wrt = list(wrt)
    for v in wrt:
        if v.op != "var":
            raise TypeError(f"can only differentiate with respect to variables, got {v!r}")
    keys = {v.data for v in wrt}
    if dependencies(e).isdisjoint(keys):
        return [ZERO] * len(wrt)
    order = postorder([e])
    relevant = {id(n) for n in order if not _DEPS[n].isdisjoint(keys)}
    adjoint: dict[int, list[Expr]] = {id(e): [ONE]}
    result: dict[tuple, Expr] = {}
    for node in reversed(order):
        terms = adjoint.pop(id(node), None)
        if terms is None:
            continue
        bar = add(*terms)
        if node.op == "var":
            result[node.data] = bar
            continue
        for child, local in _local_partials(node):
            if id(child) in relevant:
                adjoint.setdefault(id(child), []).append(mul(bar, local))
    return [result.get(v.data, ZERO) for v in wrt]


def differentiate(e, wrt: Sequence[Expr]):
    """Gradient of a scalar expression, or Jacobian rows of a sequence of expressions."""
    if isinstance(e, Expr) or not hasattr(e, "__iter__"):
        return gradient(e, wrt)
    return [gradient(row, wrt) for row in e]


def jacobian_entries(outputs: Sequence, wrt: Sequence[Expr]) -> list[tuple[int, int, Expr]]:
    """Structurally nonzero ``(row, col, d output[row] / d wrt[col])`` triples."""
    wrt = list(wrt)
    col_of = {}
    for c, v in enumerate(wrt):
        if v.data in col_of:
            raise DimensionMismatch(f"variable {v!r} listed twice")
        col_of[v.data] = c
    entries = []
    for r, out in enumerate(outputs):
        out = as_expr(out)
        cols = sorted(col_of[k] for k in dependencies(out) if k in col_of)
        if not cols:
            continue
        grads = gradient(out, [wrt[c] for c in cols])
        for c, g in zip(cols, grads):
            if g is not ZERO:
                entries.append((r, c, g))
    return entries


def hessian_entries(e, wrt: Sequence[Expr]) -> list[tuple[int, int, Expr]]:
    """Structurally nonzero second derivatives of a scalar expression."""
    return jacobian_entries(gradient(e, wrt), wrt)
