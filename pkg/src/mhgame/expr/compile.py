"""Compilation of expression DAGs into straight-line Python evaluators."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import core
from .core import (
    DimensionMismatch,
    Expr,
    NonDifferentiablePoint,
    ParamBlock,
    UndeclaredVariable,
    VarBlock,
    add,
    as_expr,
    mul,
    postorder,
)
from .diff import gradient, jacobian_entries

__all__ = ["CompiledFunction", "LagrangianHessian", "compile_function", "sparsity", "lagrangian_hessian"]

_counter = itertools.count()


def _pow(a, p):
    try:
        return math.pow(a, p)
    except OverflowError:
        return math.inf
    except ValueError as exc:
        raise NonDifferentiablePoint(f"pow({a!r}, {p!r})") from exc


_HELPERS = {
    "_exp": core._exp,
    "_log": core._log,
    "_sin": math.sin,
    "_cos": math.cos,
    "_sqrt": core._sqrt,
    "_softplus": core._softplus,
    "_sigmoid": core._sigmoid,
    "_pow": _pow,
    "inf": math.inf,
    "nan": math.nan,
}


def _const_src(v: float) -> str:
    if math.isfinite(v):
        return repr(v) if v >= 0 else f"({v!r})"
    return "inf" if v > 0 else ("(-inf)" if v < 0 else "nan")


def _generate(roots: Sequence[Expr], var_pos: dict, par_pos: dict, fname: str):
    names: dict[int, str] = {}
    lines = [f"def {fname}(x, p):"]
    tmp = 0
    for node in postorder(roots):
        op = node.op
        if op == "const":
            names[id(node)] = _const_src(node.data)
            continue
        if op == "var":
            names[id(node)] = f"x[{var_pos[node.data]}]"
            continue
        if op == "param":
            names[id(node)] = f"p[{par_pos[node.data]}]"
            continue
        args = [names[id(a)] for a in node.args]
        if op == "add":
            rhs = " + ".join(args)
        elif op == "mul":
            rhs = f"{args[0]} * {args[1]}"
        elif op == "div":
            rhs = f"{args[0]} / {args[1]}"
        elif op == "pow":
            e = node.data
            if e == 2.0:
                rhs = f"{args[0]} * {args[0]}"
            elif e == 3.0:
                rhs = f"{args[0]} * {args[0]} * {args[0]}"
            else:
                rhs = f"_pow({args[0]}, {e!r})"
        else:
            rhs = f"_{op}({args[0]})"
        name = f"t{tmp}"
        tmp += 1
        lines.append(f"    {name} = {rhs}")
        names[id(node)] = name
    lines.append("    return [" + ", ".join(names[id(r)] for r in roots) + "]")
    source = "\n".join(lines) + "\n"
    namespace = dict(_HELPERS)
    exec(compile(source, f"<mhgame-expr {fname}>", "exec"), namespace)
    return namespace[fname], tmp


class CompiledFunction:
    """Vector function ``y = f(x; p)`` with a fixed sparse Jacobian pattern.

    Parameters
    ----------
    outputs : sequence of Expr
        Output components.
    inputs : sequence of VarBlock
        Declared decision-variable blocks, concatenated in order to form ``x``.
    params : sequence of ParamBlock
        Declared parameter blocks, concatenated to form ``p``.
    jacobian_wrt : sequence of VarBlock, optional
        Blocks to differentiate with respect to (default: all inputs).  Jacobian
        columns index into ``x``.
    """

    def __init__(
        self,
        outputs,
        inputs: Sequence[VarBlock],
        params: Sequence[ParamBlock] = (),
        jacobian: bool = True,
        jacobian_wrt: Sequence[VarBlock] | None = None,
        name: str | None = None,
    ):
        if isinstance(outputs, Expr) or core.is_number(outputs):
            outputs = [outputs]
        self.outputs = [as_expr(o) for o in outputs]
        self.inputs = list(inputs)
        self.params = list(params)
        self.n_out = len(self.outputs)
        var_pos: dict = {}
        for block in self.inputs:
            for k, v in enumerate(block):
                var_pos[v.data] = len(var_pos)
        par_pos: dict = {}
        for block in self.params:
            for k, v in enumerate(block):
                par_pos[v.data] = len(par_pos)
        self.n_in = len(var_pos)
        self.n_param = len(par_pos)
        for node in postorder(self.outputs):
            if node.op == "var" and node.data not in var_pos:
                raise UndeclaredVariable(f"variable {node!r} is not a declared input")
            if node.op == "param" and node.data not in par_pos:
                raise UndeclaredVariable(f"parameter {node!r} is not declared")
        fname = name or f"f{next(_counter)}"
        self._value, self.num_ops = _generate(self.outputs, var_pos, par_pos, fname + "_value")
        self.has_jacobian = jacobian
        if jacobian:
            wrt_blocks = self.inputs if jacobian_wrt is None else list(jacobian_wrt)
            wrt = [v for block in wrt_blocks for v in block]
            entries = jacobian_entries(self.outputs, wrt)
            self.rows = np.array([r for r, _, _ in entries], dtype=np.intp)
            self.cols = np.array([var_pos[wrt[c].data] for _, c, _ in entries], dtype=np.intp)
            jac_exprs = [e for _, _, e in entries]
            self._both, _ = _generate(self.outputs + jac_exprs, var_pos, par_pos, fname + "_both")
        else:
            self.rows = np.zeros(0, dtype=np.intp)
            self.cols = np.zeros(0, dtype=np.intp)

    # evaluation ---------------------------------------------------------
    def _call(self, kernel, x, p):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_in,):
            raise DimensionMismatch(f"expected input of length {self.n_in}, got shape {x.shape}")
        pl = [] if p is None else np.asarray(p, dtype=float).tolist()
        if len(pl) != self.n_param:
            raise DimensionMismatch(f"expected {self.n_param} parameters, got {len(pl)}")
        try:
            return kernel(x.tolist(), pl)
        except (ZeroDivisionError, ValueError) as exc:
            raise NonDifferentiablePoint(str(exc)) from exc

    def value(self, x, p=None) -> np.ndarray:
        return np.array(self._call(self._value, x, p), dtype=float)

    def __call__(self, x, p=None) -> np.ndarray:
        return self.value(x, p)

    def value_and_jacobian_values(self, x, p=None) -> tuple[np.ndarray, np.ndarray]:
        """Output values and Jacobian nonzeros ordered like ``(self.rows, self.cols)``."""
        if not self.has_jacobian:
            raise RuntimeError("compiled without a Jacobian")
        out = np.array(self._call(self._both, x, p), dtype=float)
        return out[: self.n_out], out[self.n_out:]

    def jacobian(self, x, p=None, dense: bool = False):
        _, vals = self.value_and_jacobian_values(x, p)
        return self.assemble_jacobian(vals, dense=dense)

    def assemble_jacobian(self, vals, dense: bool = False):
        shape = (self.n_out, self.n_in)
        if dense:
            out = np.zeros(shape)
            np.add.at(out, (self.rows, self.cols), vals)
            return out
        return sp.csr_matrix((vals, (self.rows, self.cols)), shape=shape)

    @property
    def nnz(self) -> int:
        return len(self.rows)


def compile_function(outputs, inputs, params=(), **kwargs) -> CompiledFunction:
    return CompiledFunction(outputs, inputs, params, **kwargs)


def sparsity(f: CompiledFunction) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the Jacobian's structural nonzeros."""
    return f.rows.copy(), f.cols.copy()


class LagrangianHessian:
    """Evaluator of ``hess_x (f(x) - lam^T g(x))``."""

    def __init__(self, cost, constraints, x: VarBlock, params: Sequence[ParamBlock] = ()):
        constraints = [as_expr(c) for c in constraints]
        self.num_constraints = len(constraints)
        self.multipliers = VarBlock(f"__lam{next(_counter)}", self.num_constraints)
        lag = add(as_expr(cost), *[mul(-1.0, mul(l, g)) for l, g in zip(self.multipliers, constraints)])
        self.gradient = CompiledFunction(
            gradient(lag, list(x)), [x, self.multipliers], params, jacobian_wrt=[x]
        )
        self.n = x.size

    def __call__(self, x, multipliers, p=None, dense: bool = False):
        multipliers = np.asarray(multipliers, dtype=float)
        if multipliers.shape != (self.num_constraints,):
            raise DimensionMismatch(
                f"expected {self.num_constraints} multipliers, got shape {multipliers.shape}"
            )
        z = np.concatenate([np.asarray(x, dtype=float), multipliers])
        _, vals = self.gradient.value_and_jacobian_values(z, p)
        shape = (self.n, self.n)
        if dense:
            out = np.zeros(shape)
            np.add.at(out, (self.gradient.rows, self.gradient.cols), vals)
            return out
        return sp.csr_matrix((vals, (self.gradient.rows, self.gradient.cols)), shape=shape)


def lagrangian_hessian(cost, constraints, x: VarBlock, params=()) -> LagrangianHessian:
    return LagrangianHessian(cost, constraints, x, params)
