"""Expression graphs with exact first and second derivatives."""

from .compile import CompiledFunction, LagrangianHessian, compile_function, lagrangian_hessian, sparsity
from .core import (
    DimensionMismatch,
    Expr,
    NonDifferentiablePoint,
    ParamBlock,
    UndeclaredVariable,
    VarBlock,
    add,
    as_expr,
    const,
    cos,
    div,
    dot,
    evaluate,
    exp,
    log,
    mul,
    postorder,
    power,
    sigmoid,
    sin,
    softplus,
    sq_norm,
    sqrt,
    sum_,
)
from .diff import dependencies, differentiate, gradient, hessian_entries, jacobian_entries

__all__ = [
    "CompiledFunction",
    "LagrangianHessian",
    "compile_function",
    "lagrangian_hessian",
    "sparsity",
    "DimensionMismatch",
    "Expr",
    "NonDifferentiablePoint",
    "ParamBlock",
    "UndeclaredVariable",
    "VarBlock",
    "add",
    "as_expr",
    "const",
    "cos",
    "div",
    "dot",
    "evaluate",
    "exp",
    "log",
    "mul",
    "postorder",
    "power",
    "sigmoid",
    "sin",
    "softplus",
    "sq_norm",
    "sqrt",
    "sum_",
    "dependencies",
    "differentiate",
    "gradient",
    "hessian_entries",
    "jacobian_entries",
]
