"""Sequential reference evaluator.

Executes a kernel's loop nest one point at a time, ignoring iname tags.
Statements are linearized in program order: consecutive statements sharing
the same outermost not-yet-entered iname share one loop. This matches the
parallel semantics for kernels without local memory or cross-work-item
communication, which is what transformation-soundness tests need.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from perfseer.affine import AffineExpr
from perfseer.errors import IRError
from perfseer.ir import BinOp, Const, Expr, Kernel, Neg, Reduce, Statement, Var

_NP_DTYPES = {"float32": np.float32, "float64": np.float64, "int32": np.int32}


def _int(value) -> int:
    if value.denominator != 1:
        raise IRError(f"non-integral index value {value}")
    return int(value)


class _Machine:
    def __init__(self, k: Kernel, bindings: Mapping[str, int], arrays: dict[str, np.ndarray]):
        self.k = k
        self.env: dict[str, int] = dict(bindings)
        self.arrays = arrays
        self.scalars: dict[str, float] = {}

    def index(self, var: Var) -> tuple[int, ...]:
        idx = tuple(_int(i.evaluate(self.env)) for i in var.indices)
        shape = self.arrays[var.name].shape
        if any(not 0 <= i < extent for i, extent in zip(idx, shape)):
            raise IRError(f"access {var.name}{list(idx)} is outside the array's shape {shape}")
        return idx

    def load(self, var: Var):
        if var.indices:
            return self.arrays[var.name][self.index(var)]
        if var.name in self.arrays:
            return self.arrays[var.name][()]
        return self.scalars.get(var.name, 0)

    def store(self, var: Var, value) -> None:
        if var.indices:
            self.arrays[var.name][self.index(var)] = value
        elif var.name in self.arrays:
            self.arrays[var.name][()] = value
        else:
            dtype = _NP_DTYPES[self.k.arg(var.name).dtype]
            self.scalars[var.name] = dtype(value)

    def eval(self, e: Expr):
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Var):
            return self.load(e)
        if isinstance(e, Neg):
            return -self.eval(e.operand)
        if isinstance(e, BinOp):
            a, b = self.eval(e.left), self.eval(e.right)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            return a / b
        if isinstance(e, Reduce):
            return self.reduce(self.k.domain.ordered(e.inames), e.body)
        raise IRError(f"cannot evaluate {e!r}")

    def reduce(self, inames: tuple[str, ...], body: Expr):
        if not inames:
            return self.eval(body)
        name, rest = inames[0], inames[1:]
        total = 0
        for value in self.range(name):
            self.env[name] = value
            total = total + self.reduce(rest, body)
        self.env.pop(name, None)
        return total

    def range(self, iname: str) -> range:
        lo, hi = self.k.domain.bound(iname)
        return range(_int(lo.evaluate(self.env)), _int(hi.evaluate(self.env)) + 1)

    def run(self, stmts: list[Statement], fixed: frozenset[str]) -> None:
        order = self.k.domain.inames
        pos = 0
        while pos < len(stmts):
            s = stmts[pos]
            missing = [i for i in order if i in s.within and i not in fixed]
            if not missing:
                self.execute(s)
                pos += 1
                continue
            head = missing[0]
            group = [s]
            pos += 1
            while pos < len(stmts):
                nxt = [i for i in order if i in stmts[pos].within and i not in fixed]
                if not nxt or nxt[0] != head:
                    break
                group.append(stmts[pos])
                pos += 1
            for value in self.range(head):
                self.env[head] = value
                self.run(group, fixed | {head})
            self.env.pop(head, None)

    def execute(self, s: Statement) -> None:
        if s.is_barrier:
            return
        if any(p.evaluate(self.env) < 0 for p in s.predicates):
            return
        self.store(s.lhs, self.eval(s.rhs))


def run_kernel(k: Kernel, bindings: Mapping[str, int],
               inputs: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Execute ``k`` sequentially and return every global array afterwards.

    Arrays absent from ``inputs`` start zero-filled. Inputs are copied.
    """
    k.check_bindings(bindings)
    inputs = inputs or {}
    arrays: dict[str, np.ndarray] = {}
    for a in k.args:
        if a.address_space == "private" and not a.shape:
            continue
        shape = tuple(_int(AffineExpr.evaluate(e, bindings)) for e in a.shape)
        dtype = _NP_DTYPES[a.dtype]
        if a.name in inputs:
            arr = np.array(inputs[a.name], dtype=dtype, copy=True)
            if arr.shape != shape:
                raise IRError(f"input '{a.name}' has shape {arr.shape}, expected {shape}")
        else:
            arr = np.zeros(shape, dtype=dtype)
        arrays[a.name] = arr
    _Machine(k, bindings, arrays).run(list(k.statements), frozenset())
    return {a.name: arrays[a.name] for a in k.args if a.address_space == "global"}
