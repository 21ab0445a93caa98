"""Scalar reverse-mode automatic differentiation on an explicit tape.

Every primitive appends one node to the tape holding its operation kind, the
indices of its parents and the local partial derivatives with respect to those
parents. Because nodes are only ever appended, parents always have smaller
indices than their children and a reverse sweep over the tape is a valid
topological order.

This engine is used to cross-check the closed-form generator derivatives and
small gradient computations. Bulk training runs on torch.

Example
-------
>>> tape = Tape()
>>> x, y = tape.var(3.0), tape.var(4.0)
>>> grads = backward(x * y)
>>> grads[x.index], grads[y.index]
(4.0, 3.0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

__all__ = [
    "AutodiffError",
    "Tape",
    "Var",
    "backward",
    "grad",
    "second_derivative",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "softplus",
    "maximum",
]


class AutodiffError(ArithmeticError):
    """Raised on non-finite values or unsupported operations."""


@dataclass
class Tape:
    ops: list[str] = field(default_factory=list)
    parents: list[tuple[int, ...]] = field(default_factory=list)
    partials: list[tuple[float, ...]] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    # extra per-node data needed to rebuild partials symbolically (e.g. pow exponent)
    consts: list[float | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.values)

    def var(self, value: float) -> "Var":
        """Record an independent input."""
        return self._push("input", (), (), float(value))

    def const(self, value: float) -> "Var":
        return self._push("const", (), (), float(value))

    def _push(self, op, parents, partials, value, const=None) -> "Var":
        if not math.isfinite(value):
            raise AutodiffError(f"{op}: non-finite value {value!r}")
        for p in partials:
            if not math.isfinite(p):
                raise AutodiffError(f"{op}: non-finite local derivative {p!r}")
        idx = len(self.values)
        for p in parents:
            assert p < idx
        self.ops.append(op)
        self.parents.append(tuple(parents))
        self.partials.append(tuple(partials))
        self.values.append(value)
        self.consts.append(const)
        return Var(self, idx)


class Var:
    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape.values[self.index]

    def __repr__(self) -> str:
        return f"Var({self.value!r}, index={self.index})"

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise AutodiffError("operands live on different tapes")
            return other
        if isinstance(other, (int, float)):
            return self.tape.const(float(other))
        return NotImplemented

    def __add__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return self.tape._push("add", (self.index, o.index), (1.0, 1.0), self.value + o.value)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return self.tape._push("sub", (self.index, o.index), (1.0, -1.0), self.value - o.value)

    def __rsub__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return o - self

    def __mul__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        a, b = self.value, o.value
        return self.tape._push("mul", (self.index, o.index), (b, a), a * b)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        a, b = self.value, o.value
        if b == 0.0:
            raise AutodiffError("div: division by zero")
        return self.tape._push("div", (self.index, o.index), (1.0 / b, -a / (b * b)), a / b)

    def __rtruediv__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return o / self

    def __neg__(self):
        return self.tape._push("neg", (self.index,), (-1.0,), -self.value)

    def __pow__(self, c):
        if isinstance(c, Var):
            return exp(c * log(self))
        c = float(c)
        a = self.value
        try:
            val = a**c
            d = c * a ** (c - 1.0) if c != 0.0 else 0.0
        except (ZeroDivisionError, OverflowError) as err:
            raise AutodiffError(f"pow: {err}") from None
        if isinstance(val, complex):
            raise AutodiffError(f"pow: negative base {a!r} with non-integer exponent {c!r}")
        return self.tape._push("pow", (self.index,), (d,), val, const=c)

    def __float__(self) -> float:
        return self.value


def _safe(fn, name, *args):
    try:
        return fn(*args)
    except (ValueError, OverflowError) as err:
        raise AutodiffError(f"{name}: {err}") from None


def exp(a: Var) -> Var:
    y = _safe(math.exp, "exp", a.value)
    return a.tape._push("exp", (a.index,), (y,), y)


def log(a: Var) -> Var:
    if a.value <= 0.0:
        raise AutodiffError(f"log: argument {a.value!r} not positive")
    return a.tape._push("log", (a.index,), (1.0 / a.value,), math.log(a.value))


def tanh(a: Var) -> Var:
    y = math.tanh(a.value)
    return a.tape._push("tanh", (a.index,), (1.0 - y * y,), y)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def sigmoid(a: Var) -> Var:
    y = _sigmoid(a.value)
    return a.tape._push("sigmoid", (a.index,), (y * (1.0 - y),), y)


def softplus(a: Var) -> Var:
    z = a.value
    y = max(z, 0.0) + math.log1p(math.exp(-abs(z)))
    return a.tape._push("softplus", (a.index,), (_sigmoid(z),), y)


def maximum(a: Var, b: Var | float) -> Var:
    b = a._lift(b)
    # subgradient convention: ties route the gradient to the first argument
    if a.value >= b.value:
        return a.tape._push("max", (a.index, b.index), (1.0, 0.0), a.value)
    return a.tape._push("max", (a.index, b.index), (0.0, 1.0), b.value)


def _symbolic_partials(tape: Tape, i: int) -> tuple:
    """Local partials of node ``i`` rebuilt as tape variables (for create_graph)."""
    op = tape.ops[i]
    ps = [Var(tape, p) for p in tape.parents[i]]
    out = Var(tape, i)
    if op in ("add", "sub", "neg", "max"):
        return tape.partials[i]  # constants
    if op == "mul":
        return (ps[1], ps[0])
    if op == "div":
        a, b = ps
        return (1.0 / b, -a / (b * b))
    if op == "exp":
        return (out,)
    if op == "log":
        return (1.0 / ps[0],)
    if op == "pow":
        c = tape.consts[i]
        return (c * ps[0] ** (c - 1.0) if c != 0.0 else 0.0,)
    if op == "tanh":
        return (1.0 - out * out,)
    if op == "sigmoid":
        return (out * (1.0 - out),)
    if op == "softplus":
        return (sigmoid(ps[0]),)
    raise AutodiffError(f"no symbolic derivative for primitive {op!r}")


def backward(root: Var, create_graph: bool = False) -> dict[int, float] | dict[int, Var]:
    """Reverse sweep from ``root``; returns d(root)/d(node) for every node up to root.

    With ``create_graph=True`` the adjoints are themselves tape variables, so
    they can be differentiated again.
    """
    tape = root.tape
    if not math.isfinite(root.value):
        raise AutodiffError("backward: root value is not finite")
    n = root.index + 1
    if not create_graph:
        adj = [0.0] * n
        adj[root.index] = 1.0
        for i in range(root.index, -1, -1):
            g = adj[i]
            if g == 0.0:
                continue
            for p, d in zip(tape.parents[i], tape.partials[i]):
                adj[p] += g * d
        return dict(enumerate(adj))

    adjv: list = [None] * n
    adjv[root.index] = tape.const(1.0)
    for i in range(root.index, -1, -1):
        g = adjv[i]
        if g is None or not tape.parents[i]:
            continue
        for p, d in zip(tape.parents[i], _symbolic_partials(tape, i)):
            term = g * d
            if isinstance(term, (int, float)):
                term = tape.const(float(term))
            adjv[p] = term if adjv[p] is None else adjv[p] + term
    return {i: (a if a is not None else tape.const(0.0)) for i, a in enumerate(adjv)}


def grad(f: Callable[..., Var], *xs: float) -> list[float]:
    """Gradient of a scalar function of several reals."""
    tape = Tape()
    vs = [tape.var(x) for x in xs]
    out = f(*vs)
    if not isinstance(out, Var):
        raise AutodiffError("function did not return a tape variable")
    g = backward(out)
    return [g[v.index] for v in vs]


def second_derivative(f: Callable[[Var], Var], x: float) -> float:
    """d^2 f / dx^2 at ``x`` by differentiating the recorded reverse sweep."""
    tape = Tape()
    xv = tape.var(x)
    try:
        y = f(xv)
    except TypeError as err:
        raise AutodiffError(f"unsupported primitive in function: {err}") from None
    if not isinstance(y, Var):
        raise AutodiffError("function did not return a tape variable")
    dy = backward(y, create_graph=True)[xv.index]
    if dy.index < xv.index:
        return 0.0
    return backward(dy)[xv.index]
