"""Reverse-mode automatic differentiation on an append-only tape.

The public surface is scalar: ``TapeValue`` wraps one float on the tape and
supports +, -, *, / plus the unary maps in this module, and
``Tape.backward`` returns gradients for every variable reachable from an
output. Operand indices always point at earlier entries, so one reverse
sweep suffices.

Tree-structured models compose thousands of tiny vectors, which is too slow
if every float is its own entry; entries may therefore also hold small numpy
arrays (the ``t_*`` helpers). The scalar contract is unchanged: array
entries use the same tape, the same backward sweep, and interoperate with
scalars through ``t_get``/``t_sum``/``t_dot``.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class AutodiffError(ValueError):
    pass


class DomainError(AutodiffError):
    """A forward operation left its domain (div by zero, log of <= 0, ...)."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class TapeValue:
    """A scalar on the tape: entry index plus its (finite) forward value."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: float):
        self.tape = tape
        self.index = index
        self.value = value

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"TapeValue({self.value!r}, index={self.index})"

    # Binary arithmetic; bare numbers are lifted to constants.
    def __add__(self, other):
        return _arith(self, other, "add")

    def __radd__(self, other):
        return _arith(_lift(self.tape, other), self, "add")

    def __sub__(self, other):
        return _arith(self, other, "sub")

    def __rsub__(self, other):
        return _arith(_lift(self.tape, other), self, "sub")

    def __mul__(self, other):
        return _arith(self, other, "mul")

    def __rmul__(self, other):
        return _arith(_lift(self.tape, other), self, "mul")

    def __truediv__(self, other):
        return _arith(self, other, "div")

    def __rtruediv__(self, other):
        return _arith(_lift(self.tape, other), self, "div")

    def __neg__(self):
        return neg(self)


class TapeTensor:
    """A small numpy array stored as one tape entry."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape


class GradientMap:
    """Gradients of one output with respect to the tape's variables."""

    def __init__(self, grads: dict[int, object]):
        self._grads = grads

    def get(self, x):
        g = self._grads.get(x.index)
        if g is None:
            if isinstance(x, TapeTensor):
                return np.zeros_like(x.value)
            return 0.0
        return g

    def __getitem__(self, x):
        return self.get(x)


class Tape:
    """Append-only record of operations; cleared by building a fresh Tape."""

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._pulls: list = []  # tuple of float partials, or a closure
        self._variables: list[object] = []

    def __len__(self) -> int:
        return len(self._parents)

    def _emit(self, parents: tuple[int, ...], pull) -> int:
        self._parents.append(parents)
        self._pulls.append(pull)
        return len(self._parents) - 1

    def lift(self, x: float) -> TapeValue:
        """A constant: participates in arithmetic, receives no gradient."""
        x = float(x)
        if not math.isfinite(x):
            raise AutodiffError(f"cannot lift non-finite value {x!r}")
        return TapeValue(self, self._emit((), ()), x)

    def variable(self, x: float) -> TapeValue:
        x = float(x)
        if not math.isfinite(x):
            raise AutodiffError(f"cannot create variable from non-finite {x!r}")
        v = TapeValue(self, self._emit((), ()), x)
        self._variables.append(v)
        return v

    def tensor_constant(self, arr) -> TapeTensor:
        a = np.asarray(arr, dtype=np.float64)
        if not np.isfinite(a).all():
            raise AutodiffError("cannot lift non-finite tensor")
        return TapeTensor(self, self._emit((), ()), a)

    def tensor_variable(self, arr) -> TapeTensor:
        a = np.asarray(arr, dtype=np.float64)
        if not np.isfinite(a).all():
            raise AutodiffError("cannot create variable from non-finite tensor")
        t = TapeTensor(self, self._emit((), ()), a)
        self._variables.append(t)
        return t

    def backward(self, output: TapeValue) -> GradientMap:
        """One reverse sweep from ``output``; gradients accumulate additively."""
        if not isinstance(output, TapeValue):
            raise AutodiffError("backward requires a scalar output")
        adjoint: list = [None] * (output.index + 1)
        adjoint[output.index] = 1.0
        parents = self._parents
        pulls = self._pulls
        for i in range(output.index, -1, -1):
            g = adjoint[i]
            if g is None:
                continue
            ps = parents[i]
            if not ps:
                continue
            pull = pulls[i]
            if isinstance(pull, tuple):
                for p, partial in zip(ps, pull):
                    contrib = g * partial
                    if adjoint[p] is None:
                        adjoint[p] = contrib
                    else:
                        adjoint[p] = adjoint[p] + contrib
            else:
                for p, contrib in zip(ps, pull(g)):
                    if adjoint[p] is None:
                        adjoint[p] = contrib
                    else:
                        adjoint[p] = adjoint[p] + contrib
        grads: dict[int, object] = {}
        for v in self._variables:
            if v.index <= output.index and adjoint[v.index] is not None:
                grads[v.index] = adjoint[v.index]
        return GradientMap(grads)


def _lift(tape: Tape, x) -> TapeValue:
    if isinstance(x, TapeValue):
        return x
    return tape.lift(x)


def _scalar(tape: Tape, value: float, parents: tuple[int, ...], partials: tuple) -> TapeValue:
    if not math.isfinite(value):
        raise DomainError("arith", f"non-finite result {value!r}")
    return TapeValue(tape, tape._emit(parents, partials), value)


def _arith(a: TapeValue, b, kind: str) -> TapeValue:
    if not isinstance(b, TapeValue):
        if not isinstance(b, (int, float)):
            return NotImplemented
        b = a.tape.lift(b)
    av, bv = a.value, b.value
    if kind == "add":
        return _scalar(a.tape, av + bv, (a.index, b.index), (1.0, 1.0))
    if kind == "sub":
        return _scalar(a.tape, av - bv, (a.index, b.index), (1.0, -1.0))
    if kind == "mul":
        return _scalar(a.tape, av * bv, (a.index, b.index), (bv, av))
    if kind == "div":
        if bv == 0.0:
            raise DomainError("div", "division by zero")
        inv = 1.0 / bv
        return _scalar(a.tape, av * inv, (a.index, b.index), (inv, -av * inv * inv))
    raise AutodiffError(f"unknown arithmetic kind {kind!r}")


def as_tape_value(tape: Tape, x) -> TapeValue:
    """Lift plain numbers produced by zero-short-circuits in generic code."""
    if isinstance(x, TapeValue):
        return x
    return tape.lift(float(x))


def neg(a: TapeValue) -> TapeValue:
    return _scalar(a.tape, -a.value, (a.index,), (-1.0,))


def log(a: TapeValue) -> TapeValue:
    if a.value <= 0.0:
        raise DomainError("log", f"argument {a.value!r} not positive")
    return _scalar(a.tape, math.log(a.value), (a.index,), (1.0 / a.value,))


def exp(a: TapeValue) -> TapeValue:
    v = math.exp(a.value)
    return _scalar(a.tape, v, (a.index,), (v,))


def relu(a: TapeValue) -> TapeValue:
    if a.value > 0.0:
        return _scalar(a.tape, a.value, (a.index,), (1.0,))
    return _scalar(a.tape, 0.0, (a.index,), (0.0,))


def tanh(a: TapeValue) -> TapeValue:
    v = math.tanh(a.value)
    return _scalar(a.tape, v, (a.index,), (1.0 - v * v,))


def clamp(a: TapeValue, lo: float, hi: float) -> TapeValue:
    """Identity inside [lo, hi]; constant (zero gradient) outside."""
    if a.value < lo:
        return _scalar(a.tape, lo, (a.index,), (0.0,))
    if a.value > hi:
        return _scalar(a.tape, hi, (a.index,), (0.0,))
    return _scalar(a.tape, a.value, (a.index,), (1.0,))


def sigmoid(a: TapeValue) -> TapeValue:
    # 0.5 * (tanh(x / 2) + 1): numerically stable at both tails.
    v = 0.5 * (math.tanh(0.5 * a.value) + 1.0)
    return _scalar(a.tape, v, (a.index,), (v * (1.0 - v),))


# ---------------------------------------------------------------------------
# Array-valued entries. All arrays are float64; shapes stay small (model
# dimension by model dimension at most), so per-op numpy overhead dominates
# and closures for the pullbacks are cheap relative to it.
# ---------------------------------------------------------------------------


def _tensor(tape: Tape, value: np.ndarray, parents: tuple[int, ...], pull) -> TapeTensor:
    if not np.isfinite(value).all():
        raise DomainError("tensor", "non-finite result")
    return TapeTensor(tape, tape._emit(parents, pull), value)


def t_row(m: TapeTensor, i: int) -> TapeTensor:
    """Row i of a matrix entry (embedding lookup)."""
    shape = m.value.shape

    def pull(g):
        out = np.zeros(shape)
        out[i] = g
        return (out,)

    return _tensor(m.tape, m.value[i].copy(), (m.index,), pull)


def t_matvec(w: TapeTensor, x: TapeTensor) -> TapeTensor:
    wv, xv = w.value, x.value

    def pull(g):
        return (np.outer(g, xv), wv.T @ g)

    return _tensor(w.tape, wv @ xv, (w.index, x.index), pull)


def t_add(a: TapeTensor, b: TapeTensor) -> TapeTensor:
    return _tensor(a.tape, a.value + b.value, (a.index, b.index), lambda g: (g, g))


def t_mul(a: TapeTensor, b: TapeTensor) -> TapeTensor:
    av, bv = a.value, b.value
    return _tensor(a.tape, av * bv, (a.index, b.index), lambda g: (g * bv, g * av))


def t_tanh(a: TapeTensor) -> TapeTensor:
    v = np.tanh(a.value)
    return _tensor(a.tape, v, (a.index,), lambda g: (g * (1.0 - v * v),))


def t_exp(a: TapeTensor) -> TapeTensor:
    v = np.exp(a.value)
    return _tensor(a.tape, v, (a.index,), lambda g: (g * v,))


def t_shift(a: TapeTensor, c: float) -> TapeTensor:
    return _tensor(a.tape, a.value + c, (a.index,), lambda g: (g,))


def t_scale_const(a: TapeTensor, c: float) -> TapeTensor:
    return _tensor(a.tape, a.value * c, (a.index,), lambda g: (g * c,))


def t_sub_const(a: TapeTensor, c: np.ndarray) -> TapeTensor:
    return _tensor(a.tape, a.value - c, (a.index,), lambda g: (g,))


def t_concat(parts: Sequence[TapeTensor]) -> TapeTensor:
    tape = parts[0].tape
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        return tuple(g[offsets[k]:offsets[k + 1]] for k in range(len(sizes)))

    value = np.concatenate([p.value for p in parts])
    return _tensor(tape, value, tuple(p.index for p in parts), pull)


def t_slice(a: TapeTensor, start: int, stop: int) -> TapeTensor:
    n = a.value.shape[0]

    def pull(g):
        out = np.zeros(n)
        out[start:stop] = g
        return (out,)

    return _tensor(a.tape, a.value[start:stop].copy(), (a.index,), pull)


def t_sum(a: TapeTensor) -> TapeValue:
    shape = a.value.shape
    return _scalar(
        a.tape, float(a.value.sum()), (a.index,), _FullPull(shape)
    )


class _FullPull:
    """Pullback broadcasting a scalar adjoint over a fixed shape."""

    __slots__ = ("shape",)

    def __init__(self, shape):
        self.shape = shape

    def __call__(self, g):
        return (np.full(self.shape, g),)


def t_dot(a: TapeTensor, b: TapeTensor) -> TapeValue:
    av, bv = a.value, b.value
    return _scalar(
        a.tape,
        float(av @ bv),
        (a.index, b.index),
        _DotPull(av, bv),
    )


class _DotPull:
    __slots__ = ("av", "bv")

    def __init__(self, av, bv):
        self.av = av
        self.bv = bv

    def __call__(self, g):
        return (g * self.bv, g * self.av)


def t_get(a: TapeTensor, i: int) -> TapeValue:
    n = a.value.shape[0]

    def pull(g):
        out = np.zeros(n)
        out[i] = g
        return (out,)

    return _scalar(a.tape, float(a.value[i]), (a.index,), pull)


def t_div_scalar(a: TapeTensor, s: TapeValue) -> TapeTensor:
    av, sv = a.value, s.value
    if sv == 0.0:
        raise DomainError("div", "division by zero")

    def pull(g):
        return (g / sv, -float(g @ av) / (sv * sv))

    return _tensor(a.tape, av / sv, (a.index, s.index), pull)


def t_from_scalars(values: Sequence[TapeValue]) -> TapeTensor:
    """Pack scalar entries into one vector entry."""
    tape = values[0].tape

    def pull(g):
        return tuple(float(gi) for gi in g)

    arr = np.array([v.value for v in values])
    return _tensor(tape, arr, tuple(v.index for v in values), pull)


def softmax_scalars(logits: TapeTensor) -> TapeTensor:
    """Stable softmax of a vector entry: shift by max, exp, normalize.

    The shift is by the (constant) running max; softmax is shift invariant,
    so treating it as a constant leaves both value and gradient exact.
    """
    m = float(np.max(logits.value))
    e = t_exp(t_shift(logits, -m))
    total = t_sum(e)
    return t_div_scalar(e, total)


def finite_difference_check(
    f: Callable[[Sequence[TapeValue]], TapeValue],
    params: Sequence[float],
    h: float = 1e-5,
) -> float:
    """Max relative error between backward gradients of ``f`` and central
    differences, with denominator max(1, |fd|) per coordinate.

    ``f`` must build its output from the supplied TapeValues only; it is
    re-evaluated on fresh tapes at the perturbed points.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    params = [float(p) for p in params]

    def value_at(ps: Sequence[float]) -> float:
        tape = Tape()
        xs = [tape.variable(p) for p in ps]
        return f(xs).value

    tape = Tape()
    xs = [tape.variable(p) for p in params]
    out = f(xs)
    grads = tape.backward(out)
    worst = 0.0
    for i in range(len(params)):
        up = list(params)
        down = list(params)
        up[i] += h
        down[i] -= h
        fd = (value_at(up) - value_at(down)) / (2.0 * h)
        err = abs(grads.get(xs[i]) - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst
