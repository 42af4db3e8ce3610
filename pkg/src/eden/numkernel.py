"""Dense float64 primitives with a small reverse-mode tape and a gradient checker.

The network layers in :mod:`eden.model` use hand-derived batched backward
passes for speed; the tape here exists for the primitive-level contract and
for building small reference expressions in tests. ``grad_check`` is the
finite-difference oracle for both.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


class ShapeError(ValueError):
    pass


def sigmoid(x):
    """Logistic function in branch form; never overflows ``exp``."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


class Var:
    """A matrix value recorded on a :class:`GradTape`."""

    __slots__ = ("value", "tape", "id", "name")

    def __init__(self, value, tape: "GradTape", name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.id = tape._next_id()
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class GradTape:
    """Ordered record of primitive ops.

    Each entry is ``(output_id, [(input_id, vjp), ...])`` where ``vjp`` maps the
    output cotangent to the input cotangent.
    """

    def __init__(self):
        self.ops: list[tuple[int, list[tuple[int, Callable]]]] = []
        self.params: dict[str, Var] = {}
        self._count = 0

    def _next_id(self) -> int:
        self._count += 1
        return self._count

    def param(self, name: str, value) -> Var:
        v = Var(np.array(value, dtype=np.float64), self, name=name)
        self.params[name] = v
        return v

    def constant(self, value) -> Var:
        return Var(value, self)

    def record(self, out: Var, parents: list[tuple[Var, Callable]]) -> Var:
        self.ops.append((out.id, [(p.id, fn) for p, fn in parents]))
        return out


def _check_finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return value


def _lift(x, tape: GradTape) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)


def _tape_of(*args) -> GradTape:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    raise TypeError("at least one operand must be a taped Var")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Var(_check_finite(a.value @ b.value, "matmul"), tape)
    av, bv = a.value, b.value
    return tape.record(out, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def _binary(op: str, a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None
    av, bv = a.value, b.value
    sa, sb = av.shape, bv.shape
    if op == "add":
        out = av + bv
        rules = [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))]
    elif op == "sub":
        out = av - bv
        rules = [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(-g, sb))]
    else:
        out = av * bv
        rules = [(a, lambda g: _unbroadcast(g * bv, sa)), (b, lambda g: _unbroadcast(g * av, sb))]
    return tape.record(Var(_check_finite(out, op), tape), rules)


def add(a, b) -> Var:
    return _binary("add", a, b)


def sub(a, b) -> Var:
    return _binary("sub", a, b)


def mul(a, b) -> Var:
    return _binary("mul", a, b)


def vsigmoid(a: Var) -> Var:
    s = sigmoid(a.value)
    return a.tape.record(Var(s, a.tape), [(a, lambda g: g * s * (1.0 - s))])


def vtanh(a: Var) -> Var:
    t = tanh(a.value)
    return a.tape.record(Var(t, a.tape), [(a, lambda g: g * (1.0 - t * t))])


def vsum(a: Var) -> Var:
    shape = a.shape
    return a.tape.record(Var(a.value.sum(), a.tape), [(a, lambda g: np.broadcast_to(g, shape).copy())])


_UNARY = {"sigmoid": vsigmoid, "tanh": vtanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args) -> Var:
    """Dispatch ``sigmoid|tanh`` (one arg) or ``add|mul|sub`` (two args)."""
    if op in _UNARY:
        (a,) = args
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def backward(tape: GradTape, output: Var) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``output`` with respect to every registered parameter."""
    recorded = {oid for oid, _ in tape.ops} | {p.id for p in tape.params.values()}
    if output.tape is not tape or output.id not in recorded:
        raise ValueError("output is not on this tape")
    if output.value.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {output.id: np.ones_like(output.value)}
    for out_id, parents in reversed(tape.ops):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for pid, vjp in parents:
            contrib = vjp(g)
            grads[pid] = grads[pid] + contrib if pid in grads else contrib
    return {
        name: grads.get(v.id, np.zeros_like(v.value)).reshape(v.shape)
        for name, v in tape.params.items()
    }


def grad_check(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    Per coordinate the error is ``|a - fd| / (|a| + 1e-8)``. ``max_coords``
    subsamples coordinates of large tensors.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    worst = 0.0
    for name, value in work.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        a_flat = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            fp = f(work)
            flat[j] = orig - eps
            fm = f(work)
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite objective while perturbing {name}[{j}]")
            fd = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(a_flat[j] - fd) / (abs(a_flat[j]) + 1e-8))
    return worst
