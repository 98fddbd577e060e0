"""Tape-based reverse-mode autodiff over dense float64 arrays.

The tape records every primitive application in execution order, so the
reverse sweep is a single linear pass. Directional derivatives (jvp) are
expanded into ordinary primitives on the same tape, which keeps
trace-of-Jacobian terms first-order differentiable without any
second-order machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as frng

__all__ = [
    "Tape",
    "Tensor",
    "ParamRegistry",
    "ShapeError",
    "DomainError",
    "backward",
    "grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "smul",
    "softplus",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "tsum",
    "tmean",
    "concat",
    "slice_cols",
    "square",
    "sqrt",
    "logsumexp",
    "Mlp",
    "jvp",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Tape:
    """Append-only record of primitive applications.

    Node inputs always reference earlier nodes, so creation order is a
    valid topological order and the reverse sweep visits each node once.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Tensor] = []

    def _record(self, t: "Tensor") -> "Tensor":
        t.idx = len(self.nodes)
        self.nodes.append(t)
        return t

    def leaf(self, value, name: str | None = None) -> "Tensor":
        return self._record(Tensor(np.asarray(value, dtype=np.float64), self, name=name))

    def const(self, value) -> "Tensor":
        return self.leaf(value, name=None)

    def __len__(self):
        return len(self.nodes)


class Tensor:
    """Dense float64 array recorded on a tape."""

    __slots__ = ("value", "tape", "parents", "vjps", "idx", "name")

    def __init__(self, value, tape, parents=(), vjps=(), name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjps = vjps
        self.idx = -1
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> np.ndarray:
        return self.value

    # operator sugar; floats on either side mean scalar multiplication/addition
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return sadd(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return sadd(self, -float(other))
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return smul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"


def _op(tape: Tape, value: np.ndarray, parents, vjps) -> Tensor:
    return tape._record(Tensor(value, tape, parents=tuple(parents), vjps=tuple(vjps)))


def _same_tape(a: Tensor, b: Tensor) -> Tape:
    if a.tape is not b.tape:
        raise ValueError("operands recorded on different tapes")
    return a.tape


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- primitives ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.value.shape} @ {b.value.shape}")
    out = a.value @ b.value
    return _op(
        tape,
        out,
        (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def _ewise_check(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(f"{opname} shapes incompatible: {a.value.shape} vs {b.value.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    _ewise_check(a, b, "add")
    return _op(
        tape,
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    _ewise_check(a, b, "sub")
    return _op(
        tape,
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: -_unbroadcast(g, b.value.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    _ewise_check(a, b, "mul")
    return _op(
        tape,
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def smul(a: Tensor, c: float) -> Tensor:
    return _op(a.tape, a.value * c, (a,), (lambda g: g * c,))


def sadd(a: Tensor, c: float) -> Tensor:
    return _op(a.tape, a.value + c, (a,), (lambda g: g,))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.value)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _op(a.tape, out, (a,), (lambda g: g * sig,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _op(a.tape, out, (a,), (lambda g: g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    """Composite of recorded primitives: sigma(x) = exp(-softplus(-x))."""
    return exp(-softplus(-a))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _op(a.tape, out, (a,), (lambda g: g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0.0):
        raise DomainError(f"log of non-positive value (min={a.value.min()})")
    return _op(a.tape, np.log(a.value), (a,), (lambda g: g / a.value,))


def square(a: Tensor) -> Tensor:
    return _op(a.tape, a.value * a.value, (a,), (lambda g: g * (2.0 * a.value),))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.value < 0.0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.value)
    return _op(a.tape, out, (a,), (lambda g: g / (2.0 * out),))


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out = np.asarray(a.value.sum())
        return _op(a.tape, out, (a,), (lambda g: np.broadcast_to(g, a.value.shape).copy(),))
    out = a.value.sum(axis=axis, keepdims=True)
    return _op(a.tape, out, (a,), (lambda g: np.broadcast_to(g, a.value.shape).copy(),))


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return smul(tsum(a, axis=axis), 1.0 / n)


def concat(tensors, axis: int = 1) -> Tensor:
    tape = tensors[0].tape
    for t in tensors[1:]:
        _same_tape(tensors[0], t)
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(bounds[i], bounds[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return _op(tape, out, tensors, tuple(make_vjp(i) for i in range(len(tensors))))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.value.ndim != 2 or not (0 <= start <= stop <= a.value.shape[1]):
        raise ShapeError(f"slice [{start}:{stop}] invalid for shape {a.value.shape}")
    out = a.value[:, start:stop]

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return full

    return _op(a.tape, out, (a,), (vjp,))


def logsumexp(a: Tensor, axis: int = 1) -> Tensor:
    m = a.value.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(a.value - m).sum(axis=axis, keepdims=True))
    soft = np.exp(a.value - out)
    return _op(a.tape, out, (a,), (lambda g: g * soft,))


# -- reverse sweep ---------------------------------------------------------


def _sweep(tape: Tape, root: Tensor) -> list:
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")
    grads: list = [None] * len(tape.nodes)
    grads[root.idx] = np.ones_like(root.value)
    for node in reversed(tape.nodes[: root.idx + 1]):
        g = grads[node.idx]
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            if grads[parent.idx] is None:
                grads[parent.idx] = np.array(contrib, dtype=np.float64, copy=True)
            else:
                grads[parent.idx] = grads[parent.idx] + contrib
    return grads


def backward(tape: Tape, root: Tensor, registry: "ParamRegistry") -> np.ndarray:
    """Gradient of a scalar root w.r.t. every registered parameter.

    Parameters that do not participate in the computation get exact 0.0.
    """
    grads = _sweep(tape, root)
    out = np.zeros_like(registry.vector)
    for node in tape.nodes[: root.idx + 1]:
        if node.name is not None and grads[node.idx] is not None:
            sl = registry.slice_of(node.name)
            out[sl] += grads[node.idx].ravel()
    return out


def grad(tape: Tape, root: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of a scalar root w.r.t. specific tensors (zeros if unused)."""
    grads = _sweep(tape, root)
    return [
        grads[t.idx] if grads[t.idx] is not None else np.zeros_like(t.value) for t in wrt
    ]


# -- parameter registry ----------------------------------------------------


class ParamRegistry:
    """Named slices into a single flat float64 parameter vector."""

    def __init__(self):
        self.vector = np.zeros(0, dtype=np.float64)
        self._slices: dict[str, slice] = {}
        self._shapes: dict[str, tuple] = {}

    def register(self, name: str, init: np.ndarray) -> None:
        if name in self._slices:
            raise ValueError(f"parameter {name!r} already registered")
        init = np.asarray(init, dtype=np.float64)
        start = self.vector.size
        self.vector = np.concatenate([self.vector, init.ravel()])
        self._slices[name] = slice(start, start + init.size)
        self._shapes[name] = init.shape

    def slice_of(self, name: str) -> slice:
        return self._slices[name]

    def get(self, name: str) -> np.ndarray:
        return self.vector[self._slices[name]].reshape(self._shapes[name])

    def set(self, name: str, value: np.ndarray) -> None:
        self.vector[self._slices[name]] = np.asarray(value, dtype=np.float64).ravel()

    def leaf(self, tape: Tape, name: str) -> Tensor:
        return tape.leaf(self.get(name), name=name)

    def names(self):
        return list(self._slices)

    def shape_of(self, name: str) -> tuple:
        return self._shapes[name]

    @property
    def size(self) -> int:
        return self.vector.size

    def size_of_prefix(self, prefix: str) -> int:
        return sum(
            sl.stop - sl.start for n, sl in self._slices.items() if n.startswith(prefix)
        )


# -- multilayer perceptron -------------------------------------------------

_ACTIVATIONS = ("softplus", "tanh", "identity")


@dataclass
class Mlp:
    """Fully connected net; activation on hidden layers, linear output.

    `time_input` appends the scalar time as an extra input coordinate,
    the convention used by the flow dynamics networks.
    """

    registry: ParamRegistry
    name: str
    widths: list[int]
    activation: str = "softplus"
    time_input: bool = False
    layer_names: list[tuple[str, str]] = field(default_factory=list)

    @classmethod
    def create(
        cls,
        registry: ParamRegistry,
        name: str,
        widths,
        activation: str = "softplus",
        time_input: bool = False,
        gen=None,
        init_scale: float | None = None,
        zero_init: bool = False,
    ) -> "Mlp":
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        widths = list(widths)
        mlp = cls(registry, name, widths, activation, time_input)
        dims = list(widths)
        if time_input:
            dims[0] += 1
        for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
            wname, bname = f"{name}.w{i}", f"{name}.b{i}"
            if zero_init or gen is None:
                w = np.zeros((n_in, n_out))
            else:
                scale = init_scale if init_scale is not None else 1.0 / np.sqrt(n_in)
                w = frng.normal(gen, (n_in, n_out), std=scale)
            registry.register(wname, w)
            registry.register(bname, np.zeros(n_out))
            mlp.layer_names.append((wname, bname))
        return mlp

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def _input(self, tape: Tape, x: Tensor, t: float | None) -> Tensor:
        if not self.time_input:
            return x
        if t is None:
            raise ValueError(f"Mlp {self.name} expects a time input")
        tcol = tape.const(np.full((x.value.shape[0], 1), float(t)))
        return concat([x, tcol], axis=1)

    def __call__(self, tape: Tape, x: Tensor, t: float | None = None) -> Tensor:
        h = self._input(tape, x, t)
        last = len(self.layer_names) - 1
        for i, (wn, bn) in enumerate(self.layer_names):
            w = self.registry.leaf(tape, wn)
            b = self.registry.leaf(tape, bn)
            h = add(matmul(h, w), b)
            if i < last:
                h = softplus(h) if self.activation == "softplus" else (
                    tanh(h) if self.activation == "tanh" else h
                )
        return h

    def call_with_jvp(self, tape: Tape, x: Tensor, t: float | None, vs) -> tuple[Tensor, list[Tensor]]:
        """Forward pass plus tangent propagation for each direction in vs.

        Tangents are built from recorded primitives, so the results stay
        differentiable by the ordinary reverse sweep. The time coordinate
        carries a zero tangent.
        """
        h = self._input(tape, x, t)
        tans = list(vs)
        if self.time_input:
            zero = tape.const(np.zeros((x.value.shape[0], 1)))
            tans = [concat([v, zero], axis=1) for v in tans]
        last = len(self.layer_names) - 1
        for i, (wn, bn) in enumerate(self.layer_names):
            w = self.registry.leaf(tape, wn)
            b = self.registry.leaf(tape, bn)
            pre = add(matmul(h, w), b)
            tans = [matmul(v, w) for v in tans]
            if i < last:
                if self.activation == "softplus":
                    h = softplus(pre)
                    dact = sigmoid(pre)
                    tans = [mul(dact, v) for v in tans]
                elif self.activation == "tanh":
                    h = tanh(pre)
                    dact = sadd(-square(h), 1.0)
                    tans = [mul(dact, v) for v in tans]
                else:
                    h = pre
            else:
                h = pre
        return h, tans


def jvp(tape: Tape, f: Mlp, z: Tensor, t: float | None, v: Tensor) -> Tensor:
    """(df/dz) v by tangent propagation through f's primitives."""
    if v.value.shape != z.value.shape:
        raise ShapeError(f"jvp direction shape {v.value.shape} != state shape {z.value.shape}")
    _, tans = f.call_with_jvp(tape, z, t, [v])
    return tans[0]
