"""A small reverse-mode differentiation engine over numpy arrays.

Only the primitives the toolkit needs are provided: dense affine maps, ReLU,
elementwise product, sum, squared L2 norm, softmax, softmax cross-entropy,
reshape, and the fixed-magnitude phase image (see :mod:`faithbench.spectral`).

A :class:`Program` wraps a Python function built from these primitives
together with the shapes of its input leaves::

    prog = Program(lambda x: sqnorm(x), {"x": (2,)})
    evaluate(prog, {"x": [1.0, 2.0]})              # 5.0
    gradient(prog, {"x": [1.0, 2.0]}, wrt="x")     # [2., 4.]
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

Array = np.ndarray


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "parents", "backward")

    def __init__(self, value, parents: tuple["Var", ...] = (), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        # maps the output cotangent to one cotangent per parent
        self.backward: Callable[[Array], tuple[Array, ...]] | None = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.shape})"


def _lift(v) -> Var:
    return v if isinstance(v, Var) else Var(v)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives


def dense(x, weights, bias) -> Var:
    """``x @ weights + bias``; ``x`` is ``(d,)`` or a batch ``(n, d)``."""
    x, weights, bias = _lift(x), _lift(weights), _lift(bias)

    def backward(g):
        gx = g @ weights.value.T
        if x.value.ndim == 1:
            gw = np.outer(x.value, g)
        else:
            gw = x.value.T @ g
        gb = _unbroadcast(g, bias.shape)
        return gx, gw, gb

    return Var(x.value @ weights.value + bias.value, (x, weights, bias), backward)


def relu(x) -> Var:
    """ReLU with subgradient 0 at 0."""
    x = _lift(x)
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def mul(a, b) -> Var:
    """Elementwise product with numpy broadcasting."""
    a, b = _lift(a), _lift(b)

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Var(a.value * b.value, (a, b), backward)


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return Var(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def total(x) -> Var:
    """Sum of all entries."""
    x = _lift(x)
    return Var(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def sqnorm(x) -> Var:
    """Squared L2 norm of all entries."""
    x = _lift(x)
    return Var(np.sum(x.value * x.value), (x,), lambda g: (2.0 * g * x.value,))


def _softmax(z: Array) -> Array:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x) -> Var:
    """Softmax over the last axis."""
    x = _lift(x)
    p = _softmax(x.value)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return Var(p, (x,), backward)


def cross_entropy(logits, labels: Sequence[int]) -> Var:
    """Mean softmax cross-entropy of a logit batch ``(n, C)`` against integer labels."""
    logits = _lift(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.value
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_p[np.arange(n), labels].mean()

    def backward(g):
        grad = np.exp(log_p)
        grad[np.arange(n), labels] -= 1.0
        return (g * grad / n,)

    return Var(loss, (logits,), backward)


def reshape(x, shape: tuple[int, ...]) -> Var:
    x = _lift(x)
    return Var(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# programs


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Program:
    """A differentiable function of named array leaves.

    ``leaves`` maps each argument name of ``fn`` to its declared shape;
    ``None`` in a shape matches any size along that axis.
    """

    fn: Callable[..., Var]
    leaves: Mapping[str, tuple[int | None, ...]]

    def check(self, inputs: Mapping[str, object]) -> dict[str, Array]:
        missing = set(self.leaves) - set(inputs)
        if missing:
            raise ShapeError(f"missing leaves: {sorted(missing)}")
        out = {}
        for name, decl in self.leaves.items():
            arr = np.asarray(inputs[name], dtype=np.float64)
            if len(decl) != arr.ndim or any(
                d is not None and d != s for d, s in zip(decl, arr.shape)
            ):
                raise ShapeError(f"leaf {name!r}: expected shape {decl}, got {arr.shape}")
            out[name] = arr
        return out


def _topological(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backprop(root: Var, seed: Array | float = 1.0) -> dict[int, Array]:
    """Propagate ``seed`` from ``root``; returns cotangents keyed by ``id(var)``."""
    grads: dict[int, Array] = {id(root): np.broadcast_to(np.asarray(seed, float), root.shape).copy()}
    for node in reversed(_topological(root)):
        g = grads.get(id(node))
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return grads


def evaluate(program: Program, inputs: Mapping[str, object]) -> Array:
    """Forward value of ``program`` at ``inputs``."""
    arrays = program.check(inputs)
    return program.fn(**{k: Var(v) for k, v in arrays.items()}).value


def gradient(
    program: Program,
    inputs: Mapping[str, object],
    wrt: str,
    component: int | tuple[int, ...] | None = None,
) -> Array:
    """Reverse-mode gradient of a scalar output (or one selected component) wrt leaf ``wrt``."""
    if wrt not in program.leaves:
        raise KeyError(f"unknown leaf {wrt!r}")
    arrays = program.check(inputs)
    leaves = {k: Var(v) for k, v in arrays.items()}
    out = program.fn(**leaves)
    if component is None:
        if out.value.size != 1:
            raise ValueError(
                f"output has shape {out.shape}; select a scalar component to differentiate"
            )
        seed = np.ones(out.shape)
    else:
        seed = np.zeros(out.shape)
        seed[component] = 1.0
    g = backprop(out, seed).get(id(leaves[wrt]))
    return np.zeros_like(arrays[wrt]) if g is None else g


def central_difference_gradient(
    program: Program,
    inputs: Mapping[str, object],
    wrt: str,
    step: float = 1e-5,
    component: int | tuple[int, ...] | None = None,
) -> Array:
    """Finite-difference oracle: ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    arrays = program.check(inputs)
    base = arrays[wrt]
    grad = np.empty_like(base)

    def f(x):
        y = evaluate(program, {**arrays, wrt: x})
        if component is None:
            if y.size != 1:
                raise ValueError(f"output has shape {y.shape}; select a scalar component")
            return float(y.reshape(-1)[0])
        return float(y[component])

    for idx in np.ndindex(base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += step
        minus[idx] -= step
        grad[idx] = (f(plus) - f(minus)) / (2.0 * step)
    return grad
