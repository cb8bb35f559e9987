"""Dense float64 tensor with a minimal reverse-mode tape.

Every differentiable operator in :mod:`signnet.ops` returns a new
:class:`Tensor` that remembers its parents and a closure mapping the
output gradient to parent gradients.  Calling :meth:`Tensor.backward`
on a scalar walks that graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """N-dimensional array of 64-bit reals with an optional gradient buffer.

    Feature maps use the (N, C, H, W) layout.  ``grad`` is ``None`` until a
    backward pass reaches the tensor, after which it has ``data.shape``.
    """

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        """Add ``g`` into this tensor's gradient buffer."""
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Propagate gradients from this tensor to every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        for node in order:
            if node is not self and node._backward_fn is not None:
                node.grad = None
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.data.shape).copy()
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable leaf tensor.

    ``decay`` marks whether weight decay applies; batch-norm scales/shifts
    and PReLU slopes set it to ``False``.
    """

    def __init__(self, data, name=None, decay=True):
        super().__init__(data, requires_grad=True, name=name)
        self.decay = decay

    def __repr__(self):
        return f"Parameter(shape={self.shape}, name={self.name!r})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data, parents, backward_fn):
    """Wrap an op output, attaching the tape only if some parent needs grads."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order
