"""Reverse-mode differentiation tape.

A ``Tape`` records every tensor operation executed while it is active (used
as a context manager). ``Tape.backward`` then walks the record in reverse and
accumulates gradients for every value that contributed to a scalar loss.

Tapes are single-threaded by contract: one forward/backward pass owns a tape
exclusively. The active-tape stack is thread-local, so independent tapes may
run concurrently on different threads.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, TapeHandleError

_LOCAL = threading.local()


def _stack() -> list:
    if not hasattr(_LOCAL, "stack"):
        _LOCAL.stack = []
    return _LOCAL.stack


def active_tape() -> Optional["Tape"]:
    """The innermost tape currently recording on this thread, if any."""
    st = _stack()
    return st[-1] if st else None


class _Node:
    __slots__ = ("op", "in_ids", "out_id", "backward")

    def __init__(self, op: str, in_ids: tuple, out_id: int, backward: Callable):
        self.op = op
        self.in_ids = in_ids
        self.out_id = out_id
        self.backward = backward


class GradientMap:
    """Result of a backward pass: gradient arrays keyed by value handle."""

    def __init__(self, tape: "Tape", grads: dict):
        self._tape = tape
        self._grads = grads

    def get(self, value) -> Optional[np.ndarray]:
        """Gradient of the loss w.r.t. ``value``, or None if unreachable."""
        if value.grad_id is None or value._tape is not self._tape:
            return None
        return self._grads.get(value.grad_id)

    def by_id(self, handle: int) -> Optional[np.ndarray]:
        return self._grads.get(handle)

    def __len__(self) -> int:
        return len(self._grads)


class Tape:
    """Append-only record of operations, replayed in reverse for gradients.

    Forward activations needed by an operation's backward rule are captured
    in the node's closure at record time; nothing is recomputed.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        top = _stack().pop()
        assert top is self, "tape contexts must nest"

    def ensure_id(self, value) -> int:
        """Attach ``value`` to this tape (idempotent) and return its handle."""
        if value._tape is not self:
            value._tape = self
            value.grad_id = self._next_id
            self._next_id += 1
        return value.grad_id

    def record(self, op: str, inputs: Sequence, output,
               backward: Callable[[np.ndarray], tuple]) -> None:
        """Append one operation.

        ``backward`` maps the output gradient to one gradient per input
        (None for non-differentiable inputs).
        """
        in_ids = tuple(self.ensure_id(t) for t in inputs)
        out_id = self.ensure_id(output)
        self._nodes.append(_Node(op, in_ids, out_id, backward))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss) -> GradientMap:
        """Gradients of scalar ``loss`` w.r.t. every antecedent on this tape."""
        if loss._tape is not self or loss.grad_id is None:
            raise TapeHandleError("loss value was not recorded on this tape")
        if loss.data.size != 1:
            raise InvalidArgumentError(
                f"loss must be a scalar, got shape {tuple(loss.data.shape)}")
        grads: dict[int, np.ndarray] = {loss.grad_id: np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            gout = grads.get(node.out_id)
            if gout is None:
                continue
            gins = node.backward(gout)
            for in_id, gin in zip(node.in_ids, gins):
                if gin is None:
                    continue
                acc = grads.get(in_id)
                grads[in_id] = gin if acc is None else acc + gin
        return GradientMap(self, grads)
