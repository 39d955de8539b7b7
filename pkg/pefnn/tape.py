"""
Minimal reverse-mode tape.

Every differentiable operation records one node: its value, the indices of its parent
nodes and a vector-Jacobian closure mapping the node's cotangent to one cotangent per
parent (`None` where a parent receives nothing). `Tape.backward` walks the nodes once,
newest first. A tape supports exactly one backward pass.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import ShapeMismatch, TapeConsumed

Array = NDArray[np.float64]
VectorJacobian = Callable[[Array], Sequence["Array | None"]]


@dataclass(eq=False)
class Var:
    """
    A value recorded on a tape.
    """

    value: Array
    index: int
    tape: Tape

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)


@dataclass
class Node:
    parents: tuple[int, ...]
    vjp: VectorJacobian | None


@dataclass
class Gradients:
    """
    Cotangents of the leaves reached by a backward pass. Leaves the output does not
    depend on read as zeros.
    """

    values: dict[int, Array]

    def __getitem__(self, var: Var) -> Array:
        try:
            return self.values[var.index]
        except KeyError:
            return np.zeros(var.shape)

    def __contains__(self, var: Var) -> bool:
        return var.index in self.values


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    consumed: bool = False

    def leaf(self, value: Array) -> Var:
        """
        Record an input or parameter. Leaves have no parents.
        """
        return self.record(np.asarray(value, dtype=np.float64), (), None)

    def parameters(self, params: Mapping[str, Array]) -> dict[str, Var]:
        return {name: self.leaf(value) for name, value in params.items()}

    def apply(
        self, value: Array, parents: Sequence[Var], vjp: VectorJacobian
    ) -> Var:
        for parent in parents:
            if parent.tape is not self:
                raise ShapeMismatch("Cannot combine variables from different tapes.")

        return self.record(value, tuple(parent.index for parent in parents), vjp)

    def record(
        self, value: Array, parents: tuple[int, ...], vjp: VectorJacobian | None
    ) -> Var:
        if self.consumed:
            raise TapeConsumed("Tape was already consumed by a backward pass.")

        self.nodes.append(Node(parents, vjp))
        return Var(value, len(self.nodes) - 1, self)

    def backward(self, output: Var, cotangent: Array) -> Gradients:
        if self.consumed:
            raise TapeConsumed(
                "Backward was already run on this tape; run a new forward first."
            )

        if output.tape is not self:
            raise ShapeMismatch("Output variable was not recorded on this tape.")

        cotangent = np.asarray(cotangent, dtype=np.float64)

        if cotangent.shape != output.shape:
            raise ShapeMismatch(
                f"Cotangent has shape {cotangent.shape}, output has {output.shape}."
            )

        self.consumed = True
        values: dict[int, Array] = {output.index: cotangent}

        for index in range(output.index, -1, -1):
            node = self.nodes[index]

            if index not in values or node.vjp is None:
                continue

            for parent, parent_cotangent in zip(node.parents, node.vjp(values[index])):
                if parent_cotangent is None:
                    continue

                if parent in values:
                    values[parent] = values[parent] + parent_cotangent
                else:
                    values[parent] = parent_cotangent

        # Leaves keep their cotangents, intermediates are released.
        leaves = {
            index: value
            for index, value in values.items()
            if self.nodes[index].vjp is None
        }
        self.nodes.clear()
        return Gradients(leaves)
