import numpy as np
import pytest

from pefnn import ops
from pefnn.errors import ShapeMismatch, TapeConsumed
from pefnn.tape import Tape


def test_gradients_accumulate_over_uses() -> None:
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    y = ops.combine([(2.0, x), (3.0, ops.scale(x, 4.0))])

    gradients = tape.backward(y, np.ones(2))

    assert gradients[x].tolist() == [14.0, 14.0]


def test_unused_leaf_reads_zero() -> None:
    tape = Tape()
    x = tape.leaf(np.ones(3))
    unused = tape.leaf(np.ones((2, 2)))
    y = ops.scale(x, 2.0)

    gradients = tape.backward(y, np.ones(3))

    assert unused not in gradients
    assert gradients[unused].tolist() == [[0.0, 0.0], [0.0, 0.0]]


def test_product_gradient() -> None:
    tape = Tape()
    factors = [tape.leaf(np.array([value])) for value in (2.0, 3.0, 5.0)]

    gradients = tape.backward(ops.product(factors), np.ones(1))

    assert [float(gradients[factor][0]) for factor in factors] == [15.0, 10.0, 6.0]


class TestMisuse:
    @staticmethod
    def test_second_backward() -> None:
        tape = Tape()
        y = ops.scale(tape.leaf(np.ones(2)), 2.0)
        tape.backward(y, np.ones(2))

        with pytest.raises(TapeConsumed):
            tape.backward(y, np.ones(2))

    @staticmethod
    def test_recording_after_backward() -> None:
        tape = Tape()
        x = tape.leaf(np.ones(2))
        tape.backward(ops.scale(x, 2.0), np.ones(2))

        with pytest.raises(TapeConsumed):
            ops.scale(x, 2.0)

    @staticmethod
    def test_cotangent_shape() -> None:
        tape = Tape()
        y = ops.scale(tape.leaf(np.ones(2)), 2.0)

        with pytest.raises(ShapeMismatch):
            tape.backward(y, np.ones(3))

    @staticmethod
    def test_foreign_variables() -> None:
        left = Tape().leaf(np.ones(2))
        right = Tape().leaf(np.ones(2))

        with pytest.raises(ShapeMismatch):
            ops.add(left, right)

    @staticmethod
    def test_foreign_output() -> None:
        tape = Tape()
        other = ops.scale(Tape().leaf(np.ones(2)), 2.0)

        with pytest.raises(ShapeMismatch):
            tape.backward(other, np.ones(2))
