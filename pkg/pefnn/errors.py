from __future__ import annotations

from collections.abc import Mapping
from typing import Any


class PeFNNError(Exception):
    """
    Base class for every error raised by the toolkit. `exit_code` is what the CLI
    exits with when the error escapes a command.
    """

    exit_code = 1


class ConfigError(PeFNNError):
    exit_code = 2


class DataError(PeFNNError):
    exit_code = 3


class NumericalError(PeFNNError):
    exit_code = 4


class IOFailure(PeFNNError):
    exit_code = 5


class ConfigMismatch(ConfigError):
    """
    A checkpoint was loaded against a model configuration it was not trained with.
    """

    def __init__(self, differences: Mapping[str, tuple[Any, Any]]) -> None:
        self.differences = dict(differences)
        lines = (
            f"  {name}: checkpoint={saved!r} config={expected!r}"
            for name, (saved, expected) in sorted(self.differences.items())
        )
        super().__init__("Model configuration mismatch:\n" + "\n".join(lines))


class NoGroupAxis(ConfigError):
    pass


class CorruptDataset(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class ModeOverflow(DataError):
    pass


class ZeroReference(DataError):
    pass


class NonFinite(NumericalError):
    def __init__(self, message: str, epoch: int | None = None) -> None:
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)


class ImaginaryResidue(NumericalError):
    def __init__(self, residue: float) -> None:
        self.residue = residue
        super().__init__(
            f"Inverse transform left an imaginary residue of {residue:.3e}; "
            "the spectrum is not Hermitian."
        )


class Instability(NumericalError):
    pass


class DryCell(NumericalError):
    pass


class NegativeDepth(NumericalError):
    pass


class GradcheckFailure(NumericalError):
    pass


class TapeConsumed(NumericalError):
    pass
