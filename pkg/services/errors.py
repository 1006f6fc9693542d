"""
Exception hierarchy for the boundary-condition pipeline
"""
from typing import Optional


class EngineThermalError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 1


class InputValidationError(EngineThermalError):
    """Contract violation in user-supplied data or configuration"""

    exit_code = 2


class NumericalError(EngineThermalError):
    """Numerical failure during evaluation or solving"""

    exit_code = 3


# --- input validation -------------------------------------------------------


class ConfigError(InputValidationError):
    pass


class MissingColumnError(InputValidationError):
    def __init__(self, column: str, path: Optional[str] = None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"Missing column '{column}'{where}")


class NonMonotoneTimeError(InputValidationError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"Timestamps not strictly increasing at row {row}")


class NonFiniteValueError(InputValidationError):
    def __init__(self, row: int, column: str):
        self.row = row
        self.column = column
        super().__init__(f"Non-finite value in column '{column}' at row {row}")


class StateRangeError(InputValidationError):
    def __init__(self, row: int, column: str, value: float):
        self.row = row
        self.column = column
        super().__init__(f"Negative value {value} in column '{column}' at row {row}")


class EmptySeriesError(InputValidationError):
    pass


class HorizonExceededError(InputValidationError):
    pass


class NonPositiveInputError(InputValidationError):
    pass


class GridMismatchError(InputValidationError):
    pass


class IncompleteCycleError(InputValidationError):
    pass


class TooFewCyclesError(InputValidationError):
    pass


class NotCoastingError(InputValidationError):
    pass


class VolumeExceedsMaxError(InputValidationError):
    pass


class MissingReferenceError(InputValidationError):
    pass


class MissingSpeedPointError(InputValidationError):
    pass


class OutOfBracketError(InputValidationError):
    pass


class EmptyHistogramError(InputValidationError):
    pass


class TooFewSamplesError(InputValidationError):
    pass


class ZeroAreaError(InputValidationError):
    pass


class DisconnectedNodeError(InputValidationError):
    def __init__(self, nodes):
        self.nodes = list(nodes)
        super().__init__(f"Nodes not connected to the network: {', '.join(map(str, self.nodes))}")


class DanglingPatchError(InputValidationError):
    pass


class DegenerateTemperatureDifferenceError(InputValidationError):
    def __init__(self, patches):
        self.patches = list(patches)
        super().__init__(
            f"|T_ref - T_s| below tolerance on patches: {', '.join(map(str, self.patches))}"
        )


# --- numerical ----------------------------------------------------------------


class SingularSystemError(NumericalError):
    pass


class SolverDivergenceError(NumericalError):
    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class UnreachableStateError(NumericalError):
    def __init__(self, bin_index, time: Optional[float] = None):
        self.bin_index = tuple(int(i) for i in bin_index)
        self.time = time
        when = f" at t={time:.6g} s" if time is not None else ""
        super().__init__(
            f"State bin {self.bin_index}{when} is empty and has no reference to transform from"
        )


class ZeroMeanHtcError(NumericalError):
    pass


class StageError(EngineThermalError):
    """Wraps an error raised inside a named pipeline stage"""

    def __init__(self, stage: str, error: EngineThermalError):
        self.stage = stage
        self.error = error
        self.exit_code = error.exit_code
        super().__init__(f"[{stage}] {error}")
