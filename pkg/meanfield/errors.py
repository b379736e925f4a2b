"""Exceptions raised by the particle laboratory.

Failed inequality checks are never raised; they come back inside report
objects. Exceptions are reserved for inputs an operation cannot work with.
"""

from typing import List, Optional


class MeanFieldError(Exception):
    """Base class for every error raised by meanfield."""


class InvalidDimensionError(MeanFieldError):
    pass


class UnsupportedDensityError(MeanFieldError):
    pass


class InvalidKernelError(MeanFieldError):
    """Kernel exponent outside (0, 1) or negative regularization.

    Also covers the nonintegrable-kernel case of the grid oracle, since the
    kernel cannot be built with alpha >= 1.
    """


class SingularInputError(MeanFieldError):
    pass


class CollisionDetected(MeanFieldError):
    def __init__(self, i: int, j: int, distance: float, time: Optional[float] = None):
        self.i = int(i)
        self.j = int(j)
        self.distance = float(distance)
        self.time = time
        where = "" if time is None else f" at t={time:.6g}"
        super().__init__(
            f"Particles {self.i} and {self.j} collided{where} (|X_i - X_j| = {self.distance:.3e})"
        )

    def __reduce__(self):
        return type(self), (self.i, self.j, self.distance, self.time)


class NonFiniteStateError(MeanFieldError):
    def __init__(self, message: str, time: Optional[float] = None):
        self.message = message
        self.time = time
        super().__init__(message)

    def __reduce__(self):
        return type(self), (self.message, self.time)


class TooLargeError(MeanFieldError):
    pass


class WindowTooCoarseError(MeanFieldError):
    pass


class InvalidBetaError(MeanFieldError):
    pass


class UnsupportedDimensionError(MeanFieldError):
    pass


class InvalidWindowError(MeanFieldError):
    pass


class ScaleOrderError(MeanFieldError):
    pass


class NormConditionsViolated(MeanFieldError):
    def __init__(self, condition: str, margin: float):
        self.condition = condition
        self.margin = float(margin)
        super().__init__(f"Norm condition '{condition}' violated (margin {self.margin:.3e})")

    def __reduce__(self):
        return type(self), (self.condition, self.margin)


class WindowMissingError(MeanFieldError):
    pass


class ConditionViolated(MeanFieldError):
    pass


class SupportOverflowError(MeanFieldError):
    pass


class MisalignedTimesError(MeanFieldError):
    pass


class ConfigInvalid(MeanFieldError):
    def __init__(self, messages: List[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))

    def __reduce__(self):
        return type(self), (self.messages,)
