"""Exception and warning types shared across the package."""


class WGNNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(WGNNError, ValueError):
    pass


class InputError(WGNNError, ValueError):
    pass


class DegenerateColumnError(WGNNError, ArithmeticError):
    """Raised when orthogonalization meets a (numerically) dependent column.

    ``column`` is the 0-based index of the offending column; ``layer`` is
    filled in by the propagation loop when the failure happens inside it.
    """

    def __init__(self, column, residual, layer=None):
        self.column = column
        self.residual = residual
        self.layer = layer
        where = f" at layer {layer}" if layer is not None else ""
        super().__init__(
            f"column {column} is linearly dependent on the previous columns "
            f"(residual norm {residual:.3e}){where}"
        )

    def with_layer(self, layer):
        return DegenerateColumnError(self.column, self.residual, layer=layer)


class ZeroMetricError(WGNNError, ValueError):
    pass


class EmptyInputError(WGNNError, ValueError):
    pass


class WeightError(WGNNError, ValueError):
    pass


class ConvergenceError(WGNNError, RuntimeError):
    pass


class ScaleError(WGNNError, ValueError):
    """Input too large for an exact (brute force) oracle."""


class DivergenceError(WGNNError, FloatingPointError):
    pass


class LossError(WGNNError, ValueError):
    pass


class NormalizationError(WGNNError, ArithmeticError):
    pass


class ParseError(WGNNError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class PipelineError(WGNNError, RuntimeError):
    pass


class ConditioningWarning(RuntimeWarning):
    pass


class RankDeficiencyWarning(RuntimeWarning):
    pass
