class BreakscopeError(Exception):
    """Base class for every error raised by the break detection pipeline"""


class InputError(BreakscopeError, ValueError):
    """Invalid input files, configuration or series selection"""


class PanelValidationError(InputError):
    """A panel violates balance or positivity"""


class NumericalError(BreakscopeError, RuntimeError):
    """A numerical routine could not produce a valid result"""


class DegreesOfFreedomError(NumericalError):
    def __init__(self, rows: int, columns: int):
        self.rows = rows
        self.columns = columns
        super().__init__(
            f"Zero residual degrees of freedom ({rows} rows, {columns} effective columns). "
            f"Reduce the candidate block_size."
        )

    def __reduce__(self):
        return type(self), (self.rows, self.columns), self.__dict__


class ProvenanceError(NumericalError):
    """Design columns do not line up with the fitted columns"""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        self.message = message
        self.diagnostics = diagnostics or {}
        detail = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} ({detail})" if detail else message)

    def __reduce__(self):
        return type(self), (self.message, self.diagnostics), self.__dict__
