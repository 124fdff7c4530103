"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario or constructor input.

    ``pointer`` is a JSON-pointer-like path to the offending key when the error
    originates from a scenario document.
    """

    def __init__(self, message, pointer=None):
        self.pointer = pointer
        if pointer:
            message = f"{pointer}: {message}"
        super().__init__(message)


class SolverError(RuntimeError):
    """Iterative solver failed to converge within its iteration cap."""


class NumericalError(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
