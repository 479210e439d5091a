"""
Exception types for OverlapGAN.

Every error carries the process exit code the CLI maps it to.
"""


class OverlapGanError(Exception):
    """Base class for all OverlapGAN errors."""

    exit_code: int = 2


class ConfigError(OverlapGanError):
    """Invalid or incomplete configuration."""

    exit_code = 1

    def __init__(self, message: str, errors: list[str] | None = None):
        self.errors = list(errors or [])
        if self.errors:
            message = message + "\n" + "\n".join(f"  • {err}" for err in self.errors)
        super().__init__(message)


class ShapeError(OverlapGanError, ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        listed = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {listed}")


class SimplexError(OverlapGanError, ValueError):
    """A row expected to be a probability vector is not on the simplex."""


class NonFiniteError(OverlapGanError, FloatingPointError):
    """A loss, gradient or metric became NaN or infinite."""


class TrainingAborted(OverlapGanError):
    """A training run stopped early; diagnostics were written to ``dump_dir``."""

    def __init__(self, message: str, dump_dir: str | None = None):
        self.dump_dir = dump_dir
        if dump_dir:
            message = f"{message} (diagnostics in {dump_dir})"
        super().__init__(message)


class EvalError(OverlapGanError):
    """Evaluation could not be carried out."""

    exit_code = 3


class IncompleteRunError(EvalError):
    """A run directory is missing artifacts needed downstream."""

    def __init__(self, run_dir: str, missing: list[str]):
        self.run_dir = run_dir
        self.missing = list(missing)
        super().__init__(
            f"Run in {run_dir} is incomplete; missing: {', '.join(self.missing)}"
        )
