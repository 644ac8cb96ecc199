"""Exception hierarchy shared by all lgcpkit modules."""


class LgcpError(Exception):
    """Base class for every error raised by lgcpkit."""


class DimensionError(LgcpError, ValueError):
    """Shapes, windows or grids that do not line up."""


class ParseError(LgcpError, ValueError):
    """Malformed input file. ``line`` is 1-based and counts the header."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ParameterError(LgcpError, ValueError):
    """Invalid model or sampler parameter."""


class DegenerateCovariateError(ParameterError):
    """Covariate with fewer than two distinct observed values."""


class InsufficientDataError(LgcpError, ValueError):
    """Not enough points for the requested statistic."""


class ModelError(LgcpError, ValueError):
    """Inconsistent model specification."""


class ConvergenceError(LgcpError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, grad_norm=float("nan")):
        self.grad_norm = grad_norm
        super().__init__(f"{message} (gradient norm {grad_norm:.3e})")


class IndefiniteError(LgcpError, ArithmeticError):
    """A matrix expected to be positive definite failed to factorize."""


class ReplicateError(LgcpError, RuntimeError):
    """A replicate simulation failed; ``index`` identifies which one."""

    def __init__(self, index, cause):
        self.index = index
        super().__init__(f"replicate {index} failed: {cause}")
