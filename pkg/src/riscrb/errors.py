"""Exception types raised by the riscrb modules."""


class RiscrbError(Exception):
    """Base class for all library errors."""


class ConfigError(RiscrbError, ValueError):
    """Invalid scene, optimizer or experiment configuration."""


class CoincidentPointError(RiscrbError):
    """The agent sits on (or within 1e-9 m of) an RIS element or anchor."""


class NonPsdEmiError(RiscrbError):
    """The EMI quadratic form came out negative beyond round-off."""


class DegenerateSceneError(RiscrbError):
    """A Fisher information block is singular or too ill-conditioned to invert.

    Attributes
    ----------
    block : str
        Name of the offending block (``"J_gg"``, ``"J_f"``, ``"J"``).
    matrix : numpy.ndarray
        The block that failed the condition-number guard.
    cond : float
        Condition number of the diagonally equilibrated block.
    """

    def __init__(self, block, matrix, cond):
        self.block = block
        self.matrix = matrix
        self.cond = cond
        super().__init__(f"degenerate geometry: {block} has condition number {cond:.3e}")


class RetractionError(RiscrbError):
    """``w + v`` vanishes in some entry so the retraction is undefined."""


class InjectivityError(RiscrbError):
    """An inverse retraction was requested outside the |phase step| < pi/2 range."""


class LineSearchError(RiscrbError):
    """Armijo backtracking exhausted its budget without sufficient decrease."""


class IllConditionedError(RiscrbError):
    """The regularized residual Gram matrix could not be solved reliably."""
