"""
Exception hierarchy for the projection laboratory
"""


class ProjLabError(Exception):
    """Base class for every error raised by the laboratory."""


class DimensionMismatch(ProjLabError):
    pass


class NonFiniteInput(ProjLabError):
    pass


class InvalidFamily(ProjLabError):
    """Members disagree on the ambient space or share a nonzero vector."""


class InvalidPolicy(ProjLabError):
    pass


class InvalidParameter(ProjLabError):
    pass


class DegenerateInput(ProjLabError):
    """A direction was requested for the zero vector."""


class NotInSubspaceSum(ProjLabError):
    def __init__(self, residual: float, tol: float):
        super().__init__(f"vector is not in the sum of complements (residual {residual:.3e} >= {tol:.1e})")
        self.residual = residual
        self.tol = tol


class NotCertified(ProjLabError):
    """The s-norm solver hit its iteration cap; `result` holds the best iterate."""

    def __init__(self, result):
        super().__init__(f"s-norm solver stopped with gap {result.gap:.3e} after {result.iterations} iterations")
        self.result = result


class TruncationTooSmall(ProjLabError):
    def __init__(self, message: str, required_blocks: int | None = None):
        super().__init__(message)
        self.required_blocks = required_blocks


class ConfigError(ProjLabError):
    pass


class CertificationFailed(ProjLabError):
    def __init__(self, failed: list[str]):
        super().__init__("failed checks: " + ", ".join(failed))
        self.failed = failed
