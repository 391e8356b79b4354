"""Exception types raised across the package."""


class SubQuadError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SubQuadError, ValueError):
    """An argument lies outside the admissible domain of a formula."""


class DriftError(DomainError):
    """A drift-branch quantity (beta > 0) was requested with beta == 0."""


class InfeasibleError(SubQuadError):
    pass


class CertificationError(SubQuadError):
    pass


class EmptySampleError(SubQuadError, ValueError):
    pass


class MissingDeclarationError(SubQuadError):
    pass


class MisalignedPathError(SubQuadError, ValueError):
    pass


class NonFiniteStateError(SubQuadError, FloatingPointError):
    pass


class SaturationError(SubQuadError):
    pass


class PicardDivergenceError(SubQuadError):
    def __init__(self, step: int, residual: float, hint: str = ""):
        msg = f"Picard iteration failed to contract at step {step} (residual {residual:.3e})"
        if hint:
            msg += f"; {hint}"
        super().__init__(msg)
        self.step = step
        self.residual = residual


class PreconditionError(SubQuadError):
    def __init__(self, message: str, nodes=None):
        super().__init__(message)
        self.nodes = nodes or []


class InstabilityError(SubQuadError):
    pass


class ConfigError(SubQuadError):
    pass
