"""Exception types raised across the package."""


class FSIError(Exception):
    """Base class for all package errors."""


class OutOfTube(FSIError):
    pass


class DisplacementTooLarge(FSIError):
    pass


class KappaTooLarge(FSIError):
    pass


class SingularMass(FSIError):
    pass


class LinearSolveFailure(FSIError):
    pass


class NotSPD(FSIError):
    pass


class LiftSolveFailure(FSIError):
    pass


class CompatibilityViolation(FSIError):
    pass


class NoConvergence(FSIError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class WindowShrunk(FSIError):
    def __init__(self, msg, eta_sup=None):
        super().__init__(msg)
        self.eta_sup = eta_sup


class RestartGeometryInvalid(FSIError):
    pass


class NegativeDensity(FSIError):
    pass


class ParseError(FSIError):
    def __init__(self, msg, line=None):
        text = msg if line is None else f"line {line}: {msg}"
        super().__init__(text)
        self.line = line


class ValidationError(FSIError):
    pass
