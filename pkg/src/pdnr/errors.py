"""Exception types shared across the solver suite."""


class PdnrError(Exception):
    """Base class for all package errors."""


class InfeasibleError(PdnrError):
    """No admissible point exists (e.g. faults disconnect the graph)."""

    def __init__(self, message, agent=None):
        super().__init__(message)
        self.agent = agent


class NotRadialError(PdnrError):
    """A switch configuration is not a spanning arborescence."""


class SizeGuardError(PdnrError):
    """An exhaustive enumeration was requested on a graph that is too large."""


class CaseFileError(PdnrError):
    """A case or scenario document failed validation."""


class QpError(PdnrError):
    """Raised by the QP solver; carries the best iterate found."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class QpInfeasibleError(QpError):
    pass


class QpMaxIterationsError(QpError):
    pass
