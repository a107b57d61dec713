"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input violates a documented precondition (bad parameters, invalid mesh, ...)."""


class MeshTopologyError(DomainError):
    """Mesh is not a closed, consistently oriented triangle 2-manifold."""


class TransportError(RuntimeError):
    """Transport solve failed (infeasible instance or internal LP failure)."""


class TransportConvergenceError(TransportError):
    """Entropic solver did not reach the marginal tolerance within max_iter."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FlowStepError(RuntimeError):
    """An incremental-minimization step failed irrecoverably."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
