"""Exception hierarchy shared by all abflux modules."""


class AbfluxError(Exception):
    """Base class for every error raised by the package."""


class TangentialHit(AbfluxError):
    """A ray met a boundary at grazing incidence or at a polygon corner."""


class DegenerateGeometry(AbfluxError):
    """A query point sits on a boundary, or a ray never enters the domain."""


class TrappedRay(AbfluxError):
    """A broken ray exceeded the reflection budget."""


class ClearanceTooLarge(AbfluxError):
    """Offset loops or paths cannot avoid neighbouring boundaries."""


class InvalidGeometry(AbfluxError):
    """Domain invariants (containment, disjointness, convexity) are violated."""


class QuadratureNonconvergent(AbfluxError):
    """Adaptive refinement hit its depth limit before meeting tolerance."""


class InvalidScenario(AbfluxError):
    """Scenario parameters violate a documented precondition."""


class StepTooLarge(AbfluxError):
    """Matrix transport lost unitarity beyond the allowed defect."""


class SingularGauge(AbfluxError):
    """A gauge element (nearly) vanishes or is (nearly) singular."""


class PathBlocked(AbfluxError):
    """No obstacle-avoiding polyline could be found."""


class PreconditionViolated(AbfluxError):
    """An operation was called without its required prior check."""


class UndersampledLoop(AbfluxError):
    """Consecutive phase samples jump by nearly pi or more."""


class LinearSolveFailure(AbfluxError):
    """The inner linear solver of the time stepper stagnated."""


class ConfigInvalid(AbfluxError):
    """A scenario configuration violates the schema."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = ".".join(str(p) for p in self.path)
        super().__init__(f"{where}: {message}" if where else message)


class CFLWarning(UserWarning):
    """Time step is large relative to h**2 (accuracy advisory only)."""
