"""Exception hierarchy. Each error carries a machine-readable ``payload``."""


class PathHeatError(Exception):
    code = "ERROR"

    def __init__(self, message, **payload):
        super().__init__(message)
        self.payload = payload

    def to_dict(self):
        return {"code": self.code, "message": str(self), **_jsonable(self.payload)}


class DomainError(PathHeatError, ValueError):
    code = "DOMAIN"


class GridError(DomainError):
    """A time or location that must sit on the uniform grid does not."""

    code = "OFF_GRID"


class SingularGramError(PathHeatError):
    code = "SINGULAR_GRAM"


class DegenerateError(PathHeatError):
    code = "DEGENERATE"


class NonConvergentError(PathHeatError):
    code = "NON_CONVERGENT"


class IntegrationDivergedError(PathHeatError):
    code = "INTEGRATION_DIVERGED"


class GrowthViolationError(PathHeatError):
    code = "GROWTH_VIOLATION"


class ScenarioError(PathHeatError):
    code = "SCENARIO"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj
