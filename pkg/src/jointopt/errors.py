"""Exception types raised across the package."""


class JointOptError(Exception):
    """Base class for all package errors."""


class InvalidParams(JointOptError, ValueError):
    """Shape parameters violate the design-space constraints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid shape parameters: " + "; ".join(self.violations))


class DomainError(JointOptError, ValueError):
    pass


class MeshFailure(JointOptError):
    pass


class MorphDegenerate(JointOptError):
    """A morphed mesh contains an inverted or zero-area triangle."""


class MissingTag(JointOptError, KeyError):
    pass


class SingularSystem(JointOptError):
    pass


class DegenerateFit(JointOptError):
    pass


class NewtonDivergence(JointOptError):
    pass


class NoConvergence(JointOptError):
    pass


class SingularTangent(JointOptError):
    pass


class LineSearchFailure(JointOptError):
    pass
