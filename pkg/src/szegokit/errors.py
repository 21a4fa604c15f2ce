"""Exception types shared across the package.

Model-construction failures and runtime domain failures are kept in separate
branches so the CLI can map them to distinct exit codes.
"""


class SzegoError(Exception):
    """Base class for all package errors."""


class ModelError(SzegoError):
    """Invalid model definition (rejected at construction time)."""


class NonSuperlinear(ModelError):
    """Profile polynomial does not grow superlinearly in both directions.

    Raised for odd leading degree or a nonpositive leading coefficient; the
    weight integral would then diverge for every frequency.
    """


class ZeroLastDirection(ModelError):
    """Last entry of the direction vector is zero."""


class DomainError(SzegoError):
    """Input is outside the mathematical domain of an operation."""


class NonPositiveParameter(DomainError):
    """A parameter that must be strictly positive is not."""


class Divergent(DomainError):
    """The frequency weight integral diverges (frequency outside the support set)."""


class OnDiagonal(DomainError):
    """Kernel evaluation requested at (or numerically at) the diagonal."""


class NearDiagonal(DomainError):
    """Truncation of the kernel integral cannot be certified at this separation."""


class ToleranceNotMet(DomainError):
    """An adaptive scheme could not certify the requested tolerance."""


class UnsupportedProfile(DomainError):
    """The profile polynomial is outside the class an operation supports."""


class BoxTooSmall(DomainError):
    """Grid box too narrow: slice profiles have not decayed at the box edge."""


class NoPathFound(DomainError):
    """Control path search failed at the given resolution."""
