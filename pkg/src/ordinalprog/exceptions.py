"""Exception types raised across the package.

All derive from ``ValueError`` so callers that only care about bad input can
catch one thing.
"""


class OrdinalError(ValueError):
    pass


class ZeroDenominator(OrdinalError):
    pass


class EmptyCategory(OrdinalError):
    pass


class OneClassOnly(OrdinalError):
    pass


class TooFewValues(OrdinalError):
    pass


class EmptyTrainingSet(OrdinalError):
    pass


class InsufficientDonors(OrdinalError):
    pass


class UnknownCategory(OrdinalError):
    pass


class SeparationError(OrdinalError):
    pass


class SingularDesign(OrdinalError):
    pass


class NonFiniteLoss(OrdinalError):
    pass


class EmptyTokenSet(OrdinalError):
    pass


class DimensionMismatch(OrdinalError):
    pass


class NotNested(OrdinalError):
    pass


class NonConvergence(OrdinalError):
    pass


class DegenerateInput(OrdinalError):
    pass


class TooFewPoints(OrdinalError):
    pass


class TooFewPerClass(OrdinalError):
    pass


class TooManyTokens(OrdinalError):
    pass


class UnmappableToken(OrdinalError):
    pass
