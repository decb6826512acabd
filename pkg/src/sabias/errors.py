"""Exception hierarchy shared by all modules."""


class SABiasError(Exception):
    """Base class for every error raised by this package."""


# markov_core
class ChainError(SABiasError, ValueError):
    pass


class RowNotStochastic(ChainError):
    pass


class Reducible(ChainError):
    pass


class Periodic(ChainError):
    pass


class SolveFailed(SABiasError):
    pass


class ZeroMass(SABiasError):
    pass


class NotConverged(SABiasError):
    pass


class SingularFundamental(SABiasError):
    pass


# drift_models
class ShapeMismatch(SABiasError, ValueError):
    pass


class NoConvergence(SABiasError):
    pass


class SingularJacobian(SABiasError):
    pass


class UnsafeModel(SABiasError):
    """Raised when a tabulated model is used where monotonicity is required."""


# sa_engine
class NonFiniteIterate(SABiasError, FloatingPointError):
    def __init__(self, message, replica=None, step=None):
        super().__init__(message)
        self.replica = replica
        self.step = step


class DegenerateFit(SABiasError):
    pass


class EmptyWindow(SABiasError, ValueError):
    pass


class TooFewBatches(SABiasError, ValueError):
    pass


# bias_analytics
class NotHurwitz(SABiasError):
    pass


class SingularKroneckerSum(SABiasError):
    pass


class InsufficientBurnIn(SABiasError, ValueError):
    pass


class IllConditionedFit(SABiasError):
    pass


# inference
class TooFewReplicas(SABiasError, ValueError):
    pass


class SingularSigma(SABiasError):
    pass


# cli
class ConfigInvalid(SABiasError, ValueError):
    pass


class MissingArtifacts(SABiasError):
    pass
