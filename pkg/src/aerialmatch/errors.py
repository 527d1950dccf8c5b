"""Exception types shared across the package."""


class SingularTransform(ValueError):
    """Affine parameters whose linear part is (numerically) not invertible."""


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised by the NaN/Inf guard; the message names the offending op."""


class DivergedLoss(NonFiniteError):
    pass


class DegenerateMean(UserWarning):
    """Harmonic/geometric mean undefined for some entries; arithmetic used instead."""


class PaddingLeak(RuntimeError):
    pass


class FormatViolation(ValueError):
    pass


class InsufficientTexture(ValueError):
    pass


class MissingKeypoints(KeyError):
    pass
