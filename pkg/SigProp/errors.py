class SigPropError(Exception):
    """
    Base class for all errors raised by SigProp
    """


class DomainError(SigPropError, ValueError):
    """Scalar argument outside the domain of a closed-form map"""


class NumericalError(SigPropError, ArithmeticError):
    """Non-finite value produced by quadrature or iteration"""


class NonMonotoneBoundary(SigPropError):
    """The regime label flips more than once along the residual-strength axis"""

    def __init__(self, alphas, labels):
        self.alphas = list(alphas)
        self.labels = list(labels)
        flips = ', '.join('%.4g:%s' % (a, l.value) for a, l in zip(self.alphas, self.labels))
        super(NonMonotoneBoundary, self).__init__('non-monotone regime boundary along alpha_sa (%s)' % flips)


class NoTrainableRegion(SigPropError):
    """No residual strength up to the search limit makes the configuration trainable"""

    def __init__(self, alpha_max):
        self.alpha_max = alpha_max
        super(NoTrainableRegion, self).__init__('no trainable alpha_sa found up to %g' % alpha_max)


class ZeroRowError(SigPropError, ValueError):
    """A token with zero norm cannot be layer-normalised"""


class ConfigError(SigPropError, ValueError):
    """Invalid run configuration; carries the offending key and, for syntax errors, the line"""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        if line is not None:
            message = 'line %d: %s' % (line, message)
        if key is not None:
            message = '%s: %s' % (key, message)
        super(ConfigError, self).__init__(message)


class LengthMismatchError(SigPropError, ValueError):
    """Theory and empirical trajectories have different numbers of layers"""
