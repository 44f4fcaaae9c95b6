"""
Exceptions raised by marblr
"""
import numpy as np


class MarblrError(Exception):
    """Base class for all marblr errors"""


class DimensionError(MarblrError, ValueError):
    """Vector/matrix dimensions do not agree"""


class NotPositiveDefiniteError(MarblrError, np.linalg.LinAlgError):
    """A covariance matrix failed Cholesky factorization"""


class DegenerateUpdateError(MarblrError, np.linalg.LinAlgError):
    """The Hessian of a Newton update is singular or indefinite"""


class ConfigError(MarblrError, ValueError):
    """Invalid configuration value"""


class StreamFormatError(MarblrError, ValueError):
    """A stream file does not follow the stream CSV schema"""
