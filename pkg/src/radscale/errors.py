"""Exception hierarchy.

Every error raised deliberately by this package derives from RadscaleError,
so callers can catch one type at the boundary.  Each subclass also inherits
from the closest builtin so existing ``except ValueError`` style handlers
keep working.
"""


class RadscaleError(Exception):
    """Base class for all errors raised by radscale."""


class InputError(RadscaleError, ValueError):
    """Caller passed values that violate a documented precondition."""


class ConfigError(InputError):
    """A configuration file or dict is malformed or inconsistent."""


class SingularityError(RadscaleError, ArithmeticError):
    """A spatial mapping has a vanishing or non-finite Jacobian determinant."""


class StaleBatchError(RadscaleError, RuntimeError):
    """A sample batch was replayed against a field that has since changed."""


class DivergenceError(RadscaleError, RuntimeError):
    """Training produced a non-finite loss; the run was aborted."""
