"""Exception hierarchy shared by the numerical modules."""


class MMOTError(Exception):
    """Base class for all errors raised by the toolkit."""


class CutLocusError(MMOTError):
    """A point sits on (or within tolerance of) the cut locus of another."""


class ConvergenceError(MMOTError):
    """No descent start reached the requested gradient tolerance."""


class NonUniqueError(MMOTError):
    """An operation needing a unique Karcher minimizer got a non-unique one."""


class SizeCapError(MMOTError):
    """A tensor or enumeration would exceed its configured size cap."""


class CapError(SizeCapError):
    """Brute-force enumeration exceeds the oracle cap."""


class NumericalError(MMOTError):
    """The simplex method lost feasibility, cycled, or hit a singular basis."""


class IterationLimit(MMOTError):
    """An iterative solver ran out of iterations before reaching tolerance."""


class ConfigError(MMOTError):
    """A run configuration is malformed or incomplete."""
