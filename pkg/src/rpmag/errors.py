"""Exception types raised by the simulation and metrology layers."""


class RpmagError(Exception):
    """Base class for package-specific errors."""


class ConfigError(RpmagError):
    """Invalid model configuration or integrator settings."""


class UnsupportedSystemError(RpmagError):
    """Spin system outside the supported two-electron layout."""


class HorizonError(RpmagError):
    """Propagation reached the time horizon without trace convergence."""


class DegenerateProbeError(RpmagError):
    """Time-integrated state has no weight; no probe can be formed."""


class DegenerateStatisticsError(RpmagError):
    """Singlet probability pinned at 0 or 1 with a non-zero derivative."""


class NumericalDerivativeError(RpmagError):
    """Finite-difference state derivative failed its consistency checks."""


class UndefinedRatioError(RpmagError):
    """CFI/QFI ratio requested where the QFI vanishes."""
