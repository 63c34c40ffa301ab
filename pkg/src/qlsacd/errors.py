"""Exception types shared across the package."""


class QlsacdError(Exception):
    """Base class for all package errors."""


class DomainError(QlsacdError, ValueError):
    """An argument or parameter is outside its mathematical domain."""


class DegenerateDataError(QlsacdError, ValueError):
    """Input data carries no usable variation (e.g. constant durations)."""


class FilterDivergenceError(QlsacdError, RuntimeError):
    """The conditional-quantile recursion overflowed.

    Attributes
    ----------
    t : int
        Index (0-based) of the observation where the recursion diverged.
    eta : float
        Link-scale value that triggered the overflow guard.
    """

    def __init__(self, t, eta):
        self.t = int(t)
        self.eta = float(eta)
        super().__init__(
            f"conditional-quantile recursion diverged at t={self.t} (eta={self.eta:.6g})"
        )


class FitError(QlsacdError, RuntimeError):
    """Maximum-likelihood optimization failed."""


class ProfileGridError(FitError):
    """Every candidate on a profile grid failed to fit.

    Attributes
    ----------
    failures : dict
        Mapping of grid value -> error message.
    """

    def __init__(self, failures):
        self.failures = dict(failures)
        lines = ", ".join(f"{k}: {v}" for k, v in self.failures.items())
        super().__init__(f"all profile-grid fits failed ({lines})")
