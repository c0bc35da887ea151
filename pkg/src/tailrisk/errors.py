"""Exception hierarchy. The CLI maps these onto process exit codes."""


class TailriskError(Exception):
    """Base class for all package errors."""


class ConfigError(TailriskError):
    """Invalid or conflicting configuration (exit code 2)."""


class DataError(TailriskError):
    """Malformed, missing or inconsistent input data (exit code 3)."""


class EstimationError(TailriskError):
    """Optimization or model fitting failed (exit code 4)."""


class EvaluationDegenerateError(TailriskError):
    """An evaluation procedure has too little data to be meaningful (exit code 5)."""


class FilterAbortError(EstimationError):
    """The risk recursion produced a non-finite state.

    Carries the first bad time index so the offending parameter region can
    be reported; the estimator converts this into a +inf objective.
    """

    def __init__(self, t, detail=""):
        self.t = int(t)
        msg = f"risk recursion diverged at index {self.t}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    EstimationError: 4,
    EvaluationDegenerateError: 5,
}
