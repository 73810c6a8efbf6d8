"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage/config -> 1, IO/corruption -> 2,
numerical/degenerate input -> 3.
"""


class LabError(Exception):
    exit_code = 1


class ConfigError(LabError, ValueError):
    exit_code = 1


class ContractError(LabError, ValueError):
    """A call violated an operation's precondition."""

    exit_code = 1


class ShapeError(ContractError):
    pass


class DomainError(LabError, ValueError):
    """Numeric input outside the supported domain (non-finite, subnormal, out of range)."""

    exit_code = 3


class DegenerateInputError(LabError, ValueError):
    exit_code = 3


class CorruptionError(LabError, IOError):
    exit_code = 2
