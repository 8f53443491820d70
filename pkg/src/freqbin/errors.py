"""Exception and warning types.

Every error carries a short machine-readable ``flag`` (e.g. ``"invalid-dimension"``)
that the command-line front end echoes verbatim, and an exit code class.
"""


class FreqbinError(Exception):
    """Base class. ``exit_code`` follows the CLI convention (2 usage, 3 numerical, 4 invariant)."""

    exit_code = 3

    def __init__(self, flag, message=""):
        self.flag = flag
        super().__init__(f"{flag}: {message}" if message else flag)


class UsageError(FreqbinError):
    exit_code = 2


class NumericalError(FreqbinError):
    exit_code = 3


class InvariantViolation(FreqbinError):
    exit_code = 4


class FreqbinWarning(UserWarning):
    """Warning with a flag attribute; the CLI collects these into its report."""

    def __init__(self, flag, message=""):
        self.flag = flag
        super().__init__(f"{flag}: {message}" if message else flag)
