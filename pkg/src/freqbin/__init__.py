"""Numerical laboratory for frequency-bin encoded microwave photons."""

__version__ = "0.1.0"
SCHEMA = 1
HEADER = f"# freqbin-lab v{__version__} schema={SCHEMA}"

from .errors import FreqbinError, FreqbinWarning, InvariantViolation, NumericalError, UsageError  # noqa: E402

__all__ = [
    "__version__",
    "HEADER",
    "FreqbinError",
    "FreqbinWarning",
    "InvariantViolation",
    "NumericalError",
    "UsageError",
]
