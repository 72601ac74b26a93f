"""Error taxonomy shared across modules.

ValidationError means the inputs or configuration are unacceptable and the
caller should fix them (CLI exit code 1). ComputationError means a run failed
while doing otherwise-valid work, e.g. an iteration cap was hit (exit code 2).
"""


class ValidationError(ValueError):
    """Bad input data, config, or arguments."""


class ComputationError(RuntimeError):
    """A well-formed run that could not finish: divergence, cap exhaustion."""
