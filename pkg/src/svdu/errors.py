"""Exception taxonomy shared across the package.

InputError covers everything a caller did wrong (bad shapes, bad files,
violated preconditions) and maps to CLI exit code 1. InternalError covers
broken invariants and failed computations (divergence, impossible states)
and maps to exit code 2.
"""


class InputError(ValueError):
    """Invalid input: dimension mismatch, malformed file, bad parameter."""


class InternalError(RuntimeError):
    """An internal invariant failed; indicates a bug or a diverged run."""
