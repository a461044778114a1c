"""Exception types shared across the solver stack.

Argument validation raises the built-in ``ValueError``; the classes here
cover failures that can only be detected while the numerics are running.
"""


class NumericalError(RuntimeError):
    """A linear solve or iterative method failed to reach its tolerance."""


class InvalidStateError(RuntimeError):
    """An algorithmic precondition was violated at runtime.

    Raised e.g. when the multiplier selection is attempted with a
    non-positive auxiliary-state integral, which the extremum principle
    rules out on any usable grid.
    """
