class InvalidArgument(ValueError):
    """Raised when an input violates an operation's precondition."""


class InvalidState(RuntimeError):
    """Raised when an object is used in a state that forbids the call."""
