"""Exception types shared across the toolkit."""


class ParseError(ValueError):
    """A dataset file is malformed; the message names the offending line."""


class DivergenceError(RuntimeError):
    """A solver produced a non-finite objective; the message names the sweep."""
