class InvalidStateError(RuntimeError):
    """Raised when an operation is called on data in a state it cannot handle
    (empty mask, empty gallery, closed-set violation, non-finite loss)."""
