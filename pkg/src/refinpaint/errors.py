"""Exception types shared across modules."""


class DomainError(ValueError):
    """An argument fell outside its documented domain."""


class ShapeMismatch(ValueError):
    """Tensor or mask shapes are incompatible for the requested operation."""
