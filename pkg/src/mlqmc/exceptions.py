"""Exception types shared across the package; the CLI maps them to exit codes."""


class UsageError(ValueError):
    """Invalid arguments or violated preconditions (CLI exit code 2)."""


class ResourceError(RuntimeError):
    """A requested computation exceeds the configured resource bounds (exit code 3)."""


class InternalError(RuntimeError):
    """An invariant that the mathematics guarantees was found violated."""
