"""Exception types shared across the package."""


class NumericError(RuntimeError):
    """A non-finite value (NaN/Inf) showed up where the math guarantees one cannot."""


class DataError(ValueError):
    """Malformed input data: bad TSV rows, empty datasets, impossible sampling requests."""


class CodecError(ValueError):
    """Corrupt or mismatched binary records (checkpoints, user states, state stores)."""
