"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class RvaeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(RvaeError):
    """Bad or missing configuration (unknown key, unparsable value)."""


class DataError(RvaeError):
    """Bad input data (file format, dimension mismatch, missing source)."""


class NumericError(RvaeError):
    """Numeric failure (non-finite value produced during computation)."""


class ShapeError(DataError):
    """Operand shapes incompatible with the requested operation."""


class NonFiniteError(NumericError):
    """An operation produced NaN or infinity."""

    def __init__(self, op_kind: str, detail: str = ""):
        self.op_kind = op_kind
        msg = f"non-finite output in op '{op_kind}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IdxError(DataError):
    """Base class for IDX container parsing failures."""


class IdxMagicError(IdxError):
    """IDX file has an unrecognized magic number."""


class IdxTruncatedError(IdxError):
    """IDX payload is shorter than the header promises."""


class IdxDimensionError(IdxError):
    """IDX dimensions are invalid or overflow a sane size bound."""
