"""Exception types shared across the pipeline.

The CLI maps these onto stable exit codes: parameter problems exit 2,
state/prerequisite problems exit 3, and I/O problems (OSError) exit 4.
"""


class ParameterError(ValueError):
    """Invalid argument value (bad range, bad enum, non-finite input)."""

    exit_code = 2


class ShapeError(ParameterError):
    """Tensor/image shapes that do not line up; message names both shapes."""


class FormatError(ParameterError):
    """Malformed input file (OBJ, tensor container, manifest)."""


class ConsistencyError(ParameterError):
    """Inputs that violate a cross-input invariant (e.g. overlapping masks)."""


class StateError(RuntimeError):
    """Operation attempted before its prerequisites exist (missing
    checkpoint, frozen weights not loaded, backward before forward)."""

    exit_code = 3
