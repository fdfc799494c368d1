"""Exception taxonomy shared across the toolkit.

Callers can rely on the split when mapping failures to CLI exit codes:
contract/structure problems are validation errors, data/format/degeneracy
problems are data errors.
"""


class DroError(Exception):
    """Base class for every error raised by this package."""


class UrdfError(DroError):
    """Malformed URDF XML; the message names the offending line when known."""


class StructureError(DroError):
    """Kinematic structure is unusable: loops, multiple roots, missing limits."""


class ContractError(DroError):
    """A caller violated an operation precondition (shapes, ranges, order)."""


class DataError(DroError):
    """Input data is well-formed but unusable (empty mesh, non-finite values)."""


class DegeneracyError(DroError):
    """Geometry is too degenerate for a well-posed solve."""


class FormatError(DroError):
    """A binary file is malformed; the message carries the byte offset."""


class StageError(DroError):
    """Wraps a pipeline-stage failure with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
