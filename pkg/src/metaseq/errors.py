"""Exception hierarchy shared by all metaseq modules."""


class MetaseqError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MetaseqError):
    """Array shapes are incompatible for the requested operation."""


class WindowError(MetaseqError):
    """Convolution window does not fit the (padded) sequence."""


class ParameterError(MetaseqError):
    """A configuration value or argument is outside its legal range."""


class StateError(MetaseqError):
    """An object is not in the state the operation requires."""


class ContractError(MetaseqError):
    """A caller-side precondition was violated."""


class LabelError(MetaseqError):
    """A class label lies outside the expected range."""


class NumericError(MetaseqError):
    """A numeric routine failed or produced non-finite values."""


class ParseError(MetaseqError):
    """A text input file is malformed."""


class FormatError(MetaseqError):
    """A binary file does not match its declared format."""


class TruncatedError(FormatError):
    """A binary file ended before its declared payload was complete."""


class RangeError(MetaseqError):
    """A numeric feature value is outside its documented interval."""


class AlignmentError(MetaseqError):
    """Embedding rows and dataset tokens do not line up."""


class CompatibilityError(MetaseqError):
    """A stored artifact does not match the configuration in use."""


class InputError(MetaseqError):
    """An input collection is empty or otherwise unusable."""


class DegeneracyError(MetaseqError):
    """The input is degenerate (zero variance, rank zero, empty)."""
