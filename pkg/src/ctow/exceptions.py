"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from :class:`CtowError`,
which is a ``ValueError`` so callers using plain sklearn idioms still catch it.
"""


class CtowError(ValueError):
    """Base class for user-facing errors."""


class MalformedCsv(CtowError):
    pass


class EmptyDataset(CtowError):
    pass


class UnknownColumn(CtowError):
    pass


class ClassTooSmall(CtowError):
    pass


class BadFoldIndex(CtowError):
    pass


class DimensionMismatch(CtowError):
    pass


class LengthMismatch(CtowError):
    pass


class BadIndex(CtowError):
    pass


class SingleClass(CtowError):
    pass


class InvalidFixedWeight(CtowError):
    pass


class IncompatibleModel(CtowError):
    pass


class CorruptBundle(CtowError):
    pass
