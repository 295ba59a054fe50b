"""Exception types shared across the package."""


class DjsccError(Exception):
    """Base class for all package-specific errors."""


# --- data loading / splitting ---

class MissingPath(DjsccError):
    pass


class CorruptImage(DjsccError):
    pass


class ShapeMismatch(DjsccError):
    pass


class EmptyDataset(DjsccError):
    pass


class BadFractions(DjsccError):
    pass


class UnknownKind(DjsccError):
    pass


# --- channel ---

class ZeroVector(DjsccError):
    pass


class NonPositivePower(DjsccError):
    pass


class NearZeroFading(DjsccError):
    pass


# --- codec ---

class NonFiniteActivation(DjsccError):
    pass


class LayerOutOfRange(DjsccError):
    pass


class OddLength(DjsccError):
    pass


class CheckpointVersionMismatch(DjsccError):
    pass


# --- metrics ---

class ImageTooSmall(DjsccError):
    pass


# --- adaptation ---

class EmptyValidationSet(DjsccError):
    pass


class EmptyTable(DjsccError):
    pass


# --- training ---

class BadRange(DjsccError):
    pass


class DivergedLoss(DjsccError):
    pass


class DiskWriteFailure(DjsccError):
    pass


# --- encryption ---

class BadParams(DjsccError):
    pass


class MessageOutOfRange(DjsccError):
    pass


class KeyFileCorrupt(DjsccError):
    pass


# --- baseline ---

class BudgetTooSmall(DjsccError):
    pass
