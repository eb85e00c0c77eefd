"""Exception hierarchy shared by every module."""


class CrossAsdError(Exception):
    """Base class for all errors raised by the package."""


class ParseError(CrossAsdError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class ValidationError(CrossAsdError):
    def __init__(self, message, item_id=None):
        self.item_id = item_id
        prefix = f"[{item_id}] " if item_id is not None else ""
        super().__init__(prefix + message)


class InvalidParameter(CrossAsdError, ValueError):
    pass


class DimensionMismatch(CrossAsdError, ValueError):
    pass


class ZeroNorm(CrossAsdError, ValueError):
    pass


class TooFewElements(CrossAsdError, ValueError):
    pass


class LengthMismatch(CrossAsdError, ValueError):
    pass


class OrderMismatch(CrossAsdError, ValueError):
    pass


class PinConflict(CrossAsdError):
    pass


class CacheInconsistency(CrossAsdError):
    pass


class MissingGroundTruth(CrossAsdError):
    pass


class NoPositives(CrossAsdError, ValueError):
    pass


class SingleClass(CrossAsdError, ValueError):
    pass


class EmptySample(CrossAsdError, ValueError):
    pass


class InvalidConfig(CrossAsdError, ValueError):
    pass


class TooLarge(CrossAsdError):
    pass
