"""Exception hierarchy shared by every module."""


class GarmentError(Exception):
    """Base class for all package errors."""


class ParseError(GarmentError):
    pass


class EmptyPrompt(ParseError):
    pass


class UnknownPartNoun(ParseError):
    pass


class NoCategory(ParseError):
    pass


class StructureMismatch(GarmentError):
    pass


class InvalidScene(GarmentError):
    pass


class UnknownCategory(GarmentError):
    pass


class EmptyBank(GarmentError):
    pass


class EmptyMask(GarmentError):
    pass


class NonFinite(GarmentError):
    pass


class UnknownToken(GarmentError):
    pass


class InvalidDistribution(GarmentError):
    pass


class InvalidPercentile(GarmentError):
    pass


class LengthMismatch(GarmentError):
    pass


class BadShape(GarmentError):
    pass


class BadTimestep(GarmentError):
    pass


class CfgMismatch(GarmentError):
    pass


class ShapeMismatch(GarmentError):
    pass


class ConfigError(GarmentError):
    pass
