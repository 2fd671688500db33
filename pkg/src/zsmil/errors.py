"""Exception hierarchy shared by all zsmil modules.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit-code contract: 2 usage, 3 data, 4 numeric.
"""


class ZsmilError(Exception):
    exit_code = 3


class UsageError(ZsmilError):
    exit_code = 2


class NumericError(ZsmilError):
    exit_code = 4


# --- linear algebra -------------------------------------------------------

class ShapeMismatch(ZsmilError):
    pass


class ZeroNorm(NumericError):
    pass


# --- embedding files / manifests ------------------------------------------

class BadMagic(ZsmilError):
    pass


class UnsupportedVersion(ZsmilError):
    pass


class TruncatedPayload(ZsmilError):
    pass


class NonFiniteValue(ZsmilError):
    pass


class ParseError(ZsmilError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class LabelOutOfRange(ZsmilError):
    pass


class MissingFile(ZsmilError):
    pass


class InvalidSpec(UsageError):
    pass


# --- prototypes ------------------------------------------------------------

class DimMismatch(ZsmilError):
    pass


class DuplicateClass(ZsmilError):
    pass


class EmptyTemplates(ZsmilError):
    pass


class EnsembleDegenerate(ZsmilError):
    pass


class SidecarMismatch(ZsmilError):
    pass


class InvalidPrototypes(ZsmilError):
    pass


# --- aggregation / classification -----------------------------------------

class EmptyBag(ZsmilError):
    pass


class StaleRecord(ZsmilError):
    pass


class StaleCache(ZsmilError):
    pass


# --- training / metrics -----------------------------------------------------

class InsufficientBags(ZsmilError):
    pass


class NonFiniteLoss(NumericError):
    pass


class EmptyClass(ZsmilError):
    pass


class EmptyList(ZsmilError):
    pass
