"""Exception hierarchy.

Everything raised on bad user input derives from ``InputError`` so the CLI can
map it to exit code 2 in one place.
"""


class PUContrastError(Exception):
    pass


class InputError(PUContrastError, ValueError):
    """Invalid configuration, data or arguments."""


class DimensionError(InputError):
    pass


class ContractError(InputError):
    pass


class ProvenanceError(PUContrastError):
    """A tensor was not produced on the tape it is being differentiated on."""


class NumericError(PUContrastError, ArithmeticError):
    pass


class DegenerateInputError(InputError):
    pass


class CompositionError(InputError):
    """A batch lacks a required kind of sample."""


class ConfigError(InputError):
    pass


class ParseError(InputError):
    pass


class SchemaError(InputError):
    pass


class LabelError(InputError):
    """An operation needs true labels the dataset does not carry."""


class IntegrityError(InputError):
    pass


class UnsupportedVersionError(InputError):
    pass


class KindError(InputError):
    pass


class TrainingError(PUContrastError, RuntimeError):
    pass
