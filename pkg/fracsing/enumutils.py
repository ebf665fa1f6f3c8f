from enum import Enum
from typing import Type

from fracsing.errors import ConfigurationError


class StrEnumWithStr(str, Enum):
    def __str__(self):
        return self.value

    def to_json(self):
        return self.value


def parse_enum[T: StrEnumWithStr](enum_type: Type[T], val: str | T) -> T:
    try:
        return enum_type(val)
    except ValueError:
        raise ConfigurationError("Unknown %s value '%s', expected one of: %s" % (
            enum_type.__name__, val, ", ".join(e.value for e in enum_type)))


class Ordering(StrEnumWithStr):
    LE = "le"
    GE = "ge"
    EQUAL = "equal"
    INCOMPARABLE = "incomparable"


class Direction(StrEnumWithStr):
    UPWARD = "upward"
    DOWNWARD = "downward"


class SolutionKind(StrEnumWithStr):
    MINIMAL = "minimal"
    MAXIMAL = "maximal"
    DEFLATED = "deflated"


class OutputFormat(StrEnumWithStr):
    CSV = "csv"
    JSON = "json"


class Grading(StrEnumWithStr):
    CHEBYSHEV = "chebyshev"


class NonlinearityKind(StrEnumWithStr):
    EXEMPLAR = "exemplar"
    FROZEN = "frozen"
    CUSTOM = "custom"
