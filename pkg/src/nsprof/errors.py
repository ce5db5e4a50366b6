"""Exception hierarchy shared across the package."""


class NsprofError(Exception):
    """Base class for every error raised by nsprof."""


class InputError(NsprofError):
    """Input could not be turned into a valid trace (CLI exit code 2)."""


class MalformedInput(InputError):
    pass


class UnmatchedSpan(InputError):
    def __init__(self, lane: str, name: str, detail: str = "begin without end"):
        super().__init__(f"unmatched span {name!r} on lane {lane!r}: {detail}")
        self.lane = lane
        self.name = name


class NegativeTime(InputError):
    pass


class StrictModeUnknownField(InputError):
    pass


class PartialOverlap(InputError):
    def __init__(self, lane: str, first, second):
        super().__init__(
            f"spans overlap without containment on lane {lane!r}: "
            f"{first.name!r} [{first.start_ns}, {first.end_ns}) and "
            f"{second.name!r} [{second.start_ns}, {second.end_ns})"
        )
        self.lane = lane
        self.first = first
        self.second = second


class NegativeSelf(NsprofError):
    pass


class TaxonomyError(NsprofError):
    """Rule-file or taxonomy mismatch (CLI exit code 3)."""


class BadPattern(TaxonomyError):
    pass


class UndeclaredCategory(TaxonomyError):
    pass


class DuplicateCategory(TaxonomyError):
    pass


class MixedTaxonomy(TaxonomyError):
    pass


class WrongTaxonomy(TaxonomyError):
    pass


class ShapeMismatch(NsprofError):
    pass


class ZeroWallTime(NsprofError):
    pass


class EmptyBreakdown(NsprofError):
    pass


class UnsupportedFormat(NsprofError):
    pass
