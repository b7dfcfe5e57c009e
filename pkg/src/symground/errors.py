"""Exception hierarchy shared by all pipeline stages."""


class SymgroundError(Exception):
    """Base class for every error raised by this package."""


# -- parsing ---------------------------------------------------------------

class ParseError(SymgroundError):
    """A sentence could not be turned into an abstract step.

    ``sentence_index`` is filled in by :func:`symground.plan_parser.parse_plan`
    so callers can tell which line of a narration failed.
    """

    sentence_index = None

    def __str__(self):
        msg = super().__str__()
        if self.sentence_index is not None:
            return f"sentence {self.sentence_index}: {msg}"
        return msg


class EmptySentence(ParseError):
    pass


class UnknownWord(ParseError):
    pass


class GrammarViolation(ParseError):
    pass


class DisconnectedGraph(ParseError):
    pass


class UnknownVerb(ParseError):
    pass


class NoTargetNoun(ParseError):
    pass


class PronounTarget(ParseError):
    pass


class EmptyPlan(ParseError):
    pass


# -- simulation --------------------------------------------------------------

class PlacementFailure(SymgroundError):
    pass


class NoIntersection(SymgroundError):
    pass


# -- segmentation ------------------------------------------------------------

class InvalidPartition(SymgroundError):
    pass


class TraceTooShort(SymgroundError):
    pass


# -- features ----------------------------------------------------------------

class EmptyForeground(SymgroundError):
    pass


class MissingPatchFile(SymgroundError):
    pass


# -- learning ----------------------------------------------------------------

class TooFewSamples(SymgroundError):
    pass


class AllFiltered(SymgroundError):
    pass


class Unlearnable(SymgroundError):
    pass


class NoLearnableSymbols(SymgroundError):
    pass


# -- evaluation --------------------------------------------------------------

class LengthMismatch(SymgroundError):
    pass


class StageError(SymgroundError):
    """Wraps a failure inside :func:`symground.pipeline.run_pipeline`."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
