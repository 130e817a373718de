"""Exception hierarchy shared across the pipeline."""


class EarnsignalError(Exception):
    """Base class for all package errors."""


class EmptyBody(EarnsignalError):
    """No body content survived HTML parsing/cleaning."""


class CalendarOutOfRange(EarnsignalError):
    """Announcement timestamp falls outside the trading calendar."""


class NoForecast(EarnsignalError):
    """No analyst forecast inside the 90-day consensus window."""


class NonPositivePrice(EarnsignalError):
    """Scaling price must be strictly positive."""


class EmptyVocabulary(EarnsignalError):
    """Vocabulary construction produced no terms."""


class EmptyBatch(EarnsignalError):
    """A topic-model minibatch contained no documents."""


class MissingVintage(EarnsignalError):
    """No topic model trained through the prior year is available."""


class BadMagic(EarnsignalError):
    """Binary file header magic or length is wrong."""


class DimMismatch(EarnsignalError):
    """Vector/matrix dimension does not match the declared kind."""


class UnknownDoc(EarnsignalError):
    """doc_id not present in the corpus manifest."""


class NoOverlap(EarnsignalError):
    """Two feature sets share no doc ids."""


class MissingFeature(EarnsignalError):
    """Events lack feature records; carries the offending doc ids."""

    def __init__(self, doc_ids):
        self.doc_ids = list(doc_ids)
        super().__init__(f"missing features for {len(self.doc_ids)} docs: "
                         f"{self.doc_ids[:10]}")


class NotConverged(EarnsignalError):
    """Optimizer hit max iterations; best iterate attached."""

    def __init__(self, fit):
        self.fit = fit
        super().__init__("coordinate descent did not converge")


class DegenerateYear(EarnsignalError):
    """Train-year signal has zero variance."""


class Singular(EarnsignalError):
    """Design matrix is singular."""


class DimensionTooLarge(EarnsignalError):
    """Exact Shapley enumeration capped at 12 features."""


class NoOverlapDates(EarnsignalError):
    """Return series and factor file share no dates."""


class KindMismatch(EarnsignalError):
    """Fit kind does not match the metatopic map kind."""


class DegenerateDenominator(EarnsignalError):
    """All metatopic variance terms are zero."""


class LabelerUnavailable(EarnsignalError):
    """External labeling endpoint could not be reached."""


class MissingQuote(EarnsignalError):
    """A portfolio member has no quote snapshot."""


class EmptyDay(EarnsignalError):
    """No tradable long/short pair on the day."""


class ConfigInvalid(EarnsignalError):
    """Pipeline configuration failed validation."""


class MissingUpstream(EarnsignalError):
    """A required upstream artifact is absent."""
