"""Exception hierarchy shared by every subsystem.

Each error carries a short machine-parsable ``code`` used by the CLI for
its ``ERROR <CODE>:`` stderr lines. ``DataError`` subclasses map to exit
code 2 (bad input files or content), ``UsageError`` to exit code 1, and
anything else escaping to the CLI is treated as an internal invariant
violation (exit code 3).
"""


class AtcadetError(Exception):
    code = "ERROR"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsageError(AtcadetError):
    code = "USAGE"


class OutputExists(UsageError):
    code = "OUTPUT_EXISTS"


class BadConfig(UsageError):
    code = "BAD_CONFIG"


class DataError(AtcadetError):
    code = "DATA"


# dsp_frontend
class NotWav(DataError):
    code = "NOT_WAV"


class UnsupportedFormat(DataError):
    code = "UNSUPPORTED_FORMAT"


class TruncatedFile(DataError):
    code = "TRUNCATED_FILE"


class TooShort(DataError):
    code = "TOO_SHORT"


class BadHeader(DataError):
    code = "BAD_HEADER"


class ShapeMismatch(DataError):
    code = "SHAPE_MISMATCH"


class NonFinite(DataError):
    code = "NON_FINITE"


# text_channel
class BadJson(DataError):
    code = "BAD_JSON"


class DuplicateUtt(DataError):
    code = "DUPLICATE_UTT"


class UnknownStyle(DataError):
    code = "UNKNOWN_STYLE"


class EmptyCaption(DataError):
    code = "EMPTY_CAPTION"


class MissingIndexEntry(DataError):
    code = "MISSING_INDEX_ENTRY"


# autodiff_core
class NotScalarLoss(AtcadetError):
    code = "NOT_SCALAR_LOSS"


class DetachedTensor(AtcadetError):
    code = "DETACHED_TENSOR"


# scoring_metrics
class OneClassOnly(DataError):
    code = "ONE_CLASS_ONLY"


class UnknownUtt(DataError):
    code = "UNKNOWN_UTT"


class MissingScore(DataError):
    code = "MISSING_SCORE"


# train_eval
class MissingFeature(DataError):
    code = "MISSING_FEATURE"


class MissingEmbedding(DataError):
    code = "MISSING_EMBEDDING"


class EmptySplit(DataError):
    code = "EMPTY_SPLIT"


# ensemble_stack
class CoverageMismatch(DataError):
    code = "COVERAGE_MISMATCH"


class TooFewExamples(DataError):
    code = "TOO_FEW_EXAMPLES"


class SingularSystem(DataError):
    code = "SINGULAR_SYSTEM"


class DimMismatch(DataError):
    code = "DIM_MISMATCH"


# synth_corpus
class WrongKind(DataError):
    code = "WRONG_KIND"


class InsufficientFamilies(DataError):
    code = "INSUFFICIENT_FAMILIES"


class BadProtocol(DataError):
    code = "BAD_PROTOCOL"
