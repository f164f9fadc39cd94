"""Exception taxonomy for the pipeline.

Kept in one module because several error classes cross module
boundaries (the judge catches LLM-gateway errors, the evaluator catches
corpus errors, ...). Everything derives from LexjudgeError so callers
can catch the whole family.
"""


class LexjudgeError(Exception):
    """Base class for all package errors."""


# --- corpus ---------------------------------------------------------------

class SchemaError(LexjudgeError):
    """A dataset record failed validation; carries the 1-based line number."""

    def __init__(self, message, line_no=None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no


class MalformedLineError(SchemaError):
    pass


class MissingFieldError(SchemaError):
    def __init__(self, field, line_no=None):
        super().__init__(f"missing or empty field {field!r}", line_no)
        self.field = field


class DuplicateIdError(SchemaError):
    pass


class UnknownLabelError(LexjudgeError):
    """A label is not present in the governing vocabulary."""

    def __init__(self, task, label, line_no=None):
        loc = "" if line_no is None else f" (line {line_no})"
        super().__init__(f"unknown {task} label {label!r}{loc}")
        self.task = task
        self.label = label
        self.line_no = line_no


class BadRatiosError(LexjudgeError):
    pass


class NegativeTermError(LexjudgeError):
    pass


class BinningError(LexjudgeError):
    pass


class InsufficientCasesError(LexjudgeError):
    pass


class MissingReorganizationError(LexjudgeError):
    def __init__(self, missing_ids):
        preview = ", ".join(missing_ids[:5])
        more = "" if len(missing_ids) <= 5 else f" (+{len(missing_ids) - 5} more)"
        super().__init__(f"no reorganization for case ids: {preview}{more}")
        self.missing_ids = list(missing_ids)


# --- llm gateway ----------------------------------------------------------

class LlmError(LexjudgeError):
    """Base for LLM-gateway failures; the judge degrades on any of these."""


class PromptTooLongError(LlmError):
    pass


class RemoteTimeoutError(LlmError):
    pass


class RemoteRefusalError(LlmError):
    pass


class FixtureMissError(LlmError):
    def __init__(self, key):
        super().__init__(f"no recorded response for request key {key}")
        self.key = key


class CorruptTranscriptError(LexjudgeError):
    pass


# --- reorganizer ----------------------------------------------------------

class ParseFailureError(LexjudgeError):
    pass


# --- predictor ------------------------------------------------------------

class EmptyAfterTokenizationError(LexjudgeError):
    pass


class DimensionMismatchError(LexjudgeError):
    pass


class DegenerateLabelsError(LexjudgeError):
    pass


class NonFiniteLossError(LexjudgeError):
    pass


class BadNError(LexjudgeError):
    pass


class VocabMismatchError(LexjudgeError):
    pass


class ModelFormatError(LexjudgeError):
    pass


# --- retriever ------------------------------------------------------------

class EmptyTextError(LexjudgeError):
    pass


class ZeroNormError(LexjudgeError):
    pass


class BatchTooSmallError(LexjudgeError):
    pass


class StaleModelHashError(LexjudgeError):
    pass


class UntrainedModelError(LexjudgeError):
    pass


class NoCaseWithLabelError(LexjudgeError):
    def __init__(self, task, label):
        super().__init__(f"no database case carries {task} label {label!r}")
        self.task = task
        self.label = label


# --- judge ----------------------------------------------------------------

class BudgetUnsatisfiableError(LexjudgeError):
    pass


# --- eval -----------------------------------------------------------------

class LengthMismatchError(LexjudgeError):
    pass


class EmptyTableError(LexjudgeError):
    pass


class ConfigError(LexjudgeError):
    pass
