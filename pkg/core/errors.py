"""Exception hierarchy shared by every VolMate component."""

from typing import Iterable, List, Optional


class VolMateError(Exception):
    """Base class for all errors raised by VolMate."""


class ConfigError(VolMateError, ValueError):
    """A configuration value or a shape implied by it is invalid."""


class InvalidInputError(VolMateError, ValueError):
    """An input tensor, text or sample violates an operation's precondition."""


class NumericError(VolMateError, ArithmeticError):
    """A computation produced non-finite values."""


class TokenizerError(InvalidInputError):
    """A word is missing from the closed vocabulary."""

    def __init__(self, word: str):
        self.word = word
        super().__init__(f"Out-of-vocabulary word: '{word}'")


class CorpusExhaustedError(InvalidInputError):
    """The scene space cannot supply the requested number of unique samples."""


class ManifestError(VolMateError):
    """A weight archive does not match the expected tensor manifest."""

    def __init__(
        self,
        message: str,
        missing: Optional[Iterable[str]] = None,
        extra: Optional[Iterable[str]] = None
    ):
        self.missing: List[str] = sorted(missing or [])
        self.extra: List[str] = sorted(extra or [])
        details = []
        if self.missing:
            details.append(f"missing={self.missing}")
        if self.extra:
            details.append(f"extra={self.extra}")
        if details:
            message = f"{message} ({'; '.join(details)})"
        super().__init__(message)


class ChecksumError(ManifestError):
    """A tensor blob failed its CRC32 check."""

    def __init__(self, name: str, expected: int, found: int):
        self.name = name
        super().__init__(
            f"Checksum mismatch for tensor '{name}': expected {expected:#010x}, found {found:#010x}"
        )


class FormatVersionError(ManifestError):
    """A checkpoint was written by an incompatible format version."""

    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(
            f"Checkpoint format version {found} is not supported (expected {expected})"
        )


class TrainingAbortedError(VolMateError, RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, step: int, sample_id: str):
        self.step = step
        self.sample_id = sample_id
        super().__init__(f"Non-finite loss at step {step} (sample '{sample_id}')")
