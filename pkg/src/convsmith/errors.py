"""Exception types shared across the pipeline."""

from __future__ import annotations


class ConvsmithError(Exception):
    """Base class for all convsmith errors."""


class NotFoundError(ConvsmithError, KeyError):
    """Entity, type, or embedding looked up by id is absent."""


class ContractViolation(ConvsmithError, ValueError):
    """A caller broke an operation precondition (bad batch size, wrong mode)."""


class IngestSourceError(ConvsmithError):
    """The ingest source could not be read at all (unlike malformed lines)."""


class EmbeddingFormatError(ConvsmithError):
    """Vector file is inconsistent; message carries the offending row number."""


class SelectorParseError(ConvsmithError):
    """No parseable bracketed list in a selector response; carries raw text."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class SelectorError(ConvsmithError):
    """Predicate selection failed mid-way; lists the batches that completed."""

    def __init__(self, message: str, completed_batches: int = 0):
        super().__init__(message)
        self.completed_batches = completed_batches


class TemplateParseError(ConvsmithError):
    """Template response had no extractable JSON object; carries raw text."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class TemplateValidationError(ConvsmithError):
    """Template JSON parsed but violated the template-set rules."""

    def __init__(self, violations):
        self.violations = list(violations)
        detail = "; ".join(str(v) for v in self.violations[:5])
        super().__init__(f"{len(self.violations)} violation(s): {detail}")


class AssemblyError(ConvsmithError):
    """Conversation assembly failed (missing template coverage or a leftover
    placeholder in an emitted question)."""


class AnswerParseError(ConvsmithError):
    """Candidate answer text could not be parsed at all (empty response)."""


class JudgeParseError(ConvsmithError):
    """Judge response had no well-formed binary ratings list of the right length."""


class GatewayError(ConvsmithError):
    """A chat request failed permanently (retries exhausted or fatal status)."""


class TransientGatewayError(GatewayError):
    """A retryable chat failure (throttling, 5xx, network hiccup)."""


class ReplayMissError(GatewayError):
    """Replay gateway got a request whose hash is not in the transcript."""

    def __init__(self, request_hash: str):
        super().__init__(f"no transcript entry for request hash {request_hash}")
        self.request_hash = request_hash


class PipelineConfigError(ConvsmithError):
    """Pipeline configuration is invalid; raised before any stage runs."""


class IneligibleWordError(ConvsmithError):
    """A typo attack cannot apply to the given word."""
