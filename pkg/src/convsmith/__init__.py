"""convsmith: conversational KGQA dataset generation and evaluation.

Pipeline stages: ingest a knowledge-graph dump into an indexed store,
extract and select predicates per entity type, find related entities by
embedding similarity, materialize facts, generate question templates
through a chat-model gateway, assemble slot-filled conversations with
configurable linguistic phenomena, and score candidate models with a
binary LLM judge.
"""

__version__ = "0.1.0"

from .errors import ConvsmithError

__all__ = ["ConvsmithError", "__version__"]
