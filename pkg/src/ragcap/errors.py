"""Exception taxonomy for the ragcap engine.

The CLI maps these onto exit codes: input/usage problems exit 2,
provider/transport problems exit 3, everything unexpected exits 4.
"""


class RagcapError(Exception):
    """Base class for all engine errors."""


class IngestError(RagcapError):
    """A corpus file could not be parsed or yielded no usable captions."""


class DegenerateEmbeddingError(RagcapError):
    """A zero (or non-finite) vector cannot be normalized."""


class DimensionMismatchError(RagcapError):
    """A vector's dimension disagrees with the store or provider manifest."""


class ProviderMismatchError(RagcapError):
    """Query and store come from different embedding providers."""


class CorruptIndexError(RagcapError):
    """An index file failed checksum or structural validation."""


class EmptyStoreError(RagcapError):
    """The operation requires a store with at least one entry."""


class FrozenStoreError(RagcapError):
    """Mutation was attempted on a frozen store."""


class PromptError(RagcapError):
    """Prompt inputs violate the template contract."""


class UnknownLanguageError(PromptError):
    """Language code is not in the display-name table."""


class TransportError(RagcapError):
    """Provider unreachable after bounded retries."""


class ProviderError(RagcapError):
    """Provider responded, but the response violates the wire contract."""


class BatchQueryError(RagcapError):
    """A batched operation failed for one of its members."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"query {index}: {cause}")
        self.index = index
        self.cause = cause


class PipelineStageError(RagcapError):
    """A pipeline stage failed; carries the stage label and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
