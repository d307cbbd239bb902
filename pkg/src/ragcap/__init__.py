"""Retrieval-augmented multilingual image captioning engine."""

__version__ = "0.1.0"

from .gateway import GenerationCandidate, GenerationParams, MockProvider, ProviderManifest
from .metrics import EvalReport, bleu, cider_d, evaluate_run, rouge_l, tokenize
from .pipeline import CaptionResult, PipelineConfig, caption_batch, caption_image, rerank
from .prompts import (
    PromptShot,
    PromptSpec,
    SocraticShot,
    build_retrieval_prompt,
    build_socratic_prompt,
    language_display_name,
)
from .search import RetrievalHit, top_k, top_k_batch
from .store import CaptionStore, DatastoreEntry, Embedding, StoreManifest, normalize

__all__ = [
    "CaptionResult",
    "CaptionStore",
    "DatastoreEntry",
    "Embedding",
    "EvalReport",
    "GenerationCandidate",
    "GenerationParams",
    "MockProvider",
    "PipelineConfig",
    "PromptShot",
    "PromptSpec",
    "ProviderManifest",
    "RetrievalHit",
    "SocraticShot",
    "StoreManifest",
    "bleu",
    "build_retrieval_prompt",
    "build_socratic_prompt",
    "caption_batch",
    "caption_image",
    "cider_d",
    "evaluate_run",
    "language_display_name",
    "normalize",
    "rerank",
    "rouge_l",
    "tokenize",
    "top_k",
    "top_k_batch",
]
