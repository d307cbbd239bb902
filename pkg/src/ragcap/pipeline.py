"""Per-image captioning flow: embed, retrieve, prompt, generate, rerank.

The generation model is image-blind: the only thing that crosses the
generation boundary is the prompt string. The image itself is consumed
twice by the embedding provider, once for retrieval and once for the final
candidate reranking.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from os import cpu_count
from pathlib import Path

import numpy as np

from .errors import PipelineStageError, PromptError, RagcapError
from .gateway import GenerationParams
from .prompts import (
    PromptShot,
    PromptSpec,
    SocraticShot,
    build_retrieval_prompt,
    build_socratic_prompt,
    language_display_name,
)
from .search import top_k
from .store import CaptionStore, Embedding

logger = logging.getLogger(__name__)

TEMPLATES = ("retrieval", "socratic")

# Compact vocabularies for socratic category derivation: the image embedding
# is scored against each phrase and the best matches fill the template.
IMAGE_TYPES = ("photo", "painting", "sketch", "cartoon")
PEOPLE_COUNTS = ("are no people", "is one person", "are two people", "are several people")
PLACES = (
    "kitchen", "beach", "street", "forest", "office", "bathroom", "stadium",
    "mountain", "farm", "park", "restaurant", "bedroom", "harbor", "museum",
    "airport", "market", "desert", "lake", "garden", "bridge",
)
OBJECTS = (
    "dog", "cat", "horse", "car", "bicycle", "boat", "bird", "chair", "table",
    "bottle", "cup", "phone", "laptop", "pizza", "sandwich", "train", "bus",
    "plane", "umbrella", "clock", "book", "flower", "ball", "guitar",
)


@dataclass(frozen=True, slots=True)
class PipelineConfig:
    """Hyperparameters of one captioning run.

    Defaults mirror the reference configuration: 4 retrieved captions,
    3 shots, 3 candidates from a beam of 3.
    """

    k: int = 4
    n: int = 3
    c: int = 3
    beam_size: int = 3
    max_new_tokens: int = 40
    language: str = "en"
    template: str = "retrieval"
    shots: tuple = ()

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if self.c < 1:
            raise ValueError("c must be >= 1")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.template not in TEMPLATES:
            raise ValueError(f"template must be one of {TEMPLATES}")
        if len(self.shots) < self.n:
            raise ValueError(f"need at least {self.n} shots, got {len(self.shots)}")
        expected = PromptShot if self.template == "retrieval" else SocraticShot
        for shot in self.shots[: self.n]:
            if not isinstance(shot, expected):
                raise PromptError(
                    f"template {self.template!r} requires {expected.__name__} shots"
                )
        language_display_name(self.language)


@dataclass(frozen=True, slots=True)
class CandidateScore:
    text: str
    generation_score: float
    rerank_score: float


@dataclass(frozen=True, slots=True)
class ResolvedHit:
    """A retrieval hit with its caption text resolved from the store."""

    entry_id: int
    rank: int
    score: float
    text: str


@dataclass(frozen=True, slots=True)
class CaptionResult:
    """Chosen caption plus full provenance for one image."""

    chosen: str
    chosen_index: int
    candidates: tuple[CandidateScore, ...]
    retrieved: tuple[ResolvedHit, ...]
    prompt: str
    language: str

    def to_json_dict(self) -> dict:
        """Serializable view; embeddings and store-local entry ids omitted."""
        return {
            "language": self.language,
            "chosen": self.chosen,
            "chosen_index": self.chosen_index,
            "candidates": [
                {
                    "text": c.text,
                    "generation_score": c.generation_score,
                    "rerank_score": c.rerank_score,
                }
                for c in self.candidates
            ],
            "retrieved": [
                {"rank": h.rank, "score": h.score, "text": h.text} for h in self.retrieved
            ],
            "prompt": self.prompt,
        }


@dataclass(frozen=True, slots=True, eq=False)
class BatchError:
    index: int
    image: str
    stage: str
    message: str
    cause: Exception | None = None


@dataclass(slots=True)
class BatchResult:
    """Per-image results in input order; failures leave a None placeholder."""

    results: list = field(default_factory=list)
    errors: list = field(default_factory=list)


class _Stage:
    """Wrap failures of one pipeline stage with its label."""

    def __init__(self, label: str):
        self.label = label

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineStageError):
            raise PipelineStageError(self.label, exc) from exc
        return False


def rerank(image_embedding: Embedding, candidates, gateway) -> tuple[list[float], int]:
    """Score candidates by image-text inner product; return scores and argmax.

    Ties go to the lowest index, which preserves beam order.
    """
    texts = list(candidates)
    if not texts:
        raise ValueError("candidates must be non-empty")
    embeddings = gateway.embed_texts(texts)
    query = np.asarray(image_embedding.values, dtype=np.float64)
    scores = [float(query @ np.asarray(e.values, dtype=np.float64)) for e in embeddings]
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return scores, best


def _top_matches(image_vec: np.ndarray, vocabulary, phrases, gateway, count: int) -> list[str]:
    embeddings = gateway.embed_texts(list(phrases))
    scored = [
        (float(image_vec @ np.asarray(e.values, dtype=np.float64)), i)
        for i, e in enumerate(embeddings)
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [vocabulary[i] for _, i in scored[:count]]


def derive_socratic_categories(image_embedding: Embedding, gateway) -> dict:
    """Zero-shot category guesses for the socratic template."""
    vec = np.asarray(image_embedding.values, dtype=np.float64)
    return {
        "image_type": _top_matches(
            vec, IMAGE_TYPES, [f"this is a {t}" for t in IMAGE_TYPES], gateway, 1
        )[0],
        "people_count": _top_matches(
            vec, PEOPLE_COUNTS, [f"there {p}" for p in PEOPLE_COUNTS], gateway, 1
        )[0],
        "places": _top_matches(
            vec, PLACES, [f"a photo taken at a {p}" for p in PLACES], gateway, 3
        ),
        "objects": _top_matches(
            vec, OBJECTS, [f"a photo of a {o}" for o in OBJECTS], gateway, 3
        ),
    }


def caption_image(image, config: PipelineConfig, store: CaptionStore, gateway) -> CaptionResult:
    """Run the full captioning flow for one image."""
    config.validate()
    manifest = gateway.provider_manifest()
    shots = tuple(config.shots[: config.n])
    language_name = language_display_name(config.language)

    with _Stage("retrieve"):
        store.check_query_provider(manifest.provider_id)
        image_embedding = gateway.embed_image(image)
        if config.template == "retrieval":
            hits = top_k(store, image_embedding, config.k)
            resolved = tuple(
                ResolvedHit(
                    entry_id=h.entry_id, rank=h.rank, score=h.score,
                    text=store.entry(h.entry_id).text,
                )
                for h in hits
            )
        else:
            resolved = ()
            categories = derive_socratic_categories(image_embedding, gateway)

    if config.template == "retrieval":
        prompt = build_retrieval_prompt(
            PromptSpec(
                shots=shots,
                query_retrieved=tuple(h.text for h in resolved),
                language_name=language_name,
                separator=manifest.eos_token,
            )
        )
    else:
        prompt = build_socratic_prompt(
            categories["image_type"], categories["people_count"],
            categories["places"], categories["objects"],
            language_name, shots, separator=manifest.eos_token,
        )

    with _Stage("generate"):
        params = GenerationParams(
            num_candidates=config.c,
            beam_size=config.beam_size,
            max_new_tokens=config.max_new_tokens,
            stop_token=manifest.eos_token,
        )
        candidates = gateway.generate(prompt, params)
        texts = []
        for cand in candidates:
            if cand.text:
                texts.append(cand.text)
            elif resolved:
                logger.warning("empty candidate replaced by top retrieved caption")
                texts.append(resolved[0].text)
            else:
                raise PromptError("provider returned an empty candidate")

    with _Stage("rerank"):
        rerank_scores, chosen_index = rerank(image_embedding, texts, gateway)

    return CaptionResult(
        chosen=texts[chosen_index],
        chosen_index=chosen_index,
        candidates=tuple(
            CandidateScore(text=t, generation_score=c.score, rerank_score=s)
            for t, c, s in zip(texts, candidates, rerank_scores)
        ),
        retrieved=resolved,
        prompt=prompt,
        language=config.language,
    )


def caption_batch(
    images, config: PipelineConfig, store: CaptionStore, gateway,
    max_workers: int | None = None,
) -> BatchResult:
    """Caption many images; output order matches input order.

    Failures are isolated per image and collected into the error report.
    """
    images = list(images)
    batch = BatchResult(results=[None] * len(images))
    if not images:
        return batch
    if max_workers is None:
        max_workers = min(8, cpu_count() or 1)

    def run(index: int):
        return caption_image(images[index], config, store, gateway)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {i: pool.submit(run, i) for i in range(len(images))}
    for i, future in futures.items():
        try:
            batch.results[i] = future.result()
        except Exception as exc:
            stage = exc.stage if isinstance(exc, PipelineStageError) else "setup"
            batch.errors.append(
                BatchError(
                    index=i, image=str(images[i]), stage=stage, message=str(exc), cause=exc
                )
            )
    return batch


def load_shots_file(path) -> tuple:
    """Read a shots file: a JSON array of shot objects.

    Retrieval shots carry ``retrieved_texts``; socratic shots carry
    ``image_type`` and friends. Mixing the two shapes is an error.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise RagcapError(f"cannot read shots file {path}: {exc}") from exc
    if not isinstance(data, list):
        raise RagcapError("shots file must contain a JSON array")
    shots = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict):
            raise RagcapError(f"shot {i} is not an object")
        try:
            if "retrieved_texts" in obj:
                shots.append(
                    PromptShot(
                        retrieved_texts=tuple(obj["retrieved_texts"]),
                        target_language=obj["target_language"],
                        target_caption=obj["target_caption"],
                    )
                )
            else:
                shots.append(
                    SocraticShot(
                        image_type=obj.get("image_type", ""),
                        people_count=obj.get("people_count", ""),
                        places=tuple(obj.get("places", ())),
                        objects=tuple(obj.get("objects", ())),
                        target_language=obj["target_language"],
                        target_caption=obj["target_caption"],
                    )
                )
        except KeyError as exc:
            raise RagcapError(f"shot {i} is missing field {exc}") from exc
    kinds = {type(s) for s in shots}
    if len(kinds) > 1:
        raise RagcapError("shots file mixes retrieval and socratic shots")
    return tuple(shots)


def default_shots(template: str = "retrieval") -> tuple:
    """The bundled demonstration set for the given template."""
    name = "default_shots.json" if template == "retrieval" else "default_socratic_shots.json"
    with resources.as_file(resources.files("ragcap.data").joinpath(name)) as path:
        return load_shots_file(path)
