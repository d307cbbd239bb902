"""Deterministic few-shot prompt rendering.

Two template families are supported: the retrieval template, where each
block lists captions of similar images, and the socratic-style template,
where each block names image categories instead. Both share the same
framing sentence and the same open-ended ``... is:`` tail for the query
block. Rendering is pure string concatenation; callers get byte-identical
output for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import PromptError, UnknownLanguageError

HEADER = "I am an intelligent image captioning bot."
DEFAULT_SEPARATOR = "</s>"

# Display names used inside prompts, keyed by lowercase language code.
# Covers the 36 languages of the XM3600 benchmark. Bump the version when
# the table changes so run manifests can record which mapping was active.
LANGUAGE_TABLE_VERSION = 1
LANGUAGE_NAMES = {
    "ar": "arabic",
    "bn": "bengali",
    "cs": "czech",
    "da": "danish",
    "de": "german",
    "el": "greek",
    "en": "english",
    "es": "spanish",
    "fa": "persian",
    "fi": "finnish",
    "fil": "filipino",
    "fr": "french",
    "he": "hebrew",
    "hi": "hindi",
    "hr": "croatian",
    "hu": "hungarian",
    "id": "indonesian",
    "it": "italian",
    "ja": "japanese",
    "ko": "korean",
    "mi": "maori",
    "nl": "dutch",
    "no": "norwegian",
    "pl": "polish",
    "pt": "portuguese",
    "quz": "quechua",
    "ro": "romanian",
    "ru": "russian",
    "sv": "swedish",
    "sw": "swahili",
    "te": "telugu",
    "th": "thai",
    "tr": "turkish",
    "uk": "ukrainian",
    "vi": "vietnamese",
    "zh": "chinese",
}


def language_display_name(code: str) -> str:
    """Map a language code to the lowercase name used inside prompts."""
    try:
        return LANGUAGE_NAMES[code.lower()]
    except KeyError:
        supported = ", ".join(sorted(LANGUAGE_NAMES))
        raise UnknownLanguageError(
            f"unknown language code {code!r}; supported codes: {supported}"
        ) from None


@dataclass(frozen=True, slots=True)
class PromptShot:
    """One worked example: retrieved captions plus a target-language caption."""

    retrieved_texts: tuple[str, ...]
    target_language: str
    target_caption: str

    def __post_init__(self):
        object.__setattr__(self, "retrieved_texts", tuple(self.retrieved_texts))
        if not self.retrieved_texts:
            raise PromptError("shot has no retrieved captions")
        if not self.target_caption:
            raise PromptError("shot has an empty target caption")


@dataclass(frozen=True, slots=True)
class SocraticShot:
    """One worked example for the socratic template: categories plus caption."""

    image_type: str
    people_count: str
    places: tuple[str, ...]
    objects: tuple[str, ...]
    target_language: str
    target_caption: str

    def __post_init__(self):
        object.__setattr__(self, "places", tuple(self.places))
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.target_caption:
            raise PromptError("shot has an empty target caption")


@dataclass(frozen=True, slots=True)
class PromptSpec:
    """Inputs for the retrieval template.

    ``query_retrieved`` must preserve retrieval rank order; the builder never
    reorders it. ``separator`` is the generation model's end-of-sentence
    token as declared by the provider manifest.
    """

    shots: tuple[PromptShot, ...]
    query_retrieved: tuple[str, ...]
    language_name: str
    separator: str = DEFAULT_SEPARATOR

    def __post_init__(self):
        object.__setattr__(self, "shots", tuple(self.shots))
        object.__setattr__(self, "query_retrieved", tuple(self.query_retrieved))


def _retrieval_block(retrieved: Sequence[str], language: str, separator: str) -> str:
    parts = [HEADER, " Similar images have the following captions: "]
    for caption in retrieved:
        parts.append(caption)
        parts.append(separator)
        parts.append(" ")
    parts.append(
        f"A creative short caption I can generate to describe this image in {language} is:"
    )
    return "".join(parts)


def build_retrieval_prompt(spec: PromptSpec) -> str:
    """Render the N-shot retrieval prompt, ending open at the query's ``is:``."""
    if not spec.query_retrieved:
        raise PromptError("query_retrieved must not be empty")
    if not spec.language_name:
        raise PromptError("language_name must not be empty")
    pieces = []
    for shot in spec.shots:
        pieces.append(_retrieval_block(shot.retrieved_texts, shot.target_language, spec.separator))
        pieces.append(f" {shot.target_caption}{spec.separator} ")
    pieces.append(_retrieval_block(spec.query_retrieved, spec.language_name, spec.separator))
    return "".join(pieces)


def _join_options(items: Sequence[str]) -> str:
    items = list(items)
    if len(items) == 1:
        return items[0]
    if len(items) == 2:
        return f"{items[0]} or {items[1]}"
    return ", ".join(items[:-1]) + f", or {items[-1]}"


def _socratic_block(
    image_type: str,
    people_count: str,
    places: Sequence[str],
    objects: Sequence[str],
    language: str,
) -> str:
    sentences = [HEADER]
    if image_type:
        sentences.append(f"This image is a {image_type}.")
    if people_count:
        sentences.append(f"There {people_count}.")
    if places:
        sentences.append(f"I think this photo was taken at a {_join_options(places)}.")
    if objects:
        sentences.append(
            f"I think there might be a {_join_options(objects)} in this "
            f"{image_type or 'image'}."
        )
    sentences.append(
        f"A creative short caption I can generate to describe this image in {language} is:"
    )
    return " ".join(sentences)


def build_socratic_prompt(
    image_type: str,
    people_count: str,
    places: Sequence[str],
    objects: Sequence[str],
    language_name: str,
    shots: Sequence[SocraticShot],
    separator: str = DEFAULT_SEPARATOR,
) -> str:
    """Render the socratic-style categories prompt with N-shot framing."""
    if not language_name:
        raise PromptError("language_name must not be empty")
    pieces = []
    for shot in shots:
        pieces.append(
            _socratic_block(
                shot.image_type, shot.people_count, shot.places, shot.objects,
                shot.target_language,
            )
        )
        pieces.append(f" {shot.target_caption}{separator} ")
    pieces.append(_socratic_block(image_type, people_count, places, objects, language_name))
    return "".join(pieces)
