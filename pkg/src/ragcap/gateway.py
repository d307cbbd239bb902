"""Uniform client for external model capabilities.

Providers expose four capabilities over JSON/HTTP: text embedding, image
embedding, prompted generation, and a manifest describing the embedding
space. ``HttpProvider`` speaks that wire protocol with bounded retries;
``MockProvider`` is a pure in-process stand-in that makes full pipeline
runs hermetic and bitwise reproducible.

Mock keying rules (tests rely on these, keep them stable):

* a text embeds as a pseudo-random unit vector seeded by SHA-256 of the
  text itself;
* an image embeds as the text embedding of ``"image:" + sha256(payload)``,
  so a caption equal to that string embeds identically to the image;
* generation parses the retrieved captions and language out of the final
  prompt block, then picks and word-rotates one caption per candidate,
  keyed by SHA-256 of (prompt, language), and appends ``in <language>``
  so the target language visibly steers the output.
"""

from __future__ import annotations

import base64
import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import DimensionMismatchError, ProviderError, TransportError
from .store import Embedding, normalize

_IMAGE_MAGIC = (
    b"\x89PNG\r\n\x1a\n",
    b"\xff\xd8\xff",
    b"GIF87a",
    b"GIF89a",
    b"BM",
    b"RIFF",
)

# Embeddings from any provider must already be unit vectors.
_NORM_TOLERANCE = 1e-4


@dataclass(frozen=True, slots=True)
class ProviderManifest:
    provider_id: str
    embedding_dimension: int
    eos_token: str


@dataclass(frozen=True, slots=True)
class GenerationParams:
    """Decoding controls for the generation endpoint."""

    num_candidates: int = 3
    beam_size: int = 3
    max_new_tokens: int = 40
    stop_token: str = "</s>"

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if not self.stop_token:
            raise ValueError("stop_token must be non-empty")


@dataclass(frozen=True, slots=True)
class GenerationCandidate:
    """One generated caption with its backend score (higher is better)."""

    text: str
    score: float


def _check_image_payload(payload: bytes) -> None:
    if not any(payload.startswith(magic) for magic in _IMAGE_MAGIC):
        raise ProviderError("undecodable image payload")


def _read_image(image) -> bytes:
    if isinstance(image, (bytes, bytearray)):
        return bytes(image)
    return Path(image).read_bytes()


def _finalize_candidates(
    raw: list[tuple[str, float]], params: GenerationParams, prompt: str
) -> list[GenerationCandidate]:
    """Sort, truncate at the stop token, strip any echoed prompt, keep top c."""
    if len(raw) < params.num_candidates:
        raise ProviderError(
            f"provider returned {len(raw)} candidates, expected {params.num_candidates}"
        )
    cleaned = []
    for text, score in raw:
        if text.startswith(prompt):
            text = text[len(prompt):]
        stop = text.find(params.stop_token)
        if stop >= 0:
            text = text[:stop]
        cleaned.append((text.strip(), float(score)))
    cleaned.sort(key=lambda pair: -pair[1])
    return [GenerationCandidate(text=t, score=s) for t, s in cleaned[: params.num_candidates]]


class MockProvider:
    """Deterministic in-process provider for hermetic tests.

    Also records every prompt that crosses the generation boundary so tests
    can assert the generator never sees anything but the prompt string.
    """

    def __init__(self, dimension: int = 64, provider_id: str = "mock-v1",
                 eos_token: str = "</s>"):
        self._dimension = dimension
        self._provider_id = provider_id
        self._eos = eos_token
        self.generate_prompts: list[str] = []

    def provider_manifest(self) -> ProviderManifest:
        return ProviderManifest(
            provider_id=self._provider_id,
            embedding_dimension=self._dimension,
            eos_token=self._eos,
        )

    # -- embeddings ----------------------------------------------------

    def _seed(self, key: str) -> int:
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")

    def _vector(self, key: str) -> Embedding:
        rng = np.random.Generator(np.random.PCG64(self._seed(key)))
        raw = rng.standard_normal(self._dimension)
        return normalize(raw)

    def embed_texts(self, texts: list[str]) -> list[Embedding]:
        if not texts:
            raise ValueError("texts must be non-empty")
        if any(not t for t in texts):
            raise ValueError("texts must not contain empty strings")
        return [self._vector(t) for t in texts]

    def embed_image(self, image) -> Embedding:
        payload = _read_image(image)
        _check_image_payload(payload)
        return self._vector("image:" + hashlib.sha256(payload).hexdigest())

    # -- generation ----------------------------------------------------

    _FALLBACK_SUBJECTS = ("view", "scene", "moment", "landscape", "gathering")
    _FALLBACK_SETTINGS = ("outside", "in a room", "by the water", "on a street", "in a field")

    def _parse_final_block(self, prompt: str) -> tuple[list[str], str]:
        lead = "Similar images have the following captions: "
        tail_marker = "A creative short caption I can generate to describe this image in "
        language = ""
        tail_at = prompt.rfind(tail_marker)
        if tail_at >= 0:
            rest = prompt[tail_at + len(tail_marker):]
            is_at = rest.find(" is:")
            if is_at >= 0:
                language = rest[:is_at]
        captions: list[str] = []
        lead_at = prompt.rfind(lead)
        if lead_at >= 0 and tail_at > lead_at:
            body = prompt[lead_at + len(lead): tail_at]
            captions = [c.strip() for c in body.split(self._eos) if c.strip()]
        return captions, language

    def generate(self, prompt: str, params: GenerationParams) -> list[GenerationCandidate]:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        self.generate_prompts.append(prompt)
        captions, language = self._parse_final_block(prompt)
        key = hashlib.sha256(prompt.encode("utf-8")).hexdigest() + ":" + language
        h = self._seed("gen:" + key)
        raw: list[tuple[str, float]] = []
        for i in range(params.num_candidates):
            if captions:
                base = captions[(h + i) % len(captions)]
                words = base.split()
                rot = (h + i) % len(words)
                text = " ".join(words[rot:] + words[:rot])
            else:
                subject = self._FALLBACK_SUBJECTS[(h + i) % len(self._FALLBACK_SUBJECTS)]
                setting = self._FALLBACK_SETTINGS[(h + i) % len(self._FALLBACK_SETTINGS)]
                text = f"a {subject} {setting}"
            if language:
                text = f"{text} in {language}"
            raw.append((text, 1.0 - 0.125 * i))
        return _finalize_candidates(raw, params, prompt)


class HttpProvider:
    """JSON-over-HTTP provider client with bounded retries.

    Transport failures and 5xx responses are retried with exponential
    backoff (3 attempts starting at 200 ms); 4xx responses and contract
    violations fail hard.
    """

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 3,
                 backoff: float = 0.2, sleep=time.sleep, session=None):
        self._base = base_url.rstrip("/")
        self._timeout = timeout
        self._retries = retries
        self._backoff = backoff
        self._sleep = sleep
        self._session = session or requests.Session()
        self._manifest: ProviderManifest | None = None

    def _request(self, method: str, path: str, payload=None):
        url = self._base + path
        last_error: Exception | None = None
        for attempt in range(self._retries):
            if attempt:
                self._sleep(self._backoff * 2 ** (attempt - 1))
            try:
                response = self._session.request(
                    method, url, json=payload, timeout=self._timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = ProviderError(
                    f"{url} returned {response.status_code}"
                )
                continue
            if response.status_code >= 400:
                raise ProviderError(
                    f"{url} returned {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProviderError(f"{url} returned invalid JSON") from exc
        raise TransportError(f"{url} unreachable after {self._retries} attempts") from last_error

    def provider_manifest(self) -> ProviderManifest:
        if self._manifest is None:
            data = self._request("GET", "/v1/manifest")
            try:
                self._manifest = ProviderManifest(
                    provider_id=data["provider_id"],
                    embedding_dimension=int(data["embedding_dimension"]),
                    eos_token=data["eos_token"],
                )
            except (KeyError, TypeError) as exc:
                raise ProviderError(f"malformed manifest: {data!r}") from exc
        return self._manifest

    def _validate_embedding(self, values, what: str) -> Embedding:
        manifest = self.provider_manifest()
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.shape[0] != manifest.embedding_dimension:
            raise DimensionMismatchError(
                f"{what} has dimension {arr.shape[0]}, manifest declares "
                f"{manifest.embedding_dimension}"
            )
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > _NORM_TOLERANCE:
            raise ProviderError(f"{what} is not unit-normalized (norm {norm:.6f})")
        return normalize(arr)

    def embed_texts(self, texts: list[str]) -> list[Embedding]:
        if not texts:
            raise ValueError("texts must be non-empty")
        if any(not t for t in texts):
            raise ValueError("texts must not contain empty strings")
        data = self._request("POST", "/v1/embed_text", {"texts": list(texts)})
        embeddings = data.get("embeddings")
        if not isinstance(embeddings, list) or len(embeddings) != len(texts):
            raise ProviderError("embed_text response does not match request length")
        return [self._validate_embedding(vec, f"embedding {i}") for i, vec in enumerate(embeddings)]

    def embed_image(self, image) -> Embedding:
        payload = _read_image(image)
        _check_image_payload(payload)
        data = self._request(
            "POST", "/v1/embed_image",
            {"image_b64": base64.b64encode(payload).decode("ascii")},
        )
        if "embedding" not in data:
            raise ProviderError("embed_image response missing 'embedding'")
        return self._validate_embedding(data["embedding"], "image embedding")

    def generate(self, prompt: str, params: GenerationParams) -> list[GenerationCandidate]:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        data = self._request(
            "POST", "/v1/generate",
            {
                "prompt": prompt,
                "num_candidates": params.num_candidates,
                "beam_size": params.beam_size,
                "max_new_tokens": params.max_new_tokens,
                "stop": params.stop_token,
            },
        )
        candidates = data.get("candidates")
        if not isinstance(candidates, list):
            raise ProviderError("generate response missing 'candidates'")
        try:
            raw = [(c["text"], float(c["score"])) for c in candidates]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed candidate in {candidates!r}") from exc
        return _finalize_candidates(raw, params, prompt)


def make_provider(spec: str, **kwargs):
    """Build a provider from a CLI-style spec: ``mock`` or a base URL."""
    if spec == "mock":
        return MockProvider()
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpProvider(spec, **kwargs)
    raise ValueError(f"provider must be 'mock' or an http(s) URL, got {spec!r}")
