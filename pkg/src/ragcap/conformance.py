"""Provider protocol conformance checks.

Runs a battery of black-box checks against any provider object (the mock,
an HTTP client, or a remote service behind one) and reports one result per
check. The CLI exposes this as ``ragcap conformance`` so an independently
implemented provider service can be validated against the engine's
expectations before it is used for real runs.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .gateway import GenerationParams


@dataclass(frozen=True, slots=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + tag
        + data
        + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
    )


def tiny_png(rgb: tuple[int, int, int] = (128, 64, 200), size: int = 2) -> bytes:
    """A minimal valid PNG, handy as a deterministic image payload."""
    row = b"\x00" + bytes(rgb) * size
    header = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", header)
        + _png_chunk(b"IDAT", zlib.compress(row * size))
        + _png_chunk(b"IEND", b"")
    )


_SAMPLE_TEXTS = [
    "a dog runs across a field",
    "two people sit at a table",
    "a red boat on a calm lake",
]

_SAMPLE_PROMPT = (
    "I am an intelligent image captioning bot. Similar images have the "
    "following captions: a dog runs across a field</s> a brown dog plays "
    "outside</s> A creative short caption I can generate to describe this "
    "image in english is:"
)


def run_conformance(provider) -> list[CheckResult]:
    """Execute all protocol checks; never raises, failures become results."""
    results: list[CheckResult] = []

    def check(name: str, fn) -> None:
        try:
            detail = fn()
            results.append(CheckResult(name, True, detail or ""))
        except Exception as exc:
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))

    def manifest_stable():
        first = provider.provider_manifest()
        second = provider.provider_manifest()
        assert first == second, f"{first} != {second}"
        return f"provider_id={first.provider_id}"

    def manifest_dimension():
        manifest = provider.provider_manifest()
        emb = provider.embed_texts(["a"])[0]
        assert emb.dimension == manifest.embedding_dimension, (
            f"embedding dimension {emb.dimension} != manifest "
            f"{manifest.embedding_dimension}"
        )
        return f"dimension={manifest.embedding_dimension}"

    def unit_norm_texts():
        for emb in provider.embed_texts(_SAMPLE_TEXTS):
            norm = float(np.linalg.norm(np.asarray(emb.values, dtype=np.float64)))
            assert abs(norm - 1.0) <= 1e-4, f"norm {norm}"
        return ""

    def unit_norm_image():
        emb = provider.embed_image(tiny_png())
        norm = float(np.linalg.norm(np.asarray(emb.values, dtype=np.float64)))
        assert abs(norm - 1.0) <= 1e-4, f"norm {norm}"
        return ""

    def embedding_determinism():
        pair = provider.embed_texts(["a dog", "a dog"])
        assert np.array_equal(pair[0].values, pair[1].values), "in-batch mismatch"
        again = provider.embed_texts(["a dog"])[0]
        assert np.allclose(pair[0].values, again.values, atol=1e-6), "cross-call drift"
        return ""

    def exactly_c_candidates():
        for c in (1, 3):
            params = GenerationParams(num_candidates=c, beam_size=max(c, 3))
            candidates = provider.generate(_SAMPLE_PROMPT, params)
            assert len(candidates) == c, f"got {len(candidates)} for c={c}"
        return ""

    def scores_non_increasing():
        params = GenerationParams(num_candidates=3, beam_size=3)
        candidates = provider.generate(_SAMPLE_PROMPT, params)
        scores = [cand.score for cand in candidates]
        assert all(a >= b for a, b in zip(scores, scores[1:])), f"scores {scores}"
        return ""

    def stop_token_truncation():
        manifest = provider.provider_manifest()
        params = GenerationParams(
            num_candidates=3, beam_size=3, stop_token=manifest.eos_token
        )
        for cand in provider.generate(_SAMPLE_PROMPT, params):
            assert manifest.eos_token not in cand.text, f"stop token in {cand.text!r}"
        return ""

    check("manifest-stable", manifest_stable)
    check("manifest-dimension", manifest_dimension)
    check("unit-norm-texts", unit_norm_texts)
    check("unit-norm-image", unit_norm_image)
    check("embedding-determinism", embedding_determinism)
    check("exactly-c-candidates", exactly_c_candidates)
    check("scores-non-increasing", scores_non_increasing)
    check("stop-token-truncation", stop_token_truncation)
    return results
