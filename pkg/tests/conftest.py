import json
from pathlib import Path

import pytest

from ragcap.conformance import tiny_png
from ragcap.gateway import MockProvider
from ragcap.store import CaptionStore

FIXTURES = Path(__file__).parent / "fixtures"

FIXTURE_CAPTIONS = [
    "a dog runs across a grassy field",
    "a brown dog plays with a ball",
    "two people ride bicycles down the street",
    "a red boat floats on a calm lake",
    "a plate of pasta with tomato sauce",
    "a cat sleeps on a sunny windowsill",
    "a group of children play soccer in a park",
    "a train crosses a long steel bridge",
    "mountains covered in snow under a blue sky",
    "a man rides a horse along the beach",
    "a bowl of fresh fruit on a wooden table",
    "a city street at night with bright lights",
]


@pytest.fixture
def mock_provider():
    return MockProvider()


def build_store(provider, captions=FIXTURE_CAPTIONS, language="en", source="fixture"):
    store = CaptionStore.for_provider(provider)
    embeddings = provider.embed_texts(list(captions))
    for text, emb in zip(captions, embeddings):
        store.add(text, language, source, emb)
    store.freeze()
    return store


@pytest.fixture
def fixture_store(mock_provider):
    return build_store(mock_provider)


def write_jsonl(path, records):
    path = Path(path)
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
        encoding="utf-8",
    )
    return path


def write_captions_jsonl(path, texts, language="en"):
    return write_jsonl(path, [{"text": t, "language": language} for t in texts])


def write_image(path, rgb=(10, 20, 30)):
    path = Path(path)
    path.write_bytes(tiny_png(rgb=rgb))
    return path
