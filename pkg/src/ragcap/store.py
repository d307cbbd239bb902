"""Caption datastore: ingestion, embedding storage, and the binary index file.

The store holds one unit-normalized float32 vector per caption. Vectors are
kept in little-endian row-major order so the on-disk checksum is reproducible
across platforms. A frozen store is immutable and safe for concurrent readers;
searching happens in :mod:`ragcap.search`.

Index file layout (version 1):

    magic b"RAGC" | version u16 LE | manifest (u32 LE length + UTF-8 JSON)
    | vector block (count * dimension * f32 LE) | entry block (u32 LE length
    + UTF-8 JSON array) | 8-byte checksum trailer

The manifest's ``checksum`` field is the SHA-256 of the vector block; the
trailer is the first 8 bytes of the SHA-256 over the structural blocks
(header, manifest, entry block). Together they reject any truncation or
bit flip at load time while hashing each large block exactly once.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    CorruptIndexError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    EmptyStoreError,
    FrozenStoreError,
    IngestError,
    ProviderMismatchError,
)

INDEX_MAGIC = b"RAGC"
INDEX_VERSION = 1

# Captions without a precomputed vector are embedded through the provider
# gateway in chunks of this size.
EMBED_BATCH_SIZE = 256


@dataclass(frozen=True, slots=True)
class DatastoreEntry:
    """One caption with its language tag, corpus tag, and dense id."""

    id: int
    text: str
    language: str
    source: str


@dataclass(frozen=True, eq=False, slots=True)
class Embedding:
    """A unit-normalized float32 vector plus its pre-normalization norm."""

    values: np.ndarray
    norm: float

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, slots=True)
class StoreManifest:
    """Provenance header stored inside the binary index."""

    dimension: int
    count: int
    provider_id: str
    created_at: str
    checksum: str

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "count": self.count,
            "provider_id": self.provider_id,
            "created_at": self.created_at,
            "checksum": self.checksum,
        }


def normalize(vector) -> Embedding:
    """Scale a raw vector to unit Euclidean norm.

    Raises DegenerateEmbeddingError for zero or non-finite input; direction
    is preserved and the original norm is retained for diagnostics.
    """
    arr = np.asarray(vector, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateEmbeddingError("degenerate embedding")
    unit = (arr / norm).astype(np.float32)
    return Embedding(values=unit, norm=norm)


def _timestamp() -> str:
    """ISO timestamp; honors SOURCE_DATE_EPOCH for reproducible artifacts."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = float(epoch) if epoch else time.time()
    return datetime.fromtimestamp(moment, tz=timezone.utc).isoformat()


class CaptionStore:
    """Append-only caption datastore with a freeze-then-read lifecycle."""

    def __init__(self, dimension: int, provider_id: str, provider=None):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self._dimension = int(dimension)
        self._provider_id = provider_id
        self._provider = provider
        self._entries: list[DatastoreEntry] = []
        self._rows: list[np.ndarray] = []
        self._frozen = False
        self._matrix: np.ndarray | None = None
        self._matrix64: np.ndarray | None = None
        self._loaded_manifest: StoreManifest | None = None

    @classmethod
    def for_provider(cls, provider) -> "CaptionStore":
        """Create a store bound to a provider gateway's embedding space."""
        manifest = provider.provider_manifest()
        return cls(manifest.embedding_dimension, manifest.provider_id, provider=provider)

    # -- introspection -------------------------------------------------

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def provider_id(self) -> str:
        return self._provider_id

    @property
    def count(self) -> int:
        return len(self._entries)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def entries(self) -> tuple[DatastoreEntry, ...]:
        return tuple(self._entries)

    def entry(self, entry_id: int) -> DatastoreEntry:
        return self._entries[entry_id]

    @property
    def loaded_manifest(self) -> StoreManifest | None:
        """Manifest read from disk, when this store came from load_index."""
        return self._loaded_manifest

    @property
    def matrix(self) -> np.ndarray:
        """Float32 (count, dimension) vector block; requires a frozen store."""
        if not self._frozen or self._matrix is None:
            raise FrozenStoreError("store must be frozen before reading the matrix")
        return self._matrix

    @property
    def scoring_matrix(self) -> np.ndarray:
        """Float64 copy of the vector block used for drift-free scoring."""
        if self._matrix64 is None:
            self._matrix64 = self.matrix.astype(np.float64)
        return self._matrix64

    # -- construction --------------------------------------------------

    def add(self, text: str, language: str, source: str, vector) -> DatastoreEntry:
        """Append one caption with its raw vector (normalized on the way in)."""
        if self._frozen:
            raise FrozenStoreError("cannot add to a frozen store")
        if not text.strip():
            raise IngestError("caption text is empty")
        emb = vector if isinstance(vector, Embedding) else normalize(vector)
        if emb.dimension != self._dimension:
            raise DimensionMismatchError(
                f"vector has dimension {emb.dimension}, store expects {self._dimension}"
            )
        entry = DatastoreEntry(
            id=len(self._entries), text=text, language=language.lower(), source=source
        )
        self._entries.append(entry)
        self._rows.append(emb.values)
        return entry

    def ingest_captions(
        self, path, format: str, source_tag: str, language: str
    ) -> int:
        """Load captions from a corpus file, appending with dense ids.

        ``jsonl`` expects one object per line with a required ``text`` field
        and optional ``language`` / ``embedding`` fields. ``coco-json``
        expects a JSON document with an ``annotations`` array of objects
        carrying a ``caption`` field. Records without a precomputed embedding
        are embedded through the bound provider in batches.
        """
        if self._frozen:
            raise FrozenStoreError("cannot ingest into a frozen store")
        path = Path(path)
        if format == "jsonl":
            records = self._parse_jsonl(path, language)
        elif format == "coco-json":
            records = self._parse_coco_json(path, language)
        else:
            raise ValueError(f"unknown ingestion format {format!r}")
        if not records:
            raise IngestError("no captions ingested")

        pending = [i for i, rec in enumerate(records) if rec[2] is None]
        if pending:
            if self._provider is None:
                raise IngestError(
                    "records lack embeddings and the store has no provider gateway"
                )
            for start in range(0, len(pending), EMBED_BATCH_SIZE):
                chunk = pending[start : start + EMBED_BATCH_SIZE]
                embs = self._provider.embed_texts([records[i][0] for i in chunk])
                for i, emb in zip(chunk, embs):
                    records[i] = (records[i][0], records[i][1], emb)

        added = 0
        for text, lang, emb in records:
            self.add(text, lang, source_tag, emb)
            added += 1
        return added

    def _parse_jsonl(self, path: Path, default_language: str):
        records = []
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "text" not in obj:
                raise IngestError(f"line {lineno}: expected an object with a 'text' field")
            text = obj["text"]
            if not isinstance(text, str) or not text.strip():
                raise IngestError(f"line {lineno}: caption text is empty")
            lang = obj.get("language") or default_language
            emb = None
            if "embedding" in obj and obj["embedding"] is not None:
                vec = obj["embedding"]
                if not isinstance(vec, list) or len(vec) != self._dimension:
                    raise IngestError(
                        f"line {lineno}: embedding must be a list of {self._dimension} numbers"
                    )
                try:
                    emb = normalize(vec)
                except DegenerateEmbeddingError as exc:
                    raise IngestError(f"line {lineno}: {exc}") from exc
            records.append((text, lang, emb))
        return records

    def _parse_coco_json(self, path: Path, language: str):
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise IngestError(f"invalid JSON: {exc.msg}") from exc
        annotations = data.get("annotations") if isinstance(data, dict) else None
        if not isinstance(annotations, list):
            raise IngestError("expected an 'annotations' array")
        records = []
        for idx, ann in enumerate(annotations):
            if not isinstance(ann, dict) or not isinstance(ann.get("caption"), str):
                raise IngestError(f"annotation {idx}: missing 'caption' string")
            text = ann["caption"]
            if not text.strip():
                raise IngestError(f"annotation {idx}: caption text is empty")
            records.append((text, language, None))
        return records

    def freeze(self) -> None:
        """Stack rows into the immutable vector block; idempotent."""
        if self._frozen:
            return
        if self._rows:
            self._matrix = np.vstack(self._rows).astype("<f4", copy=False)
        else:
            self._matrix = np.zeros((0, self._dimension), dtype="<f4")
        self._rows = []
        self._frozen = True

    # -- provenance ----------------------------------------------------

    def check_query_provider(self, provider_id: str) -> None:
        if provider_id != self._provider_id:
            raise ProviderMismatchError(
                f"store was built with provider {self._provider_id!r}, "
                f"query comes from {provider_id!r}"
            )

    def content_hash(self) -> str:
        """Canonical content hash, invariant under insertion order.

        Records are hashed in sorted order so two stores holding the same
        captions and vectors hash identically regardless of ingestion order.
        """
        if not self._frozen:
            raise FrozenStoreError("freeze the store before hashing")
        digest = hashlib.sha256()
        digest.update(
            f"ragcap-store:{self._dimension}:{self._provider_id}:{self.count}".encode("utf-8")
        )
        mat = self.matrix
        records = sorted(
            (e.text, e.language, e.source, mat[e.id].tobytes()) for e in self._entries
        )
        for text, language, source, row in records:
            for field in (text.encode("utf-8"), language.encode("utf-8"),
                          source.encode("utf-8"), row):
                digest.update(struct.pack("<I", len(field)))
                digest.update(field)
        return digest.hexdigest()

    # -- persistence ---------------------------------------------------

    def save_index(self, path) -> StoreManifest:
        """Serialize the store to the binary index format; freezes the store."""
        if self.count == 0:
            raise EmptyStoreError("cannot save an empty store")
        self.freeze()
        matrix = np.ascontiguousarray(self.matrix, dtype="<f4")
        manifest = StoreManifest(
            dimension=self._dimension,
            count=self.count,
            provider_id=self._provider_id,
            created_at=_timestamp(),
            checksum=hashlib.sha256(matrix).hexdigest(),
        )
        manifest_json = json.dumps(manifest.to_dict(), ensure_ascii=False).encode("utf-8")
        entries_json = json.dumps(
            [
                {"id": e.id, "text": e.text, "language": e.language, "source": e.source}
                for e in self._entries
            ],
            ensure_ascii=False,
        ).encode("utf-8")

        head = (
            INDEX_MAGIC
            + struct.pack("<H", INDEX_VERSION)
            + struct.pack("<I", len(manifest_json))
            + manifest_json
        )
        tail = struct.pack("<I", len(entries_json)) + entries_json
        trailer = hashlib.sha256(head + tail).digest()[:8]
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(head)
            fh.write(memoryview(matrix).cast("B"))
            fh.write(tail)
            fh.write(trailer)
        tmp.replace(path)
        return manifest

    @classmethod
    def load_index(
        cls, path, expected_dimension: int | None = None,
        expected_provider_id: str | None = None,
    ) -> "CaptionStore":
        """Read an index file back into a frozen store, verifying checksums."""
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
        view = memoryview(data)
        if len(data) < 4 + 2 + 4 + 8 or data[:4] != INDEX_MAGIC:
            raise CorruptIndexError("corrupt index")
        try:
            (version,) = struct.unpack_from("<H", data, 4)
            if version != INDEX_VERSION:
                raise CorruptIndexError(f"unsupported index version {version}")
            offset = 6
            (mlen,) = struct.unpack_from("<I", data, offset)
            offset += 4
            manifest_raw = json.loads(bytes(view[offset : offset + mlen]).decode("utf-8"))
            head_end = offset + mlen
            manifest = StoreManifest(**manifest_raw)
            vec_len = manifest.count * manifest.dimension * 4
            vec_view = view[head_end : head_end + vec_len]
            if len(vec_view) != vec_len:
                raise CorruptIndexError("corrupt index")
            tail_start = head_end + vec_len
            (elen,) = struct.unpack_from("<I", data, tail_start)
            entries_raw = json.loads(
                bytes(view[tail_start + 4 : tail_start + 4 + elen]).decode("utf-8")
            )
            if tail_start + 4 + elen != len(data) - 8:
                raise CorruptIndexError("corrupt index")
        except (struct.error, json.JSONDecodeError, UnicodeDecodeError, TypeError) as exc:
            raise CorruptIndexError("corrupt index") from exc

        structural = hashlib.sha256()
        structural.update(view[:head_end])
        structural.update(view[tail_start:-8])
        if structural.digest()[:8] != data[-8:]:
            raise CorruptIndexError("corrupt index")
        if hashlib.sha256(vec_view).hexdigest() != manifest.checksum:
            raise CorruptIndexError("corrupt index")
        if expected_dimension is not None and manifest.dimension != expected_dimension:
            raise DimensionMismatchError(
                f"index has dimension {manifest.dimension}, expected {expected_dimension}"
            )
        if expected_provider_id is not None and manifest.provider_id != expected_provider_id:
            raise ProviderMismatchError(
                f"index was built with provider {manifest.provider_id!r}, "
                f"expected {expected_provider_id!r}"
            )

        store = cls(manifest.dimension, manifest.provider_id)
        if len(entries_raw) != manifest.count:
            raise CorruptIndexError("corrupt index")
        for i, raw in enumerate(entries_raw):
            entry = DatastoreEntry(
                id=raw["id"], text=raw["text"], language=raw["language"], source=raw["source"]
            )
            if entry.id != i:
                raise CorruptIndexError("corrupt index")
            store._entries.append(entry)
        # read-only view over the file bytes; the store is immutable anyway
        store._matrix = np.frombuffer(vec_view, dtype="<f4").reshape(
            manifest.count, manifest.dimension
        )
        store._rows = []
        store._frozen = True
        store._loaded_manifest = manifest
        return store
