"""Embedding matrices and per-utterance metadata on disk.

Embedding file layout (little-endian)::

    b"ATKE"  u32 version=1  u32 dim  u64 count  count*dim f32 (row-major)

Utterance ids are kept next to it in ``<path>.ids``, one id per line. The
manifest is JSON lines, one :class:`ManifestRecord` per line, joined to the
embeddings by ``utt_id`` (or by ``row_index`` when the ids file is absent).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"ATKE"
VERSION = 1
HEADER = struct.Struct("<4sIIQ")
PARTITIONS = ("train", "fingerprint", "trial")
CONTENTS = ("co", "nc")
LEVEL_FIELDS = {
    "attack": "attack_id",
    "am": "am_id",
    "vm": "vm_id",
    "am_arch": "am_arch",
    "vm_arch": "vm_arch",
}
LEVELS = tuple(LEVEL_FIELDS)


class EmbeddingFormatError(ValueError):
    """Base class for malformed embedding files."""


class MagicError(EmbeddingFormatError):
    pass


class VersionError(EmbeddingFormatError):
    pass


class TruncationError(EmbeddingFormatError):
    pass


class TrailingDataError(EmbeddingFormatError):
    pass


class NonFiniteError(EmbeddingFormatError):
    pass


class ValidationError(ValueError):
    """Manifest/embedding join failed. ``offenders`` lists the bad ids."""

    def __init__(self, message: str, offenders: Sequence[str] = ()):
        self.offenders = list(offenders)
        if self.offenders:
            shown = ", ".join(self.offenders[:10])
            more = f" (+{len(self.offenders) - 10} more)" if len(self.offenders) > 10 else ""
            message = f"{message}: {shown}{more}"
        super().__init__(message)


@dataclass(frozen=True)
class EmbeddingSet:
    dim: int
    rows: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("embedding dim must be positive")
        rows = np.array(self.rows, dtype=np.float64).reshape(-1, self.dim)
        ids = tuple(str(i) for i in self.ids)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "ids", ids)
        if rows.shape[0] != len(ids):
            raise ValueError(f"{rows.shape[0]} rows but {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise ValueError("embedding ids must be unique")
        if not np.all(np.isfinite(rows)):
            raise NonFiniteError("embedding values must be finite")

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.ids == other.ids
            and np.array_equal(self.rows, other.rows)
        )

    def index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.ids)}


def encode_embeddings(rows: np.ndarray, dim: int) -> bytes:
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, dim)
    if not np.all(np.isfinite(rows)):
        raise NonFiniteError("refusing to write non-finite embedding values")
    if rows.size and np.max(np.abs(rows)) > np.finfo(np.float32).max:
        raise NonFiniteError("values overflow float32")
    as32 = rows.astype("<f4")
    return HEADER.pack(MAGIC, VERSION, dim, rows.shape[0]) + as32.tobytes(order="C")


def decode_embeddings(data: bytes) -> np.ndarray:
    """Parse an embedding payload to a (count, dim) float64 array."""
    if len(data) < HEADER.size:
        if data[: len(MAGIC)] != MAGIC[: len(data)]:
            raise MagicError("bad magic")
        raise TruncationError(f"header needs {HEADER.size} bytes, got {len(data)}")
    magic, version, dim, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    if dim == 0:
        raise EmbeddingFormatError("dim must be positive")
    need = count * dim * 4
    have = len(data) - HEADER.size
    if have < need:
        raise TruncationError(f"payload needs {need} bytes, got {have}")
    if have > need:
        raise TrailingDataError(f"{have - need} trailing bytes after payload")
    rows = np.frombuffer(data, dtype="<f4", offset=HEADER.size, count=count * dim)
    rows = rows.astype(np.float64).reshape(count, dim)
    if not np.all(np.isfinite(rows)):
        raise NonFiniteError("payload contains NaN or infinity")
    return rows


def ids_path(path) -> Path:
    return Path(str(path) + ".ids")


def write_embeddings(emb: EmbeddingSet, path) -> None:
    for u in emb.ids:
        if not u or "\n" in u or "\r" in u:
            raise ValueError(f"utterance id {u!r} cannot be stored one per line")
    payload = encode_embeddings(emb.rows, emb.dim)
    Path(path).write_bytes(payload)
    ids_path(path).write_text("".join(u + "\n" for u in emb.ids), encoding="utf-8")


def read_embeddings(path) -> EmbeddingSet:
    """Read an embedding file. Without a ``.ids`` sidecar, ids are row indices as strings."""
    data = Path(path).read_bytes()
    rows = decode_embeddings(data)
    dim = HEADER.unpack_from(data)[2]
    side = ids_path(path)
    if side.exists():
        ids = side.read_text(encoding="utf-8").splitlines()
        if len(ids) != rows.shape[0]:
            raise ValidationError(f"{side} has {len(ids)} ids for {rows.shape[0]} rows")
    else:
        ids = [str(i) for i in range(rows.shape[0])]
    return EmbeddingSet(dim, rows, tuple(ids))


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    attack_id: str
    am_id: str
    vm_id: str
    am_arch: str
    vm_arch: str
    speaker_id: str
    partition: str
    content: str
    row_index: int | None = None

    def __post_init__(self):
        for f in fields(self)[:9]:
            v = getattr(self, f.name)
            if not isinstance(v, str) or not v:
                raise ValidationError(f"manifest field {f.name} must be a non-empty string", [str(self.utt_id)])
        if self.partition not in PARTITIONS:
            raise ValidationError(f"unknown partition {self.partition!r}", [self.utt_id])
        if self.content not in CONTENTS:
            raise ValidationError(f"unknown content flag {self.content!r}", [self.utt_id])

    def level_id(self, level: str) -> str:
        """Identifier of this utterance's source at an attribution level."""
        return getattr(self, LEVEL_FIELDS[level])

    def to_json(self) -> str:
        d = asdict(self)
        if d["row_index"] is None:
            del d["row_index"]
        return json.dumps(d, sort_keys=True)


def write_manifest(records: Iterable[ManifestRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                records.append(ManifestRecord(**d))
            except ValidationError:
                raise
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad manifest line ({exc})") from exc
    return records


@dataclass(frozen=True)
class ValidatedDataset:
    """Manifest joined to embeddings; ``records[i]`` describes ``embeddings.rows[i]``."""

    embeddings: EmbeddingSet
    records: tuple[ManifestRecord, ...]

    @property
    def dim(self) -> int:
        return self.embeddings.dim

    def by_id(self) -> dict[str, int]:
        return {r.utt_id: i for i, r in enumerate(self.records)}

    def vectors(self, utt_ids: Sequence[str]) -> np.ndarray:
        idx = self.by_id()
        return self.embeddings.rows[[idx[u] for u in utt_ids]]


def validate_manifest(records: Sequence[ManifestRecord], emb: EmbeddingSet) -> ValidatedDataset:
    seen: dict[str, int] = {}
    dups = []
    for r in records:
        if r.utt_id in seen:
            dups.append(r.utt_id)
        seen[r.utt_id] = seen.get(r.utt_id, 0) + 1
    if dups:
        raise ValidationError("duplicate utt_id in manifest", sorted(set(dups)))

    if records and all(r.row_index is not None for r in records):
        rows = [r.row_index for r in records]
        bad = [r.utt_id for r in records if not 0 <= r.row_index < len(emb)]
        if bad:
            raise ValidationError("row_index outside the embedding matrix", bad)
        if len(set(rows)) != len(rows):
            raise ValidationError("row_index used twice", [r.utt_id for r in records if rows.count(r.row_index) > 1])
        if len(rows) != len(emb):
            raise ValidationError("embedding rows without a manifest record",
                                  [str(i) for i in sorted(set(range(len(emb))) - set(rows))])
        order = sorted(records, key=lambda r: r.row_index)
        joined = EmbeddingSet(emb.dim, emb.rows, tuple(r.utt_id for r in order))
        return ValidatedDataset(joined, tuple(order))

    emb_idx = emb.index()
    missing = sorted(u for u in seen if u not in emb_idx)
    if missing:
        raise ValidationError("manifest rows lacking an embedding", missing)
    dangling = sorted(u for u in emb.ids if u not in seen)
    if dangling:
        raise ValidationError("embeddings lacking a manifest record", dangling)
    by_id = {r.utt_id: r for r in records}
    return ValidatedDataset(emb, tuple(by_id[u] for u in emb.ids))


def load_dataset(embeddings_path, manifest_path) -> ValidatedDataset:
    return validate_manifest(read_manifest(manifest_path), read_embeddings(embeddings_path))

