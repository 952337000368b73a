"""Per-attack fingerprint: the plain mean of the enrollment embeddings."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import ContractError
from .store import EmbeddingSet, ValidationError, read_embeddings, write_embeddings


@dataclass(frozen=True)
class Fingerprint:
    attack_id: str
    vector: np.ndarray
    r: int
    content: str


def mean_embedding(vectors) -> np.ndarray:
    """Component-wise mean, independent of row order.

    Deviations from the column-wise minimum are summed with ``math.fsum`` so
    the result does not depend on the order of the rows and ``r`` copies of a
    vector average back to that vector exactly.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("need a non-empty list of equal-length vectors")
    base = x.min(axis=0)
    dev = x - base
    r = x.shape[0]
    return base + np.array([math.fsum(col) for col in dev.T]) / r


def build_fingerprint(embeddings: Sequence, attack_id: str, content: str) -> Fingerprint:
    if len(embeddings) == 0:
        raise ContractError("cannot build a fingerprint from zero embeddings")
    dims = {len(np.ravel(e)) for e in embeddings}
    if len(dims) != 1:
        raise ContractError(f"embedding dims differ: {sorted(dims)}")
    x = np.array([np.ravel(e) for e in embeddings], dtype=np.float64)
    vec = mean_embedding(x)
    if not np.all(np.isfinite(vec)):
        raise ContractError("fingerprint is not finite")
    return Fingerprint(attack_id, vec, x.shape[0], content)


def write_bank(fingerprints: Sequence[Fingerprint], path) -> None:
    """Vectors go to ``path`` (embedding format, ids = attack ids); metadata to ``path.json``."""
    fps = sorted(fingerprints, key=lambda f: f.attack_id)
    dim = len(fps[0].vector)
    write_embeddings(EmbeddingSet(dim, np.array([f.vector for f in fps]), tuple(f.attack_id for f in fps)), path)
    meta = [{"attack_id": f.attack_id, "r": f.r, "content": f.content} for f in fps]
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_bank(path) -> dict[str, Fingerprint]:
    emb = read_embeddings(path)
    meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    by_attack = {m["attack_id"]: m for m in meta}
    if set(by_attack) != set(emb.ids):
        raise ValidationError("fingerprint bank metadata does not match vectors",
                              sorted(set(by_attack) ^ set(emb.ids)))
    return {
        a: Fingerprint(a, emb.rows[i].copy(), int(by_attack[a]["r"]), by_attack[a]["content"])
        for i, a in enumerate(emb.ids)
    }
